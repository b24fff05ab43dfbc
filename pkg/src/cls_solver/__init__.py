"""Classical solver toolkit for Carleman linearization + Schrodingerization (CLS)
applied to the 1-D nonlinear reaction-diffusion equation."""

from cls_solver.model import (
    SpatialGrid1D,
    ReactionDiffusionParams,
    FieldState,
    PolynomialSystem,
    build_laplacian,
    build_polynomial_system,
    sample_initial,
    eval_nonlinear_rhs,
)
from cls_solver.carleman import (
    CarlemanIndexMap,
    CarlemanOperator,
    CarlemanState,
    kron,
    transfer_block,
    assemble_carleman,
    lift_state,
    project_state,
)
from cls_solver.wpt import (
    HermitianSplit,
    AuxGrid,
    WptOperator,
    WptState,
    RecoverySpec,
    hermitian_split,
    build_aux_grid,
    build_upwind_gradient,
    build_central_gradient,
    assemble_wpt_operator,
    initialize_wpt_state,
    recover_state,
    verify_skew_hermitian,
)
from cls_solver.evolve import (
    TimeGrid,
    StepOperator,
    Trajectory,
    DivergenceError,
    assemble_step,
    step_cls,
    evolve_cls,
    evolve_cl,
    evolve_fdm,
    exact_expm_evolve,
    stability_check,
)
from cls_solver.analysis import (
    ErrorField,
    ConvergenceStudy,
    error_fields,
    scalar_error,
    fit_loglog_slope,
    sweep_truncation,
    sweep_dx,
    sweep_dp,
)

__version__ = "0.1.0"
