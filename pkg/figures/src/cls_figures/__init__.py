from cls_figures.render import (
    FIGURE_KINDS,
    FigureSpec,
    InputError,
    load_csv,
    render,
)

__all__ = [
    "FIGURE_KINDS",
    "FigureSpec",
    "InputError",
    "load_csv",
    "render",
]
