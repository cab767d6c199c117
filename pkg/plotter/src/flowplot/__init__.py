"""Static figure rendering for refinement traces and threshold grids."""

from .render import PlotError, TraceFigureSpec, load_grid, load_trace, render_grid, render_trace

__version__ = "0.1.0"

__all__ = [
    "PlotError",
    "TraceFigureSpec",
    "load_grid",
    "load_trace",
    "render_grid",
    "render_trace",
    "__version__",
]
