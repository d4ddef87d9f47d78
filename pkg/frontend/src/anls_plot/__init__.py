from .render import KINDS, FigureSpec, PlotError, read_table, render

__all__ = ["KINDS", "FigureSpec", "PlotError", "read_table", "render"]
__version__ = "0.1.0"
