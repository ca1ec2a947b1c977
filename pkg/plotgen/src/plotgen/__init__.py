"""Figure rendering for factorflow result tables."""

from .render import FAMILIES, FigureSpec, RenderError, read_results_csv, render

__version__ = "0.1.0"
