"""Figure rendering for tp4dvar experiment artifacts."""

from .plots import KINDS, FigureSpec, build, plot
from .schema import SchemaError

__all__ = ["KINDS", "FigureSpec", "SchemaError", "build", "plot"]

__version__ = "0.1.0"
