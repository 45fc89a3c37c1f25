"""Publication-style figures from benchmark CSV output directories."""

from .render import FigureSpec, render
from .schema import FIGURE_KINDS, SchemaError

__version__ = "0.1.0"
