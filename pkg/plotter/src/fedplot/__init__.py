"""Figure generation for federated adapter training metrics CSVs."""

from .render import KINDS, FigureSpec, RenderResult, SchemaError, load_metrics, render

__all__ = [
    "KINDS",
    "FigureSpec",
    "RenderResult",
    "SchemaError",
    "load_metrics",
    "render",
]

__version__ = "0.1.0"
