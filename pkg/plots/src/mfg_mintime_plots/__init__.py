"""Batch figure rendering for mfg-mintime result bundles."""

from .bundle import Bundle, BundleError, MissingFileError
from .render import (
    render_convergence,
    render_density_filmstrip,
    render_residual_summary,
    render_value_and_paths,
)

__version__ = "0.1.0"
__all__ = [
    "Bundle",
    "BundleError",
    "MissingFileError",
    "render_convergence",
    "render_density_filmstrip",
    "render_residual_summary",
    "render_value_and_paths",
]
