"""plotkit: offline figures from splab's schema-versioned CSV exports.

The tool knows nothing about the training internals; it consumes only the
exported file contracts (per-metric CSVs, pass@k CSVs, sparsity CSVs and
probe CSVs) and renders deterministic image files.
"""

__version__ = "0.1.0"

from .figures import FIGURE_KINDS, FigureSpec, render  # noqa: F401
