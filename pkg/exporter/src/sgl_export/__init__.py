"""Export PyTorch checkpoints and predictions into seg-genlab's formats.

This adapter only writes the documented external formats (tensor archive,
16-bit probability PNGs, manifest fragments); it never computes metrics or
averages, and it does not depend on the seg-genlab package itself.
"""

__version__ = "0.1.0"

from .export import ExportError, ExportSpec, export_checkpoint, export_predictions
