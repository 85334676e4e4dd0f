"""arvox: coarse-to-fine autoregressive in-context inference for 3D volumes.

The package provides a channel-major float32 volume type with resampling and
stitching primitives, a deterministic coarse-to-fine scale schedule, a
blockwise cross-attention module with a dense scalar oracle, a three-branch
3D U-Net forward pass, the full multi-step inference pipeline, and a CLI.
"""

from .errors import ArvoxError, ConfigError, DataIOError, InvalidArgumentError
from .volume import Region3, Shape3, Volume

__version__ = "0.1.0"

__all__ = [
    "ArvoxError",
    "ConfigError",
    "DataIOError",
    "InvalidArgumentError",
    "Region3",
    "Shape3",
    "Volume",
    "__version__",
]
