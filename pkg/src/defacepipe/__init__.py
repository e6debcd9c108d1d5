"""Brain-safe head MRI defacing: atlas registration + brain masking."""

__version__ = "0.1.0"

from .volume import BinaryMask, Volume  # noqa: F401
