"""Object-level change detection between bi-temporal LiDAR point-cloud maps."""

__version__ = "0.1.0"

from .config import Config

__all__ = ["Config", "__version__"]
