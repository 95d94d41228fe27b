"""Interactive video box annotation: visual interpolation plus guided frame selection."""

from .geometry import BoundingBox, CropWindow, Keyframe

__version__ = "0.1.0"

__all__ = ["BoundingBox", "CropWindow", "Keyframe", "__version__"]
