"""Multi-UAV mobile edge computing simulator with a clipped-surrogate / adversarial
imitation trainer for joint trajectory control and CPU allocation."""

__version__ = "0.1.0"
