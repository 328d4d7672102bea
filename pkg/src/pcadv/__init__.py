"""Imperceptible adversarial point clouds: attacks, metrics, defenses, evaluation."""
from ._accel import BACKEND
from .geometry import PointCloud

__version__ = "0.1.0"
__all__ = ["BACKEND", "PointCloud", "__version__"]
