"""Device-profile extraction, disaggregation and state-based load forecasting
from six-channel aggregate power measurements."""

from .core import (
    DeviceProfile,
    PowerSeries,
    StateChangesMatrix,
    densify,
    load_profiles,
    reconstruct,
    save_profiles,
)

__version__ = "0.1.0"

__all__ = [
    "DeviceProfile",
    "PowerSeries",
    "StateChangesMatrix",
    "densify",
    "load_profiles",
    "reconstruct",
    "save_profiles",
]
