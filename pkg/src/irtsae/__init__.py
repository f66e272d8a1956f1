"""Item response calibration, plausible values and area-level small area estimation."""
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
