"""Disentangled inversion control on toy denoisers: inversion, guided editing,
attention control, metrics and a benchmark harness."""

from .config import EditConfig, build_config
from .inversion import (
    DistancePolicy,
    InversionTrajectory,
    TABLE_POLICIES,
    ddim_edit_baseline,
    dic_edit,
    invert,
    sdedit_baseline,
)
from .numerics import SeededRng, read_dicl, write_dicl
from .schedule import NoiseSchedule, make_schedule

__version__ = "0.1.0"

__all__ = [
    "EditConfig",
    "build_config",
    "DistancePolicy",
    "InversionTrajectory",
    "TABLE_POLICIES",
    "ddim_edit_baseline",
    "dic_edit",
    "invert",
    "sdedit_baseline",
    "SeededRng",
    "read_dicl",
    "write_dicl",
    "NoiseSchedule",
    "make_schedule",
    "__version__",
]
