"""Small-signal stability of droop-controlled MMC multi-terminal dc grids."""

from .config import ConfigError, SystemConfig, load_config, parse_config, reference_path, validate
from .assembly import GridSystem, SmallSignalModel
from .dynamics import ConvergenceError, OperatingPoint, solve_equilibrium

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "GridSystem",
    "OperatingPoint",
    "SmallSignalModel",
    "SystemConfig",
    "load_config",
    "parse_config",
    "reference_path",
    "solve_equilibrium",
    "validate",
    "__version__",
]
