"""Multi-platoon V2V groupcast simulation and value-decomposition Q-learning."""

from .config import ConfigError, ScenarioConfig
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "ScenarioConfig", "__version__"]
