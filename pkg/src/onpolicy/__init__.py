"""Configurable on-policy actor-critic training with a random-search study harness."""
from ._kernels import BACKEND_NAME
from .config import ChoiceConfig, RunSettings, desk_config, load_config, parse_config_text
from .errors import ConfigError, NumericError, UsageError

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME", "ChoiceConfig", "RunSettings", "desk_config", "load_config",
    "parse_config_text", "ConfigError", "NumericError", "UsageError", "__version__",
]
