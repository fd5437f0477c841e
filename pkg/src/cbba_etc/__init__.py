"""Event-triggered consensus task allocation for heterogeneous search-and-rescue swarms."""

from .world import STRATEGIES, ConfigError, EtcParams, ScenarioConfig
from .engine import run_trial
from .metrics import TrialMetrics

__version__ = "0.1.0"

__all__ = ["STRATEGIES", "ConfigError", "EtcParams", "ScenarioConfig", "TrialMetrics", "run_trial",
           "__version__"]
