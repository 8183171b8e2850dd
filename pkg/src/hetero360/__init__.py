"""Power allocation for mixed non-VR / VR 360-degree video downlinks with differentiated-critic PPO."""

from .core import ConfigError, ScenarioConfig, UserProfile, build_scenario, desk_config, load_config
from .env import VideoStreamEnv
from .ppo import TrainerParams, train

__all__ = [
    "ConfigError", "ScenarioConfig", "UserProfile", "build_scenario", "desk_config", "load_config",
    "VideoStreamEnv", "TrainerParams", "train",
]
__version__ = "0.1.0"
