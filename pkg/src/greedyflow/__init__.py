"""Flow-network samplers with value-guided greedy mixing on discrete DAGs."""

from .envs import EnvSpec, State, build_env, enumerate_states
from .gfn import GfnConfig, Trajectory
from .policy import MixVariant, PSchedule, mu_distribution, sample_action, schedule_value
from .qlearn import QConfig
from .trainer import RunState, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "EnvSpec",
    "GfnConfig",
    "MixVariant",
    "PSchedule",
    "QConfig",
    "RunState",
    "State",
    "TrainConfig",
    "Trajectory",
    "build_env",
    "enumerate_states",
    "load_checkpoint",
    "mu_distribution",
    "sample_action",
    "save_checkpoint",
    "schedule_value",
    "train",
    "__version__",
]
