"""Online 3D bin packing with physics-aware stability and domain randomization."""

from .env import EnvConfig, EpisodeResult, reset, run_batch, run_episode, step
from .geometry import ContainerState, ItemSpec, Pose
from .policy import HeuristicPolicy, SoftmaxPolicy, make_policy

__all__ = [
    "ContainerState",
    "EnvConfig",
    "EpisodeResult",
    "HeuristicPolicy",
    "ItemSpec",
    "Pose",
    "SoftmaxPolicy",
    "make_policy",
    "reset",
    "run_batch",
    "run_episode",
    "step",
]

__version__ = "0.1.0"
