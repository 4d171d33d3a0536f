"""One-branch transformer tracking on a from-scratch autodiff core."""
from .config import DataConfig, InteractionSchedule, ModelConfig, RunConfig, TrainConfig
from .model import SimTrackModel, init_params

__all__ = ["DataConfig", "InteractionSchedule", "ModelConfig", "RunConfig", "TrainConfig",
           "SimTrackModel", "init_params"]
__version__ = "0.1.0"
