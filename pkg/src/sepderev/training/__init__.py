from sepderev.training.config import TrainConfig
from sepderev.training.schedule import PlateauSchedule

__all__ = ["TrainConfig", "PlateauSchedule"]
