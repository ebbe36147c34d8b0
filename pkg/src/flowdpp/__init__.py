"""Flow-map confidence thresholding, drift-plus-penalty model selection, and
a queue-stability simulator for adaptive object detection."""

from .controller import ControllerConfig, ModelChoice
from .policies import PolicyKind
from .sim import ScenarioConfig

__all__ = ["ControllerConfig", "ModelChoice", "PolicyKind", "ScenarioConfig"]
__version__ = "0.1.0"
