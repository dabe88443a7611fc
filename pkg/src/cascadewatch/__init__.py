"""Early-exit video anomaly cascade with agent-based health monitoring.

Frames pass through a cheap detector, a reconstruction check and an expensive
semantic stage; most frames stop early. A small in-process bus connects the
monitoring and event agents to the cascade workers and the severity fusion.
"""

from .domain import (
    BENIGN,
    CASE_STUDY_THRESHOLDS,
    AnomalyLabel,
    CascadeResult,
    CustomLabel,
    Frame,
    Stage,
    StageVerdict,
    Thresholds,
)
from .errors import CascadeWatchError, ConfigError

__version__ = "0.1.0"

__all__ = [
    "BENIGN",
    "CASE_STUDY_THRESHOLDS",
    "AnomalyLabel",
    "CascadeResult",
    "CascadeWatchError",
    "ConfigError",
    "CustomLabel",
    "Frame",
    "Stage",
    "StageVerdict",
    "Thresholds",
]
