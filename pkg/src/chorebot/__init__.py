"""Hierarchical skill orchestration over symbolic household scenes."""

from .domain import GoalSpec, HighLevelDecision, SceneState, SkillCommand, UserEvent
from .executor import LatencyModel, LowLevelExecutor
from .orchestrator import EventLog, Session, SessionConfig, detect_gaps, run_session
from .simenv import TaskCatalog, apply_skill_effect, goal_satisfied, load_task

__version__ = "0.1.0"

__all__ = [
    "EventLog",
    "GoalSpec",
    "HighLevelDecision",
    "LatencyModel",
    "LowLevelExecutor",
    "SceneState",
    "Session",
    "SessionConfig",
    "SkillCommand",
    "TaskCatalog",
    "UserEvent",
    "apply_skill_effect",
    "detect_gaps",
    "goal_satisfied",
    "load_task",
    "run_session",
]
