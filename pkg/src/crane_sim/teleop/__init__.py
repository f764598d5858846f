from .cosim import CosimResult, ScriptedEvent, run_cosim
from .session import SessionConfig, TeleopSession
from .workflow import WorkflowRejection, WorkflowState, confirmation_scan

__all__ = [
    "CosimResult", "ScriptedEvent", "run_cosim", "SessionConfig",
    "TeleopSession", "WorkflowRejection", "WorkflowState", "confirmation_scan",
]
