"""Clinical workflow state machine and the simulated confirmation scan.

Six procedure phases: calibrate against the preliminary scan, pick a
target and optimize the setup configuration, review/confirm, execute the
approach trajectory, iterate teleoperation + imaging, done.  Transitions
are explicit and everything else is rejected with the state name.
"""

import enum
import math

import numpy as np

from ..kinematics import NeedlePose


class WorkflowState(enum.Enum):
    CALIBRATE = "CALIBRATE"
    PLAN_SETUP = "PLAN_SETUP"
    REVIEW = "REVIEW"
    MOVE_TO_SETUP = "MOVE_TO_SETUP"
    TELEOP_ITERATE = "TELEOP_ITERATE"
    TARGET_REACHED = "TARGET_REACHED"


class WorkflowRejection(RuntimeError):
    def __init__(self, event: str, state: WorkflowState, why: str = ""):
        self.event = event
        self.state = state
        detail = f": {why}" if why else ""
        super().__init__(f"event {event!r} not allowed in {state.value}{detail}")


# which operator events each state accepts (service-side gating; the UI
# mirrors this table to disable controls)
ALLOWED_EVENTS = {
    WorkflowState.CALIBRATE: {"calibrate", "estop", "clear_fault"},
    WorkflowState.PLAN_SETUP: {"set_target", "estop", "clear_fault"},
    WorkflowState.REVIEW: {"confirm_setup", "reject_setup", "set_target",
                           "estop", "clear_fault", "enable"},
    WorkflowState.MOVE_TO_SETUP: {"estop", "clear_fault"},
    WorkflowState.TELEOP_ITERATE: {"jog", "insert", "retract", "request_scan",
                                   "set_target", "estop", "clear_fault", "enable"},
    WorkflowState.TARGET_REACHED: {"estop", "clear_fault", "request_scan"},
}


def check_event_allowed(event: str, state: WorkflowState) -> None:
    if event not in ALLOWED_EVENTS[state]:
        raise WorkflowRejection(event, state)


def confirmation_scan(true_pose: NeedlePose, rng: np.random.Generator,
                      sigma_pos_m: float = 0.3e-3,
                      sigma_axis_deg: float = 0.3) -> NeedlePose:
    """Simulated CT measurement of the needle: true pose plus seeded noise.

    Position gets isotropic zero-mean Gaussian noise; the axis is tilted by
    a Gaussian angle about a uniformly random transverse direction.
    """
    p = true_pose.p + rng.normal(0.0, sigma_pos_m, size=3)
    u = true_pose.u
    if sigma_axis_deg > 0.0:
        angle = rng.normal(0.0, math.radians(sigma_axis_deg))
        phi = rng.uniform(0.0, 2.0 * math.pi)
        # transverse basis for the tilt direction
        seed = np.zeros(3)
        seed[int(np.argmin(np.abs(u)))] = 1.0
        b1 = seed - (seed @ u) * u
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(u, b1)
        axis = math.cos(phi) * b1 + math.sin(phi) * b2
        c, s = math.cos(angle), math.sin(angle)
        u = c * u + s * np.cross(axis, u)
        u = u / np.linalg.norm(u)
    else:
        u = u.copy()
    return NeedlePose(p, u)
