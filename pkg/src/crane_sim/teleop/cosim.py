"""Lockstep virtual-time co-simulation of session + controller.

One loop owns the clock: each millisecond the scripted operator events due
for dispatch are applied, the session emits wire bytes, the controller
ticks, and feedback flows back, all through latency-modeled links.  The
confirmation scanner reads the *physical* (plant) state of the simulated
robot, which is exactly what a CT scan of the phantom would see; telemetry
still only ever derives from feedback frames.
"""

from dataclasses import dataclass, field

import numpy as np

from ..control import (CONTROL_PERIOD_NS, ControllerSim, NetworkFaults,
                       VirtualLink, check_invariants)
from ..kinematics import forward_kinematics, JOINT_LOWER, JOINT_UPPER
from .session import TELEMETRY_PERIOD_MS, TeleopSession
from .workflow import WorkflowState


@dataclass(frozen=True)
class ScriptedEvent:
    """Operator message dispatched at the first tick >= t_ms whose workflow
    state matches await_state (if given)."""

    t_ms: int
    msg: dict
    await_state: str | None = None


@dataclass
class CosimResult:
    reached: WorkflowState
    session: TeleopSession
    telemetry: list
    snapshots: list
    violations: list
    ticks: int

    @property
    def ok(self) -> bool:
        return not self.violations


def run_cosim(session: TeleopSession,
              controller: ControllerSim,
              script: list[ScriptedEvent],
              max_duration_s: float = 120.0,
              terminal: WorkflowState | None = WorkflowState.TARGET_REACHED,
              faults: NetworkFaults = NetworkFaults(),
              settle_ticks: int = 50,
              keep_every: int = 10) -> CosimResult:
    """Run until the terminal workflow state (plus a settle margin) or until
    the tick budget runs out.  Fully deterministic for a fixed scenario."""
    to_ctrl = VirtualLink(faults.seed, faults.latency_ns, faults.jitter_ns,
                          faults.drop_rate)
    to_sess = VirtualLink(faults.seed + 1, faults.latency_ns, faults.jitter_ns,
                          faults.drop_rate)
    session.hb_outage_ms = faults.hb_outage_ms
    if session.scan_provider is None:
        session.scan_provider = lambda: forward_kinematics(
            np.clip(np.concatenate((controller.x, [controller.driver.depth])),
                    JOINT_LOWER, JOINT_UPPER), session.params)

    script = sorted(script, key=lambda e: e.t_ms)
    pending = list(script)
    telemetry = []
    snapshots = []
    violations = []
    n_ticks = round(max_duration_s * 1000)
    done_at = None

    replies = []
    for k in range(n_ticks):
        t_ns = k * CONTROL_PERIOD_NS
        session.t_ns = t_ns  # operator events log against the dispatch tick

        while pending and pending[0].t_ms <= k:
            ev = pending[0]
            if ev.await_state is not None and session.state.value != ev.await_state:
                break
            pending.pop(0)
            replies.append((k, session.handle_ui(ev.msg)))

        to_ctrl.send(t_ns, session.on_tick(t_ns))
        ctrl_out, snap = controller.tick(t_ns, to_ctrl.poll(t_ns))
        to_sess.send(t_ns, ctrl_out)
        session.on_controller_bytes(to_sess.poll(t_ns))

        violations.extend(check_invariants(snap, controller.effort_max,
                                           controller.i_clamp))
        if k % keep_every == 0:
            snapshots.append(snap)
        if k % TELEMETRY_PERIOD_MS == 0:
            telemetry.append(session.telemetry())

        if terminal is not None and session.state is terminal and done_at is None:
            done_at = k
        if done_at is not None and k >= done_at + settle_ticks and not pending:
            telemetry.append(session.telemetry())
            break

    violations.extend(session.violations)
    return CosimResult(session.state, session, telemetry, snapshots,
                       violations, k + 1)


@dataclass
class ReplyLog:
    replies: list = field(default_factory=list)
