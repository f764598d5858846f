"""The teleoperation master: one session actor owning the workflow.

The session converses with the controller purely through the wire protocol
(bytes in, bytes out) and with the operator console through JSON messages.
All operator-visible geometry is the calibration transform applied to
robot-frame FK of controller feedback; simulator internals never leak into
telemetry.  At most one plan exists per session; a new target supersedes it.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .. import protocol, registration
from ..collision import DEFAULT_SHAPE, RobotShape, Scene
from ..kinematics import (DEFAULT_PARAMS, ChainParams, NeedlePose,
                          forward_kinematics, JOINT_LOWER, JOINT_UPPER)
from ..planning import (ObjectiveWeights, PlanningError, audit_trajectory,
                        optimize_setup_config, plan_path, resolved_rate_step,
                        time_parameterize)
from ..protocol import (Ack, Disable, Enable, Estop, Feedback, Heartbeat,
                        Setpoint, StreamDecoder, encode_frame)
from ..registration import FiducialSet, RigidTransform
from ..safety import SafetyState
from .workflow import (WorkflowRejection, WorkflowState, check_event_allowed,
                       confirmation_scan)

HEARTBEAT_PERIOD_MS = 10
TELEMETRY_PERIOD_MS = 50  # 20 Hz
MS = 1_000_000


@dataclass(frozen=True)
class SessionConfig:
    seed: int = 0
    convergence_mm: float = 2.0
    scan_sigma_pos_m: float = 0.3e-3
    scan_sigma_axis_deg: float = 0.3
    setup_standoff_m: float = 0.01
    jog_step_m: float = 0.5e-3
    jog_step_rad: float = 0.01
    jog_speed_m_s: float = 0.01
    jog_speed_rad_s: float = 0.2
    enable_timeout_ms: int = 1000
    settle_tol_rad: float = 0.002
    plan_starts: int = 16
    ascent_iters: int = 20


@dataclass
class PlanResult:
    setup_q: np.ndarray
    trajectory: "object"
    audit: dict
    objective_terms: dict


class TeleopSession:
    """Workflow orchestration + controller link + operator bridge."""

    def __init__(self, scene: Scene, robot_fiducials: np.ndarray,
                 params: ChainParams = DEFAULT_PARAMS,
                 shape: RobotShape = DEFAULT_SHAPE,
                 weights: ObjectiveWeights = ObjectiveWeights(),
                 config: SessionConfig = SessionConfig(),
                 scan_provider=None):
        self.scene = scene                      # scanner frame
        self.robot_fiducials = np.asarray(robot_fiducials, dtype=float)
        self.params = params
        self.shape = shape
        self.weights = weights
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.scan_provider = scan_provider      # () -> NeedlePose, robot frame truth

        self.state = WorkflowState.CALIBRATE
        self.halted = False
        self.transform: RigidTransform | None = None
        self.fre: float | None = None
        self.scene_robot: Scene | None = None
        self.target_scanner: np.ndarray | None = None
        self.setup_pose_robot: NeedlePose | None = None
        self.plan: PlanResult | None = None
        self.scan_count = 0
        self.last_scan: dict | None = None
        self.replan_count = 0

        self.decoder = StreamDecoder()
        self.last_feedback: Feedback | None = None
        self.out_seq = 0
        self.q_cmd: np.ndarray | None = None
        self._stream: list | None = None        # remaining setpoint samples
        self._stream_target: np.ndarray | None = None
        self._jog_queue: list = []
        self._jog_active: tuple | None = None   # (v_task5, ticks_left)
        self._enable_wait_ms: int | None = None
        self._outbox: list = []
        self._send_setpoint_now = False
        self.hb_outage_ms: tuple | None = None  # injected master stall window
        self._fault_handled = False
        self.event_log: list[dict] = []
        self.violations: list[str] = []
        self.t_ns = 0

    # -- logging -----------------------------------------------------------------

    def _log(self, kind: str, **data):
        self.event_log.append({"t_ns": self.t_ns, "kind": kind, **data})

    def _transition(self, new: WorkflowState):
        if new is not self.state:
            self._log("state", state=new.value, prev=self.state.value)
            self.state = new

    # -- controller-frame helpers ---------------------------------------------------

    def _next_seq(self) -> int:
        s = self.out_seq
        self.out_seq += 1
        return s

    def _safety(self) -> SafetyState:
        if self.last_feedback is None:
            return SafetyState.BOOT
        return SafetyState(self.last_feedback.safety_state)

    def _feedback_q(self) -> np.ndarray:
        return np.asarray(self.last_feedback.positions, dtype=float)

    def needle_pose_scanner(self) -> NeedlePose | None:
        """Operator-visible pose: calibration transform ∘ FK(feedback)."""
        if self.last_feedback is None or self.transform is None:
            return None
        pose = forward_kinematics(np.clip(self._feedback_q(), JOINT_LOWER,
                                          JOINT_UPPER), self.params)
        return NeedlePose(registration.apply(self.transform, pose.p),
                          self.transform.R @ pose.u)

    # -- operator (UI bridge) ----------------------------------------------------------

    def handle_ui(self, msg) -> dict:
        """One inbound operator message (dict or JSON text) -> reply dict."""
        if isinstance(msg, (str, bytes)):
            try:
                msg = json.loads(msg)
            except json.JSONDecodeError as err:
                return {"v": 1, "type": "error", "message": f"bad json: {err}"}
        if not isinstance(msg, dict) or "type" not in msg:
            return {"v": 1, "type": "error", "message": "message needs a type"}
        kind = msg["type"]
        self._log("ui", msg=msg)
        try:
            check_event_allowed(kind, self.state)
            handler = getattr(self, f"_ui_{kind}", None)
            if handler is None:
                raise WorkflowRejection(kind, self.state, "unknown message type")
            result = handler(msg) or {}
        except WorkflowRejection as err:
            self._log("rejected", event=kind, state=self.state.value)
            return {"v": 1, "type": "error", "message": str(err),
                    "state": self.state.value}
        except (PlanningError, registration.RegistrationError, ValueError) as err:
            self._log("failed", event=kind, error=str(err))
            return {"v": 1, "type": "error", "message": str(err),
                    "state": self.state.value}
        return {"v": 1, "type": "ack", "event": kind, **result}

    def _ui_calibrate(self, msg) -> dict:
        fid = FiducialSet(self.robot_fiducials, self.scene.fiducials)
        self.transform, self.fre = registration.register(fid)
        inv = registration.inverse(self.transform)
        self.scene_robot = self.scene.transformed(inv.R, inv.t)
        if len(self.robot_fiducials) < 4:
            self._log("warning", message="only 3 fiducials: FRE has no redundancy")
        self._log("registered", fre=self.fre,
                  transform=self.transform.to_json_dict())
        self._transition(WorkflowState.PLAN_SETUP)
        return {"fre": self.fre}

    def _ui_set_target(self, msg) -> dict:
        target = np.asarray(msg["target"], dtype=float)
        if "entry" in msg:
            entry = np.asarray(msg["entry"], dtype=float)
        elif self.scene.entry_hint is not None:
            entry = self.scene.entry_hint
        else:
            raise ValueError("no entry point: provide one or add entry_hint to the scene")
        axis = target - entry
        norm = float(np.linalg.norm(axis))
        if norm < 1e-9:
            raise ValueError("target and entry coincide")
        axis = axis / norm
        self.target_scanner = target
        setup_tip = entry - axis * self.config.setup_standoff_m
        inv = registration.inverse(self.transform)
        pose_robot = NeedlePose(registration.apply(inv, setup_tip),
                                inv.R @ axis)
        self._start_plan(pose_robot)
        return {"planning": True}

    def _start_plan(self, pose_robot: NeedlePose):
        # exactly one plan job per session; a new request supersedes the old
        # (and obsoletes any queued jog motion)
        self._jog_queue.clear()
        self._jog_active = None
        self.setup_pose_robot = pose_robot
        current = self._feedback_q() if self.last_feedback is not None \
            else np.zeros(8)
        current = np.clip(current, JOINT_LOWER, JOINT_UPPER)
        seed = self.config.seed + 1000 + self.replan_count
        self.replan_count += 1
        setup_q = optimize_setup_config(
            pose_robot, self.scene_robot, current, self.weights, self.params,
            self.shape, seed=seed, n_starts=self.config.plan_starts,
            ascent_iters=self.config.ascent_iters, lock_insertion=True)
        path = plan_path(current, setup_q, self.scene_robot, self.params,
                         self.shape, seed=seed)
        traj = time_parameterize(path)
        audit = audit_trajectory(traj, self.scene_robot, self.params, self.shape)
        from ..planning import CollisionContext, objective
        ctx = CollisionContext(self.scene_robot, self.params, self.shape)
        from ..kinematics import manipulability, joint_limit_margin
        terms = {
            "objective": objective(setup_q, ctx, self.weights, self.params),
            "manipulability": manipulability(setup_q, self.params),
            "clearance": ctx.clearance(setup_q),
            "joint_margin": joint_limit_margin(setup_q),
        }
        self.plan = PlanResult(setup_q, traj, audit, terms)
        self._log("planned", waypoints=len(traj.waypoints),
                  duration_s=traj.duration, **terms)
        self._transition(WorkflowState.REVIEW)

    def _ui_confirm_setup(self, msg) -> dict:
        if self.plan is None:
            raise WorkflowRejection("confirm_setup", self.state, "no plan to confirm")
        start = self.plan.trajectory.waypoints[0]
        here = self._feedback_q() if self.last_feedback is not None else start
        replanned = False
        if np.max(np.abs(here - start)) > 0.01:
            # robot moved since planning (e.g. fault recovery): replan first
            self._start_plan(self.setup_pose_robot)
            replanned = True
        self._stream = [np.asarray(w) for w in self.plan.trajectory.waypoints]
        self._stream_target = self._stream[-1]
        self._enable_wait_ms = 0
        self._transition(WorkflowState.MOVE_TO_SETUP)
        return {"streaming": len(self._stream), "replanned": replanned}

    def _ui_reject_setup(self, msg) -> dict:
        self.plan = None
        self._transition(WorkflowState.PLAN_SETUP)
        return {}

    def _ui_jog(self, msg) -> dict:
        axis = msg.get("axis")
        direction = float(msg.get("direction", 1))
        if axis not in ("x", "y", "z", "tilt_a", "tilt_b") or direction not in (1.0, -1.0):
            raise ValueError(f"bad jog {msg!r}")
        cfg = self.config
        if axis in ("x", "y", "z"):
            speed, step = cfg.jog_speed_m_s, cfg.jog_step_m
            v_scanner = np.zeros(3)
            v_scanner["xyz".index(axis)] = direction * speed
            # physician jogs in scanner coordinates
            v_robot = self.transform.R.T @ v_scanner
            v5 = np.concatenate((v_robot, [0.0, 0.0]))
        else:
            speed, step = cfg.jog_speed_rad_s, cfg.jog_step_rad
            v5 = np.zeros(5)
            v5[3 if axis == "tilt_a" else 4] = direction * speed
        ticks = max(1, round(step / speed / 1e-3))
        self._jog_queue.append((v5, ticks))
        return {"queued": len(self._jog_queue)}

    def _ui_insert(self, msg) -> dict:
        mm = float(msg["mm"])
        if mm <= 0:
            raise ValueError("insert needs mm > 0")
        self.q_cmd[7] = max(0.0, self.q_cmd[7] + mm * 1e-3)
        self._send_setpoint_now = True
        return {"depth_target": self.q_cmd[7]}

    def _ui_retract(self, msg) -> dict:
        mm = float(msg["mm"])
        if mm <= 0:
            raise ValueError("retract needs mm > 0")
        self.q_cmd[7] = max(0.0, self.q_cmd[7] - mm * 1e-3)
        self._send_setpoint_now = True
        return {"depth_target": self.q_cmd[7]}

    def _ui_request_scan(self, msg) -> dict:
        if self.scan_provider is None:
            raise ValueError("no scanner attached to this session")
        true_pose_robot = self.scan_provider()
        true_scanner = NeedlePose(registration.apply(self.transform, true_pose_robot.p),
                                  self.transform.R @ true_pose_robot.u)
        measured = confirmation_scan(true_scanner, self.rng,
                                     self.config.scan_sigma_pos_m,
                                     self.config.scan_sigma_axis_deg)
        self.scan_count += 1
        dist = float(np.linalg.norm(measured.p - self.target_scanner)) \
            if self.target_scanner is not None else math.inf
        reached = dist <= self.config.convergence_mm * 1e-3
        self.last_scan = {
            "n": self.scan_count,
            "tip": [float(v) for v in measured.p],
            "axis": [float(v) for v in measured.u],
            "distance_to_target_mm": dist * 1e3,
            "reached": reached,
        }
        self._log("scan", **self.last_scan)
        if reached and self.state is WorkflowState.TELEOP_ITERATE:
            self._transition(WorkflowState.TARGET_REACHED)
        return {"scan": self.last_scan}

    def _ui_estop(self, msg) -> dict:
        self._queue_frame(Estop(self._next_seq(), self.t_ns))
        self._abort_motion()
        self.halted = True
        self._log("halt", reason="estop")
        return {}

    def _ui_clear_fault(self, msg) -> dict:
        self._queue_frame(Disable(self._next_seq(), self.t_ns))
        self.halted = False
        if self.state is WorkflowState.MOVE_TO_SETUP:
            # an interrupted approach needs a fresh plan from wherever the
            # robot stopped, reviewed and confirmed again
            if self.setup_pose_robot is not None:
                self._start_plan(self.setup_pose_robot)
            else:
                self._transition(WorkflowState.PLAN_SETUP)
        elif self.state in (WorkflowState.TELEOP_ITERATE,
                            WorkflowState.TARGET_REACHED):
            # the needle may be inserted: no gross replanning, hand control
            # back to the operator (motion still needs an explicit enable)
            self._transition(WorkflowState.TELEOP_ITERATE)
        return {}

    def _ui_enable(self, msg) -> dict:
        self._queue_frame(Enable(self._next_seq(), self.t_ns))
        return {}

    # -- controller link ------------------------------------------------------------

    def _queue_frame(self, msg):
        self._outbox.append(msg)

    def _abort_motion(self):
        self._stream = None
        self._stream_target = None
        self._jog_queue.clear()
        self._jog_active = None
        self._enable_wait_ms = None

    def on_controller_bytes(self, data: bytes):
        for msg in self.decoder.feed(data):
            if isinstance(msg, Feedback):
                self.last_feedback = msg
                if self.q_cmd is None:
                    self.q_cmd = np.asarray(msg.positions, dtype=float)
            elif isinstance(msg, Ack) and msg.status != protocol.ACK_OK:
                self._log("controller_reject", acked_seq=msg.acked_seq)

    def on_tick(self, t_ns: int) -> bytes:
        """Advance one millisecond of session time; returns wire bytes."""
        self.t_ns = t_ns
        t_ms = t_ns // MS

        stalled = self.hb_outage_ms is not None and \
            self.hb_outage_ms[0] <= t_ms < self.hb_outage_ms[1]
        if t_ms % HEARTBEAT_PERIOD_MS == 0 and not stalled:
            self._queue_frame(Heartbeat(self._next_seq(), t_ns))

        safety = self._safety()
        # edge-triggered: a cleared session ignores the stale FAULT feedback
        # still in flight, but any new latch halts again
        if safety == SafetyState.FAULT_LATCHED:
            if not self._fault_handled:
                self._fault_handled = True
                self.halted = True
                self._abort_motion()
                self._log("halt", reason="controller_fault",
                          fault=int(self.last_feedback.fault_reason))
        else:
            self._fault_handled = False
        if self.halted:
            return self._drain()

        if self.state is WorkflowState.MOVE_TO_SETUP:
            self._tick_move(t_ms, safety)
        elif self.state in (WorkflowState.TELEOP_ITERATE, WorkflowState.TARGET_REACHED):
            self._tick_teleop(safety)
        return self._drain()

    def _tick_move(self, t_ms: int, safety: SafetyState):
        if self._enable_wait_ms is not None:
            if safety == SafetyState.ENABLED:
                self._enable_wait_ms = None
            else:
                if self._enable_wait_ms % 50 == 0:
                    self._queue_frame(Enable(self._next_seq(), self.t_ns))
                self._enable_wait_ms += 1
                if self._enable_wait_ms > self.config.enable_timeout_ms:
                    self._abort_motion()
                    self._log("failed", event="enable", error="enable timeout")
                    self._transition(WorkflowState.REVIEW)
                return
        if safety != SafetyState.ENABLED:
            # stop immediately on any non-ENABLED feedback
            self._abort_motion()
            self.halted = True
            self._log("halt", reason="stream_safety")
            return
        if self._stream:
            self.q_cmd = self._stream.pop(0).copy()
            self._emit_setpoint()
        else:
            here = self._feedback_q()
            err = np.max(np.abs(here[:7] - self._stream_target[:7]))
            if err <= self.config.settle_tol_rad:
                self._stream_target = None
                self._log("trajectory_done", residual=float(err))
                self._transition(WorkflowState.TELEOP_ITERATE)

    def _tick_teleop(self, safety: SafetyState):
        if safety != SafetyState.ENABLED:
            return
        if self._jog_active is None and self._jog_queue:
            self._jog_active = self._jog_queue.pop(0)
        if self._jog_active is not None:
            v5, ticks = self._jog_active
            self.q_cmd = resolved_rate_step(
                self.q_cmd, v5, 1e-3, self.weights, self.params, self.shape,
                self.scene_robot, needle_check_len=0.0, locked_joints=(7,))
            self._emit_setpoint()
            ticks -= 1
            self._jog_active = (v5, ticks) if ticks > 0 else None
        elif self._send_setpoint_now:
            self._emit_setpoint()
            self._send_setpoint_now = False

    def _emit_setpoint(self):
        safety = self._safety()
        if self.state not in (WorkflowState.MOVE_TO_SETUP,
                              WorkflowState.TELEOP_ITERATE) or \
                safety != SafetyState.ENABLED:
            self.violations.append(
                f"setpoint emission attempted in {self.state.value}/{safety.name}")
            return
        self._queue_frame(Setpoint(self._next_seq(), self.t_ns,
                                   tuple(float(v) for v in self.q_cmd)))

    def _drain(self) -> bytes:
        out = b"".join(encode_frame(m) for m in self._outbox)
        self._outbox = []
        return out

    # -- telemetry -----------------------------------------------------------------

    def telemetry(self) -> dict:
        pose = self.needle_pose_scanner()
        fb = self.last_feedback
        plan_preview = None
        if self.plan is not None:
            wp = self.plan.trajectory.waypoints
            stride = max(1, len(wp) // 40)
            tips = []
            for q in wp[::stride]:
                p = forward_kinematics(np.clip(q, JOINT_LOWER, JOINT_UPPER),
                                       self.params).p
                tips.append([float(v) for v in registration.apply(self.transform, p)])
            setup = forward_kinematics(self.plan.setup_q, self.params)
            plan_preview = {
                "tips": tips,
                "setup_tip": [float(v) for v in registration.apply(self.transform, setup.p)],
                "setup_axis": [float(v) for v in (self.transform.R @ setup.u)],
                "duration_s": self.plan.trajectory.duration,
            }
        return {
            "v": 1,
            "type": "telemetry",
            "t_ns": self.t_ns,
            "workflow": self.state.value,
            "halted": self.halted,
            "joints": None if fb is None else [float(v) for v in fb.positions],
            "needle": None if pose is None else {
                "p": [float(v) for v in pose.p],
                "u": [float(v) for v in pose.u]},
            "safety": {
                "state": self._safety().name,
                "reason": 0 if fb is None else int(fb.fault_reason)},
            "clutch": None if fb is None else {
                "temps": [float(v) for v in fb.clutch_temps],
                "bits": int(fb.clutch_bits)},
            "target": None if self.target_scanner is None
            else [float(v) for v in self.target_scanner],
            "scan": self.last_scan,
            "plan": plan_preview,
            "fre": self.fre,
        }
