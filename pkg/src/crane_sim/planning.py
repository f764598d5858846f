"""Redundancy resolution and collision-free joint-space planning.

The setup optimizer maximizes a scalarized objective (log-manipulability,
saturated clearance, joint-limit margin) over the 3-dimensional self-motion
manifold of a 5-DoF needle pose; paths between configurations come from a
bidirectional sampling tree with shortcut smoothing, followed by trapezoidal
time parameterization at the 1 ms control period.

Everything here is deterministic given (inputs, seed).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .collision import DEFAULT_SHAPE, RobotShape, Scene
from .kinematics import (
    CHAR_LENGTH, DEFAULT_PARAMS, ChainParams, NeedlePose, axis_perp_basis,
    joint_array, joint_limit_margin, within_limits,
    JOINT_LOWER, JOINT_UPPER, PRISMATIC,
)

# Unit mixing for joint-space metrics: prismatic meters are divided by the
# characteristic length so 1 "unit" is comparable across joint types.
JOINT_SCALE = np.where(PRISMATIC, 1.0 / CHAR_LENGTH, 1.0)

# Dense-check resolution per joint step (0.5 mm prismatic, 0.005 rad revolute).
CHECK_RESOLUTION = np.where(PRISMATIC, 5e-4, 5e-3)

DEFAULT_V_MAX = np.where(PRISMATIC, 0.05, 0.5)
DEFAULT_A_MAX = np.where(PRISMATIC, 0.2, 2.0)

CONTROL_PERIOD = 1e-3


class PlanningError(RuntimeError):
    pass


class UnreachablePoseError(PlanningError):
    def __init__(self, msg, pos_err=None, axis_err=None):
        super().__init__(msg)
        self.pos_err = pos_err
        self.axis_err = axis_err


class InfeasibleSetupError(PlanningError):
    pass


class InvalidEndpointError(PlanningError):
    pass


class PlanningTimeoutError(PlanningError):
    pass


class InvalidLimitsError(PlanningError):
    pass


class AuditError(PlanningError):
    pass


@dataclass(frozen=True)
class ObjectiveWeights:
    """Scalarization of the setup criteria; clearance saturates at the cap
    so the optimizer stops trading pose quality for distance once safe."""

    manipulability: float = 1.0
    clearance: float = 10.0
    joint_margin: float = 1.0
    log_guard: float = 1e-9
    clearance_cap: float = 0.05

    def __post_init__(self):
        if min(self.manipulability, self.clearance, self.joint_margin) < 0:
            raise ValueError("weights must be >= 0")
        if self.log_guard <= 0:
            raise ValueError("log_guard must be > 0")


@dataclass(frozen=True)
class WorkspaceBox:
    """Reachability pre-check for requested tip positions."""

    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        lo = np.array([-0.8, -0.8, -0.8]) if self.lo is None else np.asarray(self.lo, float)
        hi = np.array([0.8, 0.8, 1.6]) if self.hi is None else np.asarray(self.hi, float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


DEFAULT_WORKSPACE = WorkspaceBox()


@dataclass(frozen=True)
class JointTrajectory:
    """Waypoints (N,8); times (N,) seconds once time-parameterized."""

    waypoints: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 8:
            raise ValueError("waypoints must be (N, 8)")
        object.__setattr__(self, "waypoints", wp)
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if t.shape != (wp.shape[0],):
                raise ValueError("times length must match waypoints")
            if np.any(np.diff(t) <= 0):
                raise ValueError("times must be strictly increasing")
            object.__setattr__(self, "times", t)

    @property
    def duration(self) -> float:
        return 0.0 if self.times is None or len(self.times) < 2 else float(self.times[-1])


class CollisionContext:
    """Reusable buffers for fast clearance queries on raw joint arrays."""

    def __init__(self, scene: Scene, params: ChainParams = DEFAULT_PARAMS,
                 shape: RobotShape = DEFAULT_SHAPE, needle_check_len: float = -1.0):
        self.scene = scene
        self.params_arr = params.as_array()
        self.radii = shape.as_array()
        self.obstacles = scene.obstacle_array()
        self.n_obs = len(scene.patient)
        self.bore = scene.bore_array()
        self.needle_check_len = float(needle_check_len)
        self._frames = np.empty(_kernels.FRAMES_LEN)

    def clearance(self, q: np.ndarray) -> float:
        _kernels.chain_frames(q, self.params_arr, self._frames)
        return _kernels.min_clearance(self._frames, self.radii, self.obstacles,
                                      self.n_obs, self.bore, self.needle_check_len)

    def collides(self, q: np.ndarray) -> bool:
        return self.clearance(q) < 0.0


# --- inverse kinematics ------------------------------------------------------

def _task_residual(frames: np.ndarray, target: NeedlePose):
    p = frames[_kernels.F_TIP:_kernels.F_TIP + 3]
    u = frames[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
    e_p = target.p - p
    cross = np.cross(u, target.u)
    dot = float(u @ target.u)
    sin_a = float(np.linalg.norm(cross))
    angle = math.atan2(sin_a, dot)
    if sin_a > 1e-12:
        rot_vec = cross * (angle / sin_a)
    elif dot < 0.0:
        # antiparallel: rotate about any axis orthogonal to u
        rot_vec = axis_perp_basis(u)[:, 0] * angle
    else:
        rot_vec = np.zeros(3)
    return e_p, rot_vec, float(np.linalg.norm(e_p)), angle


def solve_pose_ik(target: NeedlePose, seed, params: ChainParams = DEFAULT_PARAMS, *,
                  pos_tol: float = 1e-5, axis_tol: float = 1e-5,
                  max_iters: int = 500, damping: float = 0.01,
                  step_clamp: float = 0.2, q8_max: float = 1.0,
                  locked_joints: tuple = (),
                  workspace: WorkspaceBox = DEFAULT_WORKSPACE) -> np.ndarray:
    """Damped least-squares IK onto the 5-DoF needle-pose manifold.

    Converges when tip error <= pos_tol (m) and axis error <= axis_tol (rad);
    raises UnreachablePoseError after max_iters (or immediately when the tip
    is outside the workspace box), carrying the best residual seen.
    locked_joints are held at their seed values (e.g. the insertion axis,
    which setup posing must not drive).
    """
    if not workspace.contains(target.p):
        raise UnreachablePoseError(
            f"target tip {target.p} outside workspace box", None, None)
    q = joint_array(seed).copy()
    lo = JOINT_LOWER
    hi = JOINT_UPPER.copy()
    hi[7] = max(q8_max, q[7])
    params_arr = params.as_array()
    frames = np.empty(_kernels.FRAMES_LEN)
    best = (math.inf, math.inf)
    lam2 = damping * damping
    locked = list(locked_joints)
    from .kinematics import _jacobian_from_frames

    for _ in range(max_iters):
        _kernels.chain_frames(q, params_arr, frames)
        e_p, rot_vec, pos_err, axis_err = _task_residual(frames, target)
        if pos_err <= pos_tol and axis_err <= axis_tol:
            return q
        if (pos_err, axis_err) < best:
            best = (pos_err, axis_err)
        u = frames[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
        B = axis_perp_basis(u)
        J6 = _jacobian_from_frames(frames)
        Jt = np.empty((5, 8))
        Jt[:3] = J6[:3]
        Jt[3:] = B.T @ J6[3:]
        if locked:
            Jt[:, locked] = 0.0
        e = np.concatenate((e_p, B.T @ rot_vec))
        JJt = Jt @ Jt.T
        JJt[np.diag_indices(5)] += lam2
        dq = Jt.T @ np.linalg.solve(JJt, e)
        np.clip(dq, -step_clamp, step_clamp, out=dq)
        q += dq
        np.clip(q, lo, hi, out=q)

    raise UnreachablePoseError(
        f"IK did not converge: residual {best[0]:.3e} m / {best[1]:.3e} rad",
        best[0], best[1])


# --- setup-pose optimization -------------------------------------------------

def objective(q, ctx: CollisionContext, weights: ObjectiveWeights,
              params: ChainParams = DEFAULT_PARAMS) -> float:
    """U(q): weighted log-manipulability, capped clearance, limit margin."""
    from .kinematics import manipulability
    scale = max(weights.manipulability, weights.clearance, weights.joint_margin)
    if scale == 0.0:
        return 0.0
    u = 0.0
    if weights.manipulability > 0.0:
        w = manipulability(q, params)
        u += (weights.manipulability / scale) * math.log(w + weights.log_guard)
    if weights.clearance > 0.0:
        c = ctx.clearance(np.ascontiguousarray(q, dtype=float))
        u += (weights.clearance / scale) * min(c, weights.clearance_cap)
    if weights.joint_margin > 0.0:
        u += (weights.joint_margin / scale) * joint_limit_margin(q)
    return u


def objective_gradient(q, ctx: CollisionContext, weights: ObjectiveWeights,
                       params: ChainParams = DEFAULT_PARAMS, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the setup objective."""
    g = np.zeros(8)
    q = np.asarray(q, dtype=float)
    for j in range(8):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        # stay inside the domain near limits (shifted central difference)
        if qp[j] > JOINT_UPPER[j]:
            qp[j] = JOINT_UPPER[j]
        if qm[j] < JOINT_LOWER[j]:
            qm[j] = JOINT_LOWER[j]
        dq = qp[j] - qm[j]
        if dq <= 0:
            continue
        g[j] = (objective(qp, ctx, weights, params) - objective(qm, ctx, weights, params)) / dq
    return g


def _joint_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm((a - b) * JOINT_SCALE))


def _random_interior_config(rng: np.random.Generator, q8_hi: float = 0.3) -> np.ndarray:
    lo = JOINT_LOWER.copy()
    hi = JOINT_UPPER.copy()
    hi[7] = q8_hi
    frac = 0.05 + 0.9 * rng.random(8)
    return lo + frac * (hi - lo)


def optimize_setup_config(target: NeedlePose, scene: Scene, current,
                          weights: ObjectiveWeights = ObjectiveWeights(),
                          params: ChainParams = DEFAULT_PARAMS,
                          shape: RobotShape = DEFAULT_SHAPE, *,
                          seed: int = 0, n_starts: int = 16,
                          ascent_iters: int = 25,
                          lock_insertion: bool = False,
                          workspace: WorkspaceBox = DEFAULT_WORKSPACE) -> np.ndarray:
    """Best collision-free configuration holding the target needle pose.

    Multi-start (current config + seeded-random restarts) IK to the pose
    manifold, then projected gradient ascent of the objective within the
    task nullspace.  Near-ties (relative 1e-9) break toward the smaller
    joint-space distance from the current config.  lock_insertion keeps the
    needle depth at the current value (the arm poses, the clutch inserts).
    """
    current = joint_array(current)
    ctx = CollisionContext(scene, params, shape)
    rng = np.random.default_rng(seed)
    locked = (7,) if lock_insertion else ()
    seeds = [current]
    for _ in range(max(0, n_starts - 1)):
        s = _random_interior_config(rng)
        if lock_insertion:
            s[7] = current[7]
        seeds.append(s)

    candidates: list[tuple[float, float, np.ndarray]] = []

    def admit(q: np.ndarray):
        if ctx.clearance(q) > 0.0:
            candidates.append((objective(q, ctx, weights, params),
                               _joint_distance(q, current), q))

    for s in seeds:
        try:
            q_ik = solve_pose_ik(target, s, params, locked_joints=locked,
                                 workspace=workspace)
        except UnreachablePoseError:
            continue
        admit(q_ik)
        q = q_ik
        step = 0.02
        u_best = objective(q, ctx, weights, params)
        for _ in range(ascent_iters):
            if step < 1e-4:
                break
            g = objective_gradient(q, ctx, weights, params)
            from .kinematics import _jacobian_from_frames  # local import as above
            frames = np.empty(_kernels.FRAMES_LEN)
            _kernels.chain_frames(q, params.as_array(), frames)
            J6 = _jacobian_from_frames(frames)
            u = frames[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
            B = axis_perp_basis(u)
            Jt = np.vstack((J6[:3], B.T @ J6[3:]))
            if locked:
                Jt[:, list(locked)] = 0.0
                g = g.copy()
                g[list(locked)] = 0.0
            N = np.eye(8) - np.linalg.pinv(Jt) @ Jt
            d = N @ g
            norm = np.linalg.norm(d)
            if norm < 1e-12:
                break
            trial = q + (step / norm) * d
            np.clip(trial, JOINT_LOWER, JOINT_UPPER, out=trial)
            try:
                trial = solve_pose_ik(target, trial, params, max_iters=60,
                                      locked_joints=locked, workspace=workspace)
            except UnreachablePoseError:
                step *= 0.5
                continue
            if ctx.clearance(trial) <= 0.0:
                step *= 0.5
                continue
            u_trial = objective(trial, ctx, weights, params)
            if u_trial > u_best:
                q = trial
                u_best = u_trial
            else:
                step *= 0.5
        admit(q)

    if not candidates:
        raise InfeasibleSetupError("no collision-free configuration reaches the pose")

    best_u = max(c[0] for c in candidates)
    tie = 1e-9 * max(1.0, abs(best_u))
    in_band = [c for c in candidates if c[0] >= best_u - tie]
    in_band.sort(key=lambda c: c[1])
    return in_band[0][2]


# --- path planning -----------------------------------------------------------

def _interp_steps(qa: np.ndarray, qb: np.ndarray) -> int:
    return max(1, int(np.max(np.abs(qb - qa) / CHECK_RESOLUTION)) + 1)


def _edge_collision_free(qa: np.ndarray, qb: np.ndarray, ctx: CollisionContext) -> bool:
    n = _interp_steps(qa, qb)
    for k in range(1, n + 1):
        t = k / n
        if ctx.collides(qa + t * (qb - qa)):
            return False
    return True


def _sample_bounds(q_from: np.ndarray, q_to: np.ndarray):
    lo = JOINT_LOWER.copy()
    hi = JOINT_UPPER.copy()
    lo[7] = min(q_from[7], q_to[7])
    hi[7] = max(q_from[7], q_to[7])
    return lo, hi


def plan_path(q_from, q_to, scene: Scene,
              params: ChainParams = DEFAULT_PARAMS,
              shape: RobotShape = DEFAULT_SHAPE, *,
              seed: int = 0, step: float = 0.15,
              max_samples: int = 1_000_000,
              shortcut_attempts: int = 100) -> JointTrajectory:
    """Collision-free joint-space path via a bidirectional sampling tree.

    Deterministic given the seed.  The needle depth is sampled only between
    its endpoint values, so gross motion never drives insertion.  Raises
    InvalidEndpointError / PlanningTimeoutError.
    """
    q_from = joint_array(q_from)
    q_to = joint_array(q_to)
    ctx = CollisionContext(scene, params, shape)
    for name, q in (("start", q_from), ("goal", q_to)):
        if ctx.collides(q):
            raise InvalidEndpointError(f"{name} configuration is in collision")

    if np.array_equal(q_from, q_to):
        return JointTrajectory(q_from[None, :].copy())

    if _edge_collision_free(q_from, q_to, ctx):
        return _densify(np.array([q_from, q_to]), step)

    rng = np.random.default_rng(seed)
    lo, hi = _sample_bounds(q_from, q_to)

    trees = (_Tree(q_from), _Tree(q_to))

    def extend(tree: "_Tree", q_target):
        ni, d = tree.nearest(q_target)
        near = tree.nodes[ni]
        if d < 1e-12:
            return ni, "reached"
        if d <= step:
            q_new = q_target.copy()
        else:
            q_new = near + (step / d) * (q_target - near)
        if not _edge_collision_free(near, q_new, ctx):
            return None, "trapped"
        return tree.add(q_new, ni), ("reached" if d <= step else "advanced")

    def connect(tree, q_target):
        while True:
            idx, status = extend(tree, q_target)
            if status != "advanced":
                return idx, status

    a, b = 0, 1
    samples = 0
    bridge = None
    while bridge is None:
        if samples >= max_samples:
            raise PlanningTimeoutError(f"no path after {samples} samples")
        qs = lo + rng.random(8) * (hi - lo)
        samples += 1
        idx_a, status = extend(trees[a], qs)
        if status != "trapped":
            q_new = trees[a].nodes[idx_a]
            idx_b, status_b = connect(trees[b], q_new)
            if status_b == "reached":
                bridge = (a, idx_a, idx_b)
        a, b = b, a

    side, ia, ib = bridge
    path_a = _trace(trees[side], ia)
    path_b = _trace(trees[1 - side], ib)
    if side == 0:
        waypoints = path_a[::-1] + path_b
    else:
        waypoints = path_b[::-1] + path_a
    # orient from q_from to q_to
    if not np.array_equal(waypoints[0], q_from):
        waypoints = waypoints[::-1]

    waypoints = _shortcut(waypoints, ctx, rng, shortcut_attempts)
    return _densify(np.array(waypoints), step)


class _Tree:
    """Append-only tree over joint configs with vectorized nearest lookup."""

    def __init__(self, root: np.ndarray):
        self.nodes = [root]
        self.parents = [-1]
        self._scaled = np.empty((64, 8))
        self._scaled[0] = root * JOINT_SCALE
        self._n = 1

    def add(self, q: np.ndarray, parent: int) -> int:
        if self._n == len(self._scaled):
            grown = np.empty((2 * len(self._scaled), 8))
            grown[:self._n] = self._scaled
            self._scaled = grown
        self._scaled[self._n] = q * JOINT_SCALE
        self._n += 1
        self.nodes.append(q)
        self.parents.append(parent)
        return self._n - 1

    def nearest(self, q: np.ndarray) -> tuple[int, float]:
        diff = self._scaled[:self._n] - q * JOINT_SCALE
        d2 = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(d2))
        return i, math.sqrt(float(d2[i]))


def _trace(tree: _Tree, idx: int):
    out = []
    while idx != -1:
        out.append(tree.nodes[idx])
        idx = tree.parents[idx]
    return out


def _shortcut(waypoints, ctx, rng, attempts):
    pts = list(waypoints)
    for _ in range(attempts):
        if len(pts) <= 2:
            break
        i = int(rng.integers(0, len(pts) - 2))
        j = int(rng.integers(i + 2, len(pts)))
        if _edge_collision_free(pts[i], pts[j], ctx):
            pts = pts[:i + 1] + pts[j:]
    return pts


def _densify(waypoints: np.ndarray, step: float) -> JointTrajectory:
    out = [waypoints[0]]
    for k in range(len(waypoints) - 1):
        a, b = waypoints[k], waypoints[k + 1]
        n = max(1, math.ceil(_joint_distance(a, b) / step))
        for i in range(1, n + 1):
            out.append(a + (i / n) * (b - a))
    return JointTrajectory(np.array(out))


# --- time parameterization ---------------------------------------------------

def _unit_trapezoid(v_cap: float, a_cap: float):
    """Duration and profile params for unit distance with caps (v_cap, a_cap)."""
    if v_cap * v_cap / a_cap >= 1.0:
        # triangular: never reaches v_cap
        t_acc = math.sqrt(1.0 / a_cap)
        return 2.0 * t_acc, t_acc, t_acc * a_cap
    t_acc = v_cap / a_cap
    t_flat = (1.0 - v_cap * t_acc) / v_cap
    return 2.0 * t_acc + t_flat, t_acc, v_cap


def _unit_profile_pos(t: float, t_acc: float, v_peak: float, total: float) -> float:
    if t <= 0.0:
        return 0.0
    if t >= total:
        return 1.0
    if t < t_acc:
        a = v_peak / t_acc
        return 0.5 * a * t * t
    if t <= total - t_acc:
        return 0.5 * v_peak * t_acc + v_peak * (t - t_acc)
    td = total - t
    a = v_peak / t_acc
    return 1.0 - 0.5 * a * td * td


def segment_duration(delta: np.ndarray, v_max: np.ndarray, a_max: np.ndarray) -> float:
    """Closed-form trapezoidal duration of one straight joint-space segment."""
    mag = np.abs(delta)
    moving = mag > 0.0
    if not np.any(moving):
        return 0.0
    v_cap = float(np.min(v_max[moving] / mag[moving]))
    a_cap = float(np.min(a_max[moving] / mag[moving]))
    return _unit_trapezoid(v_cap, a_cap)[0]


def time_parameterize(path: JointTrajectory,
                      v_max: np.ndarray | None = None,
                      a_max: np.ndarray | None = None,
                      dt: float = CONTROL_PERIOD) -> JointTrajectory:
    """Resample a path onto the control period with per-segment trapezoids.

    All joints of one segment share the normalized profile, scaled so the
    binding joint exactly meets its velocity or acceleration limit.
    """
    v_max = DEFAULT_V_MAX if v_max is None else np.asarray(v_max, dtype=float)
    a_max = DEFAULT_A_MAX if a_max is None else np.asarray(a_max, dtype=float)
    if np.any(v_max <= 0.0) or np.any(a_max <= 0.0):
        raise InvalidLimitsError("velocity/acceleration limits must be > 0")

    wp = path.waypoints
    if len(wp) == 1:
        return JointTrajectory(wp.copy(), np.array([0.0]))

    segments = []  # (t_start, duration, a, delta, t_acc, v_peak)
    t0 = 0.0
    for k in range(len(wp) - 1):
        delta = wp[k + 1] - wp[k]
        mag = np.abs(delta)
        moving = mag > 0.0
        if not np.any(moving):
            continue
        v_cap = float(np.min(v_max[moving] / mag[moving]))
        a_cap = float(np.min(a_max[moving] / mag[moving]))
        total, t_acc, v_peak = _unit_trapezoid(v_cap, a_cap)
        segments.append((t0, total, wp[k], delta, t_acc, v_peak))
        t0 += total

    if not segments:
        return JointTrajectory(wp[:1].copy(), np.array([0.0]))

    total_time = t0
    n_samples = int(math.ceil(total_time / dt)) + 1
    times = np.arange(n_samples) * dt
    out = np.empty((n_samples, 8))
    si = 0
    for i, t in enumerate(times):
        while si + 1 < len(segments) and t >= segments[si + 1][0]:
            si += 1
        t_start, dur, q0, delta, t_acc, v_peak = segments[si]
        s = _unit_profile_pos(t - t_start, t_acc, v_peak, dur)
        out[i] = q0 + s * delta
    # final sample lands exactly on the goal
    if times[-1] >= total_time:
        out[-1] = wp[-1]
    else:
        out = np.vstack((out, wp[-1]))
        times = np.append(times, times[-1] + dt)
    return JointTrajectory(out, times)


# --- independent trajectory audit ---------------------------------------------

def audit_trajectory(traj: JointTrajectory, scene: Scene,
                     params: ChainParams = DEFAULT_PARAMS,
                     shape: RobotShape = DEFAULT_SHAPE,
                     v_max: np.ndarray | None = None,
                     a_max: np.ndarray | None = None) -> dict:
    """Dense re-validation of a trajectory, separate from the planner.

    Re-checks joint limits and collisions at the interpolation resolution,
    and (for timed trajectories) numerically differentiated velocity and
    acceleration bounds.  Raises AuditError on any violation.
    """
    v_max = DEFAULT_V_MAX if v_max is None else np.asarray(v_max, dtype=float)
    a_max = DEFAULT_A_MAX if a_max is None else np.asarray(a_max, dtype=float)
    ctx = CollisionContext(scene, params, shape)
    wp = traj.waypoints
    checked = 0
    for i, q in enumerate(wp):
        if not within_limits(q):
            raise AuditError(f"waypoint {i} violates joint limits")
    for i in range(len(wp) - 1):
        a, b = wp[i], wp[i + 1]
        n = _interp_steps(a, b)
        for k in range(n + 1):
            q = a + (k / n) * (b - a)
            checked += 1
            if ctx.collides(q):
                raise AuditError(f"collision at segment {i}, fraction {k / n:.3f}")
    if traj.times is not None and len(wp) > 1:
        dt_arr = np.diff(traj.times)
        vel = np.diff(wp, axis=0) / dt_arr[:, None]
        if np.any(np.abs(vel) > v_max[None, :] * (1 + 1e-9) + 1e-12):
            raise AuditError("velocity bound exceeded")
        if len(wp) > 2:
            acc = np.diff(vel, axis=0) / dt_arr[1:, None]
            if np.any(np.abs(acc) > a_max[None, :] * (1 + 1e-9) + 1e-9):
                raise AuditError("acceleration bound exceeded")
    return {"waypoints": len(wp), "configs_checked": checked}


# --- resolved-rate teleoperation ----------------------------------------------

def resolved_rate_step(q, v_task, dt: float,
                       weights: ObjectiveWeights = ObjectiveWeights(),
                       params: ChainParams = DEFAULT_PARAMS,
                       shape: RobotShape = DEFAULT_SHAPE,
                       scene: Scene | None = None, *,
                       damping: float = 0.01, null_gain: float = 1.0,
                       null_step_max: float = 2e-4,
                       v_task_max: float = 0.05,
                       needle_check_len: float = -1.0,
                       locked_joints: tuple = ()) -> np.ndarray:
    """One damped-pseudoinverse teleop step with nullspace objective ascent.

    v_task is the commanded 5-vector (tip velocity, two axis-tilt rates);
    its norm is clamped to v_task_max.  Joint limits are enforced by
    clamping.  With zero task velocity the step is pure self-motion: it
    never decreases the objective and barely moves the needle pose.
    """
    q = joint_array(q)
    v = np.asarray(v_task, dtype=float).copy()
    nv = float(np.linalg.norm(v))
    if nv > v_task_max:
        v *= v_task_max / nv

    from .kinematics import _jacobian_from_frames
    frames = np.empty(_kernels.FRAMES_LEN)
    _kernels.chain_frames(q, params.as_array(), frames)
    J6 = _jacobian_from_frames(frames)
    u = frames[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
    B = axis_perp_basis(u)
    Jt = np.vstack((J6[:3], B.T @ J6[3:]))
    locked = list(locked_joints)
    if locked:
        Jt[:, locked] = 0.0

    JJt = Jt @ Jt.T
    JJt[np.diag_indices(5)] += damping * damping
    dq_task = Jt.T @ np.linalg.solve(JJt, v * dt)

    dq_null = np.zeros(8)
    if null_gain > 0.0:
        ctx = None
        w_eff = weights
        if scene is None:
            w_eff = ObjectiveWeights(weights.manipulability, 0.0, weights.joint_margin,
                                     weights.log_guard, weights.clearance_cap)
        else:
            ctx = CollisionContext(scene, params, shape, needle_check_len)
        if ctx is None:
            ctx = _NullContext()
        g = objective_gradient(q, ctx, w_eff, params)
        if locked:
            g = g.copy()
            g[locked] = 0.0
        N = np.eye(8) - np.linalg.pinv(Jt) @ Jt
        dq_null = null_gain * (N @ g)
        norm = float(np.linalg.norm(dq_null))
        if norm > null_step_max:
            dq_null *= null_step_max / norm
        if nv == 0.0 and norm > 0.0:
            before = objective(q, ctx, w_eff, params)
            trial = np.clip(q + dq_null, JOINT_LOWER, JOINT_UPPER)
            if objective(trial, ctx, w_eff, params) < before:
                dq_null[:] = 0.0

    q_new = q + dq_task + dq_null
    np.clip(q_new, JOINT_LOWER, JOINT_UPPER, out=q_new)
    return q_new


class _NullContext:
    """Clearance stub for objective evaluation without a scene."""

    def clearance(self, q) -> float:
        return math.inf
