"""Serial-chain model of the 8-DoF robot.

Joint layout: q1,q2,q3 back-end prismatic X/Y/Z (m); q4 trunnion roll (rad);
q5,q6,q7 intra-bore arm revolutes (rad); q8 needle insertion depth (m,
logical, unbounded above).  Angles in radians, lengths in meters.

The chain composition is Tx(q1) Ty(q2) Tz(q3) Rz(q4) Tz(L0) Rx(q5) Tz(L1)
Ry(q6) Tz(L2) Rx(q7) Tz(L3+d0+q8); the needle axis is the final frame +Z.
The Rx/Ry/Rx wrist gives dexterity about the needle axis.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

JOINT_NAMES = ("q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8")
JOINT_LOWER = np.array([-0.20, -0.20, -0.40, -math.pi, -2.0, -2.0, -2.0, 0.0])
JOINT_UPPER = np.array([0.20, 0.20, 0.40, math.pi, 2.0, 2.0, 2.0, math.inf])
PRISMATIC = np.array([True, True, True, False, False, False, False, True])

# Characteristic length mixing prismatic (m) and revolute (rad) coordinates
# in the manipulability measure; equals the arm link length.
CHAR_LENGTH = 0.07


class JointLimitError(ValueError):
    """A joint value is outside its limits."""

    def __init__(self, joint: int, value: float, lo: float, hi: float):
        self.joint = joint
        self.value = value
        super().__init__(
            f"{JOINT_NAMES[joint]}={value:.6g} outside [{lo:.6g}, {hi:.6g}]"
        )


@dataclass(frozen=True)
class ChainParams:
    """Link geometry: trunnion offset, three arm links, retracted tip offset."""

    L0: float = 0.10
    L1: float = 0.07
    L2: float = 0.07
    L3: float = 0.07
    d0: float = 0.05

    def __post_init__(self):
        for name in ("L0", "L1", "L2", "L3", "d0"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"ChainParams.{name} must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.L0, self.L1, self.L2, self.L3, self.d0])


DEFAULT_PARAMS = ChainParams()


@dataclass(frozen=True)
class NeedlePose:
    """5-DoF task-space point: tip position and unit needle axis (hub→tip)."""

    p: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if self.p.shape != (3,) or self.u.shape != (3,):
            raise ValueError("NeedlePose needs 3-vectors p and u")
        n = float(np.linalg.norm(self.u))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"needle axis not unit length: |u|={n!r}")

    @staticmethod
    def from_direction(p, d) -> "NeedlePose":
        d = np.asarray(d, dtype=float)
        n = np.linalg.norm(d)
        if n == 0.0:
            raise ValueError("needle direction must be nonzero")
        return NeedlePose(np.asarray(p, dtype=float), d / n)


def joint_array(q) -> np.ndarray:
    """Coerce a JointConfig-like input to a validated float64 array of 8."""
    arr = np.ascontiguousarray(q, dtype=float)
    if arr.shape != (8,):
        raise ValueError(f"expected 8 joint values, got shape {arr.shape}")
    check_limits(arr)
    return arr


def check_limits(q: np.ndarray) -> None:
    for j in range(8):
        if not (JOINT_LOWER[j] <= q[j] <= JOINT_UPPER[j]):
            raise JointLimitError(j, float(q[j]), float(JOINT_LOWER[j]), float(JOINT_UPPER[j]))


def within_limits(q: np.ndarray) -> bool:
    return bool(np.all(q >= JOINT_LOWER) and np.all(q <= JOINT_UPPER))


def home_config() -> np.ndarray:
    return np.zeros(8)


def chain_frames(q, params: ChainParams = DEFAULT_PARAMS) -> np.ndarray:
    """All chain frame data as a flat array (layout in crane_sim._kernels)."""
    arr = joint_array(q)
    out = np.empty(_kernels.FRAMES_LEN)
    _kernels.chain_frames(arr, params.as_array(), out)
    return out


def _frames_unchecked(arr: np.ndarray, params_arr: np.ndarray, out: np.ndarray) -> None:
    _kernels.chain_frames(arr, params_arr, out)


def forward_kinematics(q, params: ChainParams = DEFAULT_PARAMS) -> NeedlePose:
    f = chain_frames(q, params)
    return NeedlePose(f[_kernels.F_TIP:_kernels.F_TIP + 3].copy(),
                      f[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3].copy())


def _jacobian_from_frames(f: np.ndarray) -> np.ndarray:
    J = np.zeros((6, 8))
    tip = f[_kernels.F_TIP:_kernels.F_TIP + 3]
    # Back-end prismatic stage: pure world-axis translations.
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[2, 2] = 1.0
    # Trunnion roll about world Z at the carriage origin.
    zhat = np.array([0.0, 0.0, 1.0])
    o4 = f[_kernels.F_CARRIAGE:_kernels.F_CARRIAGE + 3]
    J[:3, 3] = np.cross(zhat, tip - o4)
    J[3:, 3] = zhat
    for col, (ax_off, o_off) in enumerate(
        ((_kernels.F_AXIS5, _kernels.F_MOUNT),
         (_kernels.F_AXIS6, _kernels.F_ELBOW1),
         (_kernels.F_AXIS7, _kernels.F_ELBOW2)), start=4):
        a = f[ax_off:ax_off + 3]
        o = f[o_off:o_off + 3]
        J[:3, col] = np.cross(a, tip - o)
        J[3:, col] = a
    # Insertion: prismatic along the needle axis.
    J[:3, 7] = f[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
    return J


def geometric_jacobian(q, params: ChainParams = DEFAULT_PARAMS) -> np.ndarray:
    """6x8 Jacobian: rows 1-3 tip linear velocity, rows 4-6 angular velocity."""
    return _jacobian_from_frames(chain_frames(q, params))


def axis_perp_basis(u: np.ndarray) -> np.ndarray:
    """3x2 orthonormal basis of the plane orthogonal to u.

    Seeded from the world axis least aligned with u (Gram–Schmidt), so the
    basis varies smoothly except where the argmin axis switches; any
    orthonormal choice yields the same manipulability.
    """
    u = np.asarray(u, dtype=float)
    seed = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[seed] = 1.0
    b1 = e - (e @ u) * u
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(u, b1)
    return np.column_stack((b1, b2))


def task_jacobian(q, params: ChainParams = DEFAULT_PARAMS,
                  basis: np.ndarray | None = None) -> np.ndarray:
    """5x8 task Jacobian: tip linear rows plus needle-axis tilt rows.

    Roll about the needle axis is task-irrelevant, so the angular rows are
    projected onto an orthonormal basis of the axis-orthogonal plane.
    """
    f = chain_frames(q, params)
    J = _jacobian_from_frames(f)
    u = f[_kernels.F_NEEDLE:_kernels.F_NEEDLE + 3]
    B = axis_perp_basis(u) if basis is None else basis
    Jt = np.empty((5, 8))
    Jt[:3] = J[:3]
    Jt[3:] = B.T @ J[3:]
    return Jt


def scale_mixed_units(Jt: np.ndarray) -> np.ndarray:
    """Scale prismatic columns by 1/CHAR_LENGTH so all columns share units."""
    Js = Jt.copy()
    Js[:, PRISMATIC] /= CHAR_LENGTH
    return Js


def manipulability(q, params: ChainParams = DEFAULT_PARAMS,
                   basis: np.ndarray | None = None) -> float:
    """Singularity distance: sqrt(det(Js Jsᵀ)) of the unit-scaled task Jacobian.

    Zero iff the task Jacobian loses rank.
    """
    Js = scale_mixed_units(task_jacobian(q, params, basis))
    g = Js @ Js.T
    det = float(np.linalg.det(g))
    if det < 0.0:
        det = 0.0
    return math.sqrt(det)


def joint_limit_margin(q) -> float:
    """Normalized distance from joint limits in [0, 1].

    Per joint: 4(q-lo)(hi-q)/(hi-lo)^2, which is 1 at range center and 0 at
    either limit; the margin is the minimum over q1..q7 (q8 is unbounded
    above and excluded).
    """
    arr = joint_array(q)
    worst = 1.0
    for j in range(7):
        lo = JOINT_LOWER[j]
        hi = JOINT_UPPER[j]
        m = 4.0 * (arr[j] - lo) * (hi - arr[j]) / (hi - lo) ** 2
        if m < worst:
            worst = m
    return worst
