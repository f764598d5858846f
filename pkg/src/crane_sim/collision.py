"""Geometric scene model and clearance queries.

All solids are capsules; the CT bore is a containment cylinder (the robot
must stay inside), not a solid.  Queries are analytic, so clearance values
are exact for the modeled shapes.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kinematics import ChainParams, DEFAULT_PARAMS, chain_frames


@dataclass(frozen=True)
class Capsule:
    """Segment [a, b] inflated by radius r; a == b degenerates to a sphere."""

    a: np.ndarray
    b: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.r <= 0.0:
            raise ValueError("capsule radius must be > 0")


@dataclass(frozen=True)
class BoreCylinder:
    """Infinite cylinder the robot must stay inside."""

    point: np.ndarray
    axis: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("bore axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        if self.radius <= 0.0:
            raise ValueError("bore radius must be > 0")


@dataclass(frozen=True)
class Scene:
    """Immutable collision/targeting scene, scanner frame by convention."""

    bore: BoreCylinder
    patient: tuple[Capsule, ...] = ()
    target: np.ndarray | None = None
    fiducials: np.ndarray | None = None
    entry_hint: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "patient", tuple(self.patient))
        if self.target is not None:
            object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.entry_hint is not None:
            object.__setattr__(self, "entry_hint", np.asarray(self.entry_hint, dtype=float))
        if self.fiducials is not None:
            fid = np.asarray(self.fiducials, dtype=float)
            if fid.ndim != 2 or fid.shape[1] != 3 or fid.shape[0] < 3:
                raise ValueError("fiducials must be an N>=3 list of 3D points")
            object.__setattr__(self, "fiducials", fid)

    def obstacle_array(self) -> np.ndarray:
        """Patient capsules flattened to (N, 7): ax ay az bx by bz r."""
        out = np.empty((len(self.patient), 7))
        for i, cap in enumerate(self.patient):
            out[i, 0:3] = cap.a
            out[i, 3:6] = cap.b
            out[i, 6] = cap.r
        return out.reshape(-1)

    def bore_array(self) -> np.ndarray:
        return np.concatenate((self.bore.point, self.bore.axis, [self.bore.radius]))

    def transformed(self, R: np.ndarray, t: np.ndarray) -> "Scene":
        """The same scene expressed in another frame via p' = R p + t."""
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        return Scene(
            bore=BoreCylinder(R @ self.bore.point + t, R @ self.bore.axis, self.bore.radius),
            patient=tuple(Capsule(R @ c.a + t, R @ c.b + t, c.r) for c in self.patient),
            target=None if self.target is None else R @ self.target + t,
            fiducials=None if self.fiducials is None else self.fiducials @ R.T + t,
            entry_hint=None if self.entry_hint is None else R @ self.entry_hint + t,
        )


@dataclass(frozen=True)
class RobotShape:
    """Capsule radii for the five moving bodies, in chain order:
    back-end carriage, three arm links, insertion stage."""

    carriage_r: float = 0.05
    link1_r: float = 0.015
    link2_r: float = 0.015
    link3_r: float = 0.015
    stage_r: float = 0.012

    def __post_init__(self):
        if min(self.carriage_r, self.link1_r, self.link2_r, self.link3_r, self.stage_r) <= 0.0:
            raise ValueError("link radii must be > 0")

    @staticmethod
    def for_params(params: ChainParams, slenderness: float = 0.2) -> "RobotShape":
        """Arm link radii proportional to link length; defaults elsewhere."""
        return RobotShape(
            link1_r=slenderness * params.L1,
            link2_r=slenderness * params.L2,
            link3_r=slenderness * params.L3,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.carriage_r, self.link1_r, self.link2_r,
                         self.link3_r, self.stage_r])


DEFAULT_SHAPE = RobotShape()

_CAP_ENDPOINTS = (
    (_kernels.F_CARRIAGE, _kernels.F_MOUNT),
    (_kernels.F_MOUNT, _kernels.F_ELBOW1),
    (_kernels.F_ELBOW1, _kernels.F_ELBOW2),
    (_kernels.F_ELBOW2, _kernels.F_ARMEND),
    (_kernels.F_ARMEND, _kernels.F_HUB),
)


def segment_distance(a1, b1, a2, b2) -> float:
    """Euclidean minimum distance between segments [a1,b1] and [a2,b2]."""
    return float(_kernels.seg_seg_distance(
        np.ascontiguousarray(a1, dtype=float), np.ascontiguousarray(b1, dtype=float),
        np.ascontiguousarray(a2, dtype=float), np.ascontiguousarray(b2, dtype=float)))


def link_capsules(q, params: ChainParams = DEFAULT_PARAMS,
                  shape: RobotShape = DEFAULT_SHAPE) -> list[Capsule]:
    """One capsule per moving body, endpoints at the chain frame origins."""
    f = chain_frames(q, params)
    radii = shape.as_array()
    return [Capsule(f[ia:ia + 3].copy(), f[ib:ib + 3].copy(), float(radii[i]))
            for i, (ia, ib) in enumerate(_CAP_ENDPOINTS)]


def needle_segment(q, params: ChainParams = DEFAULT_PARAMS) -> tuple[np.ndarray, np.ndarray]:
    """Exposed needle as a zero-radius segment from hub to tip."""
    f = chain_frames(q, params)
    return f[_kernels.F_HUB:_kernels.F_HUB + 3].copy(), f[_kernels.F_TIP:_kernels.F_TIP + 3].copy()


def clearance(q, scene: Scene, params: ChainParams = DEFAULT_PARAMS,
              shape: RobotShape = DEFAULT_SHAPE,
              needle_check_len: float = -1.0) -> float:
    """Minimum signed distance of the robot to obstacles and the bore wall.

    Negative values are penetration depth.  needle_check_len limits how much
    of the needle (measured from the hub) participates in patient checks:
    negative means the full needle, 0 exempts it entirely.  Once the workflow
    is inserting, the needle is supposed to puncture, so callers exempt the
    part distal to the entry point; robot links are never exempt.
    """
    f = chain_frames(q, params)
    obs = scene.obstacle_array()
    return float(_kernels.min_clearance(
        f, shape.as_array(), obs, len(scene.patient), scene.bore_array(),
        float(needle_check_len)))


def in_collision(q, scene: Scene, params: ChainParams = DEFAULT_PARAMS,
                 shape: RobotShape = DEFAULT_SHAPE,
                 needle_check_len: float = -1.0) -> bool:
    return clearance(q, scene, params, shape, needle_check_len) < 0.0
