"""Rigid robot↔scanner calibration from paired fiducial points.

Closed-form least-squares fit (cross-covariance SVD with a determinant
guard, so mirrored inputs still yield a proper rotation).  FRE is the RMS
residual of the fit.
"""

from dataclasses import dataclass

import numpy as np


class RegistrationError(ValueError):
    pass


class InsufficientPointsError(RegistrationError):
    pass


class DegenerateFiducialsError(RegistrationError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    """x_scanner = R @ x_robot + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("RigidTransform needs a 3x3 R and 3-vector t")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def to_json_dict(self) -> dict:
        return {"R": [float(v) for v in self.R.reshape(-1)],
                "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.array(d["R"], dtype=float).reshape(3, 3),
                              np.array(d["t"], dtype=float))


@dataclass(frozen=True)
class FiducialSet:
    """Paired fiducial coordinates: robot frame and scanner frame, N >= 3."""

    robot_pts: np.ndarray
    scanner_pts: np.ndarray

    def __post_init__(self):
        rp = np.asarray(self.robot_pts, dtype=float)
        sp = np.asarray(self.scanner_pts, dtype=float)
        if rp.ndim != 2 or rp.shape[1] != 3 or rp.shape != sp.shape:
            raise ValueError("fiducial lists must be matching Nx3 arrays")
        object.__setattr__(self, "robot_pts", rp)
        object.__setattr__(self, "scanner_pts", sp)


def register(fid: FiducialSet) -> tuple[RigidTransform, float]:
    """Best rigid transform mapping robot points onto scanner points.

    Minimizes sum ||R p_i + t - s_i||^2; returns (transform, FRE) where
    FRE = sqrt(mean squared residual).  Raises InsufficientPointsError for
    N < 3 and DegenerateFiducialsError for collinear robot points.
    """
    P = fid.robot_pts
    S = fid.scanner_pts
    n = P.shape[0]
    if n < 3:
        raise InsufficientPointsError(f"need at least 3 fiducial pairs, got {n}")

    pc = P.mean(axis=0)
    sc = S.mean(axis=0)
    P0 = P - pc
    S0 = S - sc

    sv = np.linalg.svd(P0, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateFiducialsError("fiducials are collinear (rank < 2)")

    H = P0.T @ S0
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = sc - R @ pc

    resid = (P @ R.T + t) - S
    fre = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return RigidTransform(R, t), fre


def apply(T: RigidTransform, p) -> np.ndarray:
    return T.R @ np.asarray(p, dtype=float) + T.t


def inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.R.T
    return RigidTransform(Rt, -(Rt @ T.t))


def compose(T2: RigidTransform, T1: RigidTransform) -> RigidTransform:
    """Transform applying T1 first, then T2."""
    return RigidTransform(T2.R @ T1.R, T2.R @ T1.t + T2.t)
