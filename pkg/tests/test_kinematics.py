import math

import numpy as np
import pytest

from crane_sim import kinematics as kin
from crane_sim.kinematics import (
    ChainParams, JointLimitError, NeedlePose, forward_kinematics,
    geometric_jacobian, task_jacobian, manipulability, joint_limit_margin,
    axis_perp_basis, JOINT_LOWER, JOINT_UPPER,
)

PARAMS = ChainParams(L0=0.10, L1=0.07, L2=0.07, L3=0.07, d0=0.05)


# --- independent homogeneous-matrix-product oracle -------------------------

def _hom(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def oracle_fk(q, params=PARAMS):
    T = _hom(t=[q[0], q[1], q[2]])
    T = T @ _hom(R=_rz(q[3]))
    T = T @ _hom(t=[0, 0, params.L0])
    T = T @ _hom(R=_rx(q[4]))
    T = T @ _hom(t=[0, 0, params.L1])
    T = T @ _hom(R=_ry(q[5]))
    T = T @ _hom(t=[0, 0, params.L2])
    T = T @ _hom(R=_rx(q[6]))
    T = T @ _hom(t=[0, 0, params.L3 + params.d0 + q[7]])
    return T[:3, 3], T[:3, 2]


def random_valid_configs(rng, n, margin=1e-3, q8_max=0.3):
    lo = JOINT_LOWER.copy()
    hi = JOINT_UPPER.copy()
    hi[7] = q8_max
    span = hi - lo
    return lo + margin * span + rng.random((n, 8)) * span * (1 - 2 * margin)


# --- forward kinematics -----------------------------------------------------

def test_home_config_tip():
    pose = forward_kinematics(np.zeros(8), PARAMS)
    # collinear chain: 0.10 + 3*0.07 + 0.05
    np.testing.assert_allclose(pose.p, [0.0, 0.0, 0.36], atol=1e-15)
    np.testing.assert_allclose(pose.u, [0.0, 0.0, 1.0], atol=0)


def test_prismatic_x_translation():
    q = np.zeros(8)
    q[0] = 0.1
    pose = forward_kinematics(q, PARAMS)
    np.testing.assert_allclose(pose.p, [0.1, 0.0, 0.36], atol=1e-15)


def test_fk_q5_right_angle_matches_oracle():
    q = np.array([0, 0, 0, 0, math.pi / 2, 0, 0, 0], dtype=float)
    pose = forward_kinematics(q, PARAMS)
    p_exp, u_exp = oracle_fk(q)
    # the remaining 0.26 m of chain folds onto -Y at the arm mount
    np.testing.assert_allclose(p_exp, [0.0, -0.26, 0.10], atol=1e-12)
    np.testing.assert_allclose(pose.p, p_exp, atol=1e-12)
    np.testing.assert_allclose(pose.u, u_exp, atol=1e-12)


def test_fk_matches_matrix_chain_oracle_random():
    rng = np.random.default_rng(7)
    for q in random_valid_configs(rng, 300):
        pose = forward_kinematics(q, PARAMS)
        p_exp, u_exp = oracle_fk(q)
        np.testing.assert_allclose(pose.p, p_exp, atol=1e-12)
        np.testing.assert_allclose(pose.u, u_exp, atol=1e-12)


def test_fk_deterministic_bit_exact():
    rng = np.random.default_rng(11)
    for q in random_valid_configs(rng, 20):
        a = forward_kinematics(q.copy(), PARAMS)
        b = forward_kinematics(q.copy(), PARAMS)
        assert a.p.tobytes() == b.p.tobytes()
        assert a.u.tobytes() == b.u.tobytes()


def test_prismatic_translation_equivariance():
    rng = np.random.default_rng(13)
    for q in random_valid_configs(rng, 50):
        q = q.copy()
        q[0] = 0.0
        delta = float(rng.uniform(-0.15, 0.15))
        q2 = q.copy()
        q2[0] = delta
        a = forward_kinematics(q, PARAMS)
        b = forward_kinematics(q2, PARAMS)
        np.testing.assert_allclose(b.p - a.p, [delta, 0, 0], atol=1e-15)
        np.testing.assert_array_equal(a.u, b.u)


def test_needle_axis_unit_norm():
    rng = np.random.default_rng(17)
    for q in random_valid_configs(rng, 200):
        u = forward_kinematics(q, PARAMS).u
        assert abs(np.linalg.norm(u) - 1.0) <= 1e-9


def test_limit_violations_rejected():
    q = np.zeros(8)
    q[3] = math.pi + 0.01
    with pytest.raises(JointLimitError, match="q4"):
        forward_kinematics(q, PARAMS)
    q = np.zeros(8)
    q[7] = -1e-9
    with pytest.raises(JointLimitError, match="q8"):
        forward_kinematics(q, PARAMS)
    q = np.zeros(8)
    q[0] = 0.25
    with pytest.raises(JointLimitError, match="q1"):
        geometric_jacobian(q, PARAMS)


# --- jacobians ---------------------------------------------------------------

def fd_position_jacobian(q, params, h=1e-7):
    J = np.zeros((3, 8))
    for j in range(8):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        J[:, j] = (oracle_fk(qp, params)[0] - oracle_fk(qm, params)[0]) / (2 * h)
    return J


def fd_axis_jacobian(q, params, h=1e-7):
    J = np.zeros((3, 8))
    for j in range(8):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        J[:, j] = (oracle_fk(qp, params)[1] - oracle_fk(qm, params)[1]) / (2 * h)
    return J


def test_jacobian_trivial_columns():
    rng = np.random.default_rng(19)
    for q in random_valid_configs(rng, 10):
        J = geometric_jacobian(q, PARAMS)
        np.testing.assert_array_equal(J[:, 0], [1, 0, 0, 0, 0, 0])
    J = geometric_jacobian(np.zeros(8), PARAMS)
    np.testing.assert_array_equal(J[:, 7], [0, 0, 1, 0, 0, 0])


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(23)
    for q in random_valid_configs(rng, 200, margin=2e-3):
        J = geometric_jacobian(q, PARAMS)
        assert np.max(np.abs(J[:3] - fd_position_jacobian(q, PARAMS))) < 1e-6
        # angular rows drive the axis: u̇_j = ω_j x u
        u = forward_kinematics(q, PARAMS).u
        udot = np.column_stack([np.cross(J[3:, j], u) for j in range(8)])
        assert np.max(np.abs(udot - fd_axis_jacobian(q, PARAMS))) < 1e-6


def test_task_jacobian_trunnion_column_vanishes_at_home():
    Jt = task_jacobian(np.zeros(8), PARAMS)
    # trunnion roll spins about the needle axis at home: no task motion
    np.testing.assert_allclose(Jt[3:, 3], 0.0, atol=1e-15)


def test_task_jacobian_predicts_axis_rate():
    rng = np.random.default_rng(29)
    for q in random_valid_configs(rng, 100, margin=2e-3):
        u = forward_kinematics(q, PARAMS).u
        B = axis_perp_basis(u)
        Jt = task_jacobian(q, PARAMS)
        b1, b2 = B[:, 0], B[:, 1]
        # u̇ = -b2 (b1·ω) + b1 (b2·ω): reconstruct from the projected rows
        udot = np.column_stack([-b2 * Jt[3, j] + b1 * Jt[4, j] for j in range(8)])
        assert np.max(np.abs(udot - fd_axis_jacobian(q, PARAMS))) < 1e-6


# --- manipulability ----------------------------------------------------------

def test_manipulability_positive_at_home():
    assert manipulability(np.zeros(8), PARAMS) > 0.0


def test_manipulability_equals_singular_value_product():
    rng = np.random.default_rng(31)
    for q in random_valid_configs(rng, 200):
        w = manipulability(q, PARAMS)
        Js = kin.scale_mixed_units(task_jacobian(q, PARAMS))
        sv = np.linalg.svd(Js, compute_uv=False)
        assert abs(w - float(np.prod(sv))) < 1e-9 * max(1.0, w)


def test_manipulability_basis_invariance():
    rng = np.random.default_rng(37)
    for q in random_valid_configs(rng, 50):
        u = forward_kinematics(q, PARAMS).u
        B = axis_perp_basis(u)
        ang = rng.uniform(0, 2 * math.pi)
        Q = np.array([[math.cos(ang), -math.sin(ang)],
                      [math.sin(ang), math.cos(ang)]])
        w1 = manipulability(q, PARAMS)
        w2 = manipulability(q, PARAMS, basis=B @ Q)
        assert abs(w1 - w2) <= 1e-9 * max(1.0, w1)


def test_manipulability_zero_at_singularity():
    # q5 = pi/2, q6 = 0, q7 = -pi/2 leaves u = +Z while the wrist axes'
    # tilt projections collapse to one direction: task rank 4.
    q = np.array([0, 0, 0, 0, math.pi / 2, 0, -math.pi / 2, 0], dtype=float)
    Js = kin.scale_mixed_units(task_jacobian(q, PARAMS))
    sv = np.linalg.svd(Js, compute_uv=False)
    assert sv[-1] < 1e-12          # rank < 5
    assert manipulability(q, PARAMS) < 1e-6


# --- joint limit margin ------------------------------------------------------

def test_margin_centered_is_one():
    centered = (JOINT_LOWER[:7] + JOINT_UPPER[:7]) / 2
    q = np.concatenate([centered, [0.123]])
    assert joint_limit_margin(q) == pytest.approx(1.0)


def test_margin_zero_at_limit():
    centered = (JOINT_LOWER[:7] + JOINT_UPPER[:7]) / 2
    q = np.concatenate([centered, [0.0]])
    q[3] = math.pi
    assert joint_limit_margin(q) == pytest.approx(0.0, abs=1e-15)


def test_margin_arithmetic_example():
    centered = (JOINT_LOWER[:7] + JOINT_UPPER[:7]) / 2
    q = np.concatenate([centered, [0.0]])
    q[0] = 0.1
    # 4 * 0.3 * 0.1 / 0.4^2
    assert joint_limit_margin(q) == pytest.approx(0.75, abs=1e-12)


def test_margin_ignores_insertion_depth():
    centered = (JOINT_LOWER[:7] + JOINT_UPPER[:7]) / 2
    a = joint_limit_margin(np.concatenate([centered, [0.0]]))
    b = joint_limit_margin(np.concatenate([centered, [5.0]]))
    assert a == b == pytest.approx(1.0)


# --- misc types --------------------------------------------------------------

def test_needle_pose_rejects_non_unit_axis():
    with pytest.raises(ValueError, match="unit"):
        NeedlePose(np.zeros(3), np.array([0.0, 0.0, 1.1]))


def test_chain_params_rejects_nonpositive_lengths():
    with pytest.raises(ValueError):
        ChainParams(L1=0.0)
    with pytest.raises(ValueError):
        ChainParams(d0=-0.01)
