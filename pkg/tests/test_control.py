import math

import numpy as np
import pytest

from crane_sim import protocol
from crane_sim.control import (
    ControllerConfig, ControllerSim, JointPlant, NetworkFaults, PidGains,
    PidState, PlantState, REVOLUTE_ENCODER, REVOLUTE_GAINS, REVOLUTE_PLANT,
    VirtualLink, encoder_decode, encoder_read, pid_step, plant_step,
    run_scheduler, CONTROL_PERIOD_NS,
)
from crane_sim.planning import JointTrajectory, time_parameterize
from crane_sim.protocol import Enable, Heartbeat, Setpoint, encode_frame
from crane_sim.safety import FaultReason, SafetyState


# --- pid_step ------------------------------------------------------------------

def test_zero_error_zero_output():
    u, st = pid_step(REVOLUTE_GAINS, PidState(), 0.5, 0.5, 1e-3)
    assert u == 0.0
    u, st = pid_step(REVOLUTE_GAINS, st, 0.5, 0.5, 1e-3)
    assert u == pytest.approx(0.0, abs=1e-9)


def test_pure_proportional():
    gains = PidGains(kp=1.0, ki=0.0, kd=0.0, i_clamp=1.0, u_clamp=10.0)
    u, _ = pid_step(gains, PidState(), 0.5, 0.0, 1e-3)
    assert u == 0.5


def test_output_clamped():
    gains = PidGains(kp=100.0, ki=0.0, kd=0.0, i_clamp=1.0, u_clamp=2.0)
    u, _ = pid_step(gains, PidState(), 1.0, 0.0, 1e-3)
    assert u == 2.0


def test_integral_clamped_and_conditional():
    gains = PidGains(kp=0.0, ki=10.0, kd=0.0, i_clamp=0.05, u_clamp=100.0)
    st = PidState()
    for _ in range(1000):
        _, st = pid_step(gains, st, 1.0, 0.0, 1e-3)
        assert abs(st.integral) <= 0.05
    # saturated output in the error direction freezes the integral
    gains = PidGains(kp=10.0, ki=1.0, kd=0.0, i_clamp=10.0, u_clamp=1.0)
    st = PidState()
    _, st = pid_step(gains, st, 1.0, 0.0, 1e-3)
    frozen = st.integral
    _, st = pid_step(gains, st, 1.0, 0.0, 1e-3)
    assert st.integral == frozen == 0.0


def test_derivative_on_measurement_no_setpoint_kick():
    gains = PidGains(kp=0.0, ki=0.0, kd=1.0, i_clamp=1.0, u_clamp=1000.0)
    st = PidState()
    _, st = pid_step(gains, st, 0.0, 0.0, 1e-3)
    # setpoint jumps, measurement steady: derivative term stays zero
    u, st = pid_step(gains, st, 5.0, 0.0, 1e-3)
    assert u == 0.0
    # measurement moves: derivative acts on it, opposing motion
    u, st = pid_step(gains, st, 5.0, 0.1, 1e-3)
    assert u == pytest.approx(-0.1 / 1e-3)


# --- plant_step -------------------------------------------------------------------

def test_plant_at_rest_stays():
    s = plant_step(PlantState(1.0, 0.0), REVOLUTE_PLANT, 0.0, 1e-4)
    assert s.position == 1.0 and s.velocity == 0.0


def test_plant_first_order_velocity_response():
    # constant torque from rest: v(t) = (u/b)(1 - exp(-b t / I))
    plant = JointPlant(inertia=0.01, friction=0.1, effort_max=5.0)
    dt = 1e-4
    u = 0.5
    tau = plant.inertia / plant.friction
    s = PlantState()
    t = 0.0
    while t < 5 * tau:
        s = plant_step(s, plant, u, dt)
        t += dt
    v_exact = (u / plant.friction) * (1 - math.exp(-t / tau))
    assert abs(s.velocity - v_exact) / v_exact < 0.01


def test_effort_clamped_to_limit():
    plant = JointPlant(inertia=0.01, friction=0.0, effort_max=2.0)
    a = plant_step(PlantState(), plant, 100.0, 1e-3)
    b = plant_step(PlantState(), plant, 2.0, 1e-3)
    assert a == b


# --- encoder ---------------------------------------------------------------------

def test_encoder_zero():
    assert encoder_read(REVOLUTE_ENCODER, 0.0) == 0


def test_encoder_half_turn():
    assert encoder_read(REVOLUTE_ENCODER, math.pi) == 8192


def test_encoder_roundtrip_within_one_count():
    rng = np.random.default_rng(3)
    res = REVOLUTE_ENCODER.resolution
    positions = rng.uniform(-math.pi, math.pi, size=100_000)
    counts = np.floor(positions / res)
    back = counts * res
    err = np.abs(back - positions)
    assert err.max() < res
    # spot-check scalar api agreement
    for pos in positions[:200]:
        assert encoder_decode(REVOLUTE_ENCODER, encoder_read(REVOLUTE_ENCODER, pos)) == \
            pytest.approx(pos, abs=res)


# --- controller tick / scheduler ----------------------------------------------------

def test_exact_tick_count():
    log = run_scheduler(1.0, enable_at_ms=None)
    assert log.tick_count == 1000
    log = run_scheduler(0.0, enable_at_ms=None)
    assert log.tick_count == 0


def test_hold_without_setpoints_drift_below_encoder_resolution():
    log = run_scheduler(10.0, keep_every=100)
    assert log.violations == []
    res = REVOLUTE_ENCODER.resolution
    for snap in log.snapshots:
        assert np.all(np.abs(snap.q[3:7]) < res)
    assert log.snapshots[-1].safety_state == SafetyState.ENABLED


def test_step_response_meets_targets():
    def step_fn(t_ms):
        if t_ms == 100:
            q = [0.0] * 8
            for j in (3, 4, 5, 6):
                q[j] = 0.1
            return q
        return None

    log = run_scheduler(1.2, setpoints=step_fn)
    assert log.violations == []
    for j in (3, 4, 5, 6):
        qs = np.array([s.q[j] for s in log.snapshots])
        t = np.array([s.t_ns for s in log.snapshots]) / 1e9
        overshoot = (qs.max() - 0.1) / 0.1
        assert overshoot < 0.20
        settled = None
        inside = np.abs(qs - 0.1) <= 0.001
        for i in range(len(qs)):
            if inside[i:].all():
                settled = t[i]
                break
        assert settled is not None and settled - 0.101 <= 1.0


def test_trajectory_tracking_error():
    q_to = np.zeros(8)
    q_to[3:7] = [0.6, -0.5, 0.4, -0.6]
    traj = time_parameterize(JointTrajectory(np.vstack((np.zeros(8), q_to))))
    table = {int(round(t * 1000)) + 50: q for t, q in zip(traj.times, traj.waypoints)}
    duration = traj.duration + 0.4

    log = run_scheduler(duration + 0.1, setpoints=table.get)
    assert log.violations == []
    sp = np.array([s.setpoint for s in log.snapshots])
    qq = np.array([s.q for s in log.snapshots])
    err = np.abs(qq[:, 3:7] - sp[:, 3:7])
    assert err.max() < 0.01
    # and the goal is reached
    assert np.all(np.abs(qq[-1, 3:7] - q_to[3:7]) < 0.001)


def test_fault_tick_zeroes_effort():
    # heartbeat outage mid-run: efforts must be zero on every non-ENABLED tick
    def step_fn(t_ms):
        if t_ms == 50:
            q = [0.0] * 8
            q[3] = 0.3
            return q
        return None

    faults = NetworkFaults(hb_outage_ms=(200, 10_000))
    log = run_scheduler(1.0, faults=faults, setpoints=step_fn)
    saw_fault = False
    for snap in log.snapshots:
        if snap.safety_state != SafetyState.ENABLED:
            assert np.all(snap.effort == 0.0)
        if snap.safety_state == SafetyState.FAULT_LATCHED:
            saw_fault = True
            assert snap.fault_reason == FaultReason.HB_TIMEOUT
    assert saw_fault
    assert log.violations == []


def test_heartbeat_outage_faults_within_timeout_plus_tick():
    faults = NetworkFaults(hb_outage_ms=(300, 10_000))
    log = run_scheduler(0.6, faults=faults)
    fault_t = next(s.t_ns for s in log.snapshots
                   if s.safety_state == SafetyState.FAULT_LATCHED)
    last_hb_ms = 290  # last heartbeat sent before the outage window
    age_ms = fault_t / 1e6 - last_hb_ms
    assert 50.0 < age_ms <= 51.0


def test_setpoint_ignored_when_not_enabled():
    def step_fn(t_ms):
        if t_ms == 5:
            q = [0.0] * 8
            q[3] = 0.5
            return q
        return None

    log = run_scheduler(0.3, enable_at_ms=None, setpoints=step_fn)
    assert log.violations == []
    for snap in log.snapshots:
        assert not snap.applied_setpoint
        assert np.all(snap.setpoint[:7] == 0.0)
        assert np.all(snap.effort == 0.0)


def test_stale_and_duplicate_setpoints_dropped():
    ctrl = ControllerSim()
    link = VirtualLink()
    t = 0
    link.send(t, encode_frame(Heartbeat(0, t)))
    link.send(t, encode_frame(Enable(1, t)))
    ctrl.tick(0, link.poll(0))
    q1 = (0.1, 0, 0, 0, 0, 0, 0, 0)
    q2 = (0.2, 0, 0, 0, 0, 0, 0, 0)
    buf = encode_frame(Setpoint(10, 1, q1)) + encode_frame(Setpoint(10, 2, q2)) \
        + encode_frame(Setpoint(9, 3, q2))
    _, snap = ctrl.tick(CONTROL_PERIOD_NS, buf)
    assert snap.setpoint[0] == 0.1
    assert snap.duplicates == 2


def test_malformed_frames_counted_and_surfaced():
    ctrl = ControllerSim()
    garbage = b"CRNE" + b"\x00" * 30
    out, snap = ctrl.tick(0, garbage)
    assert snap.malformed >= 1
    # feedback frame carries the malformed count in its header flags
    import struct
    flags = struct.unpack_from("<H", out, 6)[0]
    assert flags == snap.malformed


def test_clutch_thermal_fault_latches_safety():
    # cripple the clutch heater: insertion can never engage, the driver
    # times out, and the controller latches a clutch fault
    from crane_sim.clutch import ThermalParams
    from crane_sim.control import ControllerConfig
    weak = ThermalParams(power_max=2.3)  # steady state 68 C < engage 70 C
    ctrl = ControllerSim(ControllerConfig(thermal=weak))
    ctrl.driver.hold.temp_c = weak.engage_c + 2.0
    link = VirtualLink()
    link.send(0, encode_frame(Heartbeat(0, 0)))
    link.send(0, encode_frame(Enable(1, 0)))
    q = [0.0] * 8
    q[7] = 0.05
    link.send(0, encode_frame(Setpoint(2, 0, tuple(q))))
    seq = 3
    fault = None
    for k in range(40_000):
        t_ns = k * CONTROL_PERIOD_NS
        extra = b""
        if k and k % 10 == 0:
            extra = encode_frame(Heartbeat(seq, t_ns))
            seq += 1
        _, snap = ctrl.tick(t_ns, link.poll(t_ns) + extra)
        if snap.safety_state == SafetyState.FAULT_LATCHED:
            fault = snap
            break
    assert fault is not None
    assert fault.fault_reason == FaultReason.CLUTCH_THERMAL
    assert np.all(fault.effort == 0.0)


def test_virtual_link_preserves_order_under_jitter():
    link = VirtualLink(seed=7, latency_ns=2_000_000, jitter_ns=3_000_000)
    sent = [encode_frame(Heartbeat(i, i * 1000)) for i in range(50)]
    for i, frame in enumerate(sent):
        link.send(i * 1_000_000, frame)
    got = bytearray()
    for t_ms in range(100):
        got.extend(link.poll(t_ms * 1_000_000))
    assert bytes(got) == b"".join(sent)


def test_scheduler_deterministic():
    faults = NetworkFaults(latency_ns=1_500_000, jitter_ns=1_000_000,
                           drop_rate=0.05, seed=11)
    a = run_scheduler(0.5, faults=faults)
    b = run_scheduler(0.5, faults=faults)
    qa = np.array([s.q for s in a.snapshots])
    qb = np.array([s.q for s in b.snapshots])
    assert qa.tobytes() == qb.tobytes()


def test_fused_tick_matches_composed_ops():
    # the kernel tick must equal pid_step + plant substeps + encoder composed
    rng = np.random.default_rng(5)
    gains = REVOLUTE_GAINS
    plant = REVOLUTE_PLANT
    enc = REVOLUTE_ENCODER
    cfg = ControllerConfig(
        gains=(gains,) * 7, plants=(plant,) * 7, encoders=(enc,) * 7)
    ctrl = ControllerSim(cfg)
    link = VirtualLink()
    link.send(0, encode_frame(Heartbeat(0, 0)))
    link.send(0, encode_frame(Enable(1, 0)))
    setp = rng.uniform(-0.3, 0.3, size=8)
    link.send(0, encode_frame(Setpoint(2, 0, tuple(setp))))

    # reference: scalar composition per joint
    ref_x = np.zeros(7)
    ref_v = np.zeros(7)
    ref_states = [PidState() for _ in range(7)]

    buf = link.poll(0)
    hb_seq = 10
    for k in range(200):
        t_ns = k * CONTROL_PERIOD_NS
        extra = b""
        if k > 0 and k % 10 == 0:
            extra = encode_frame(Heartbeat(hb_seq, t_ns))
            hb_seq += 1
        _, snap = ctrl.tick(t_ns, buf + extra if k == 0 else extra)
        for j in range(7):
            measured = encoder_decode(enc, encoder_read(enc, ref_x[j]))
            u, ref_states[j] = pid_step(gains, ref_states[j], setp[j], measured, 1e-3)
            s = PlantState(ref_x[j], ref_v[j])
            for _ in range(10):
                s = plant_step(s, plant, u, 1e-4)
            ref_x[j], ref_v[j] = s.position, s.velocity
            assert snap.effort[j] == pytest.approx(min(max(u, -plant.effort_max),
                                                       plant.effort_max), abs=0)
        np.testing.assert_array_equal(snap.q[:7], ref_x)
