"""Batch entry points.

Subcommands: simulate (scripted headless scenario), plan (setup pose +
path + audit), register (fiducial fit), serve (controller sim + teleop
service + UI bridge), replay (deterministic re-run diff of an event log).

Exit codes: 0 ok, 2 config error, 3 infeasible, 4 invariant monitor or
expectation failure.  CRANE_LOG sets verbosity (debug/info/warning).
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("crane_sim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_MONITOR = 4

DATA_DIR = Path(__file__).parent / "data"


def _setup_logging():
    level = os.environ.get("CRANE_LOG", "info").lower()
    logging.basicConfig(
        level={"debug": logging.DEBUG, "info": logging.INFO,
               "warning": logging.WARNING}.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crane-sim",
        description="Simulated CT-guided needle robot: planning, 1 kHz "
                    "controller simulation, and teleoperation service.")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scripted scenario headlessly")
    sim.add_argument("--config", default=str(DATA_DIR / "scenario_happy_path.json"))
    sim.add_argument("--seed", type=int, default=None, help="override config seed")
    sim.add_argument("--out", default=None, help="output directory for logs")
    sim.add_argument("--plot", default=None, help="write an SVG joint plot here")

    plan = sub.add_parser("plan", help="optimize a setup pose and plan a path")
    plan.add_argument("--scene", default=None, help="scene JSON (defaults from config)")
    plan.add_argument("--config", default=str(DATA_DIR / "default_config.json"))
    plan.add_argument("--seed", type=int, default=None)
    plan.add_argument("--out", default=None, help="trajectory CSV path")

    reg = sub.add_parser("register", help="fit the robot↔scanner transform")
    reg.add_argument("--fiducials", required=True,
                     help="JSON file with robot-frame fiducial points")
    reg.add_argument("--scene", required=True, help="scene JSON with scanner fiducials")
    reg.add_argument("--out", default=None, help="write transform JSON here")

    srv = sub.add_parser("serve", help="run controller sim + teleop service + UI bridge")
    srv.add_argument("--config", default=str(DATA_DIR / "default_config.json"))
    srv.add_argument("--seed", type=int, default=None)
    srv.add_argument("--realtime", action="store_true",
                     help="pace virtual time to the wall clock")
    srv.add_argument("--listen", default=None, metavar="HOST:PORT",
                     help="run the controller behind a real TCP socket")
    srv.add_argument("--ui-port", type=int, default=8720)

    rep = sub.add_parser("replay", help="re-run a logged session and diff telemetry")
    rep.add_argument("log", help="event log (JSONL) from a previous simulate run")
    rep.add_argument("--config", required=True)
    return p


# --- simulate -------------------------------------------------------------------

def _build_cosim(scenario):
    from .config import ConfigError, apply_joint_limits
    from .control import ControllerSim
    from .teleop import TeleopSession
    apply_joint_limits(scenario.joint_limits)
    if scenario.robot_fiducials is None:
        raise ConfigError("scenario needs robot_fiducials", "config.robot_fiducials")
    session = TeleopSession(scenario.scene, scenario.robot_fiducials,
                            scenario.params, scenario.shape, scenario.weights,
                            scenario.session)
    controller = ControllerSim(scenario.controller)
    return session, controller


def _write_event_log(path: Path, session, telemetry):
    rows = list(session.event_log) + [dict(t, kind="telemetry") for t in telemetry]
    rows.sort(key=lambda r: r["t_ns"])
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_joint_csv(path: Path, snapshots):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns"] + [f"q{i+1}" for i in range(8)]
                   + [f"sp{i+1}" for i in range(8)]
                   + [f"eff{i+1}" for i in range(7)]
                   + ["safety", "fault", "hold_temp", "drive_temp"])
        for s in snapshots:
            w.writerow([s.t_ns] + [repr(v) for v in s.q]
                       + [repr(v) for v in s.setpoint]
                       + [repr(v) for v in s.effort]
                       + [int(s.safety_state), int(s.fault_reason),
                          repr(s.clutch_temps[0]), repr(s.clutch_temps[1])])


def _write_svg(path: Path, snapshots):
    """Minimal line chart of joint positions over time."""
    width, height, pad = 900, 420, 40
    t = np.array([s.t_ns for s in snapshots]) * 1e-9
    qs = np.array([s.q for s in snapshots])
    t_span = max(t[-1] - t[0], 1e-9)
    lo, hi = qs.min(), qs.max()
    span = max(hi - lo, 1e-9)
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for j in range(8):
        pts = " ".join(
            f"{pad + (tt - t[0]) / t_span * (width - 2 * pad):.1f},"
            f"{height - pad - (q - lo) / span * (height - 2 * pad):.1f}"
            for tt, q in zip(t, qs[:, j]))
        parts.append(f'<polyline fill="none" stroke="{colors[j]}" '
                     f'stroke-width="1" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * j}" '
                     f'fill="{colors[j]}" font-size="11">q{j + 1}</text>')
    parts.append(f'<text x="{pad}" y="{height - 8}" font-size="11">time [s]</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def override_seed(scenario, seed: int):
    import dataclasses
    scenario.seed = seed
    scenario.session = dataclasses.replace(scenario.session, seed=seed)
    scenario.faults = dataclasses.replace(scenario.faults, seed=seed + 77)
    return scenario


def cmd_simulate(args) -> int:
    from .config import ConfigError, load_scenario
    from .teleop import WorkflowState, run_cosim
    try:
        scenario = load_scenario(args.config)
        if args.seed is not None:
            override_seed(scenario, args.seed)
        session, controller = _build_cosim(scenario)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    terminal = None if scenario.expect_terminal is None \
        else WorkflowState(scenario.expect_terminal)
    result = run_cosim(session, controller, scenario.script,
                       max_duration_s=scenario.max_duration_s,
                       terminal=terminal, faults=scenario.faults)

    out_dir = Path(args.out) if args.out else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_event_log(out_dir / "events.jsonl", session, result.telemetry)
    _write_joint_csv(out_dir / "joints.csv", result.snapshots)
    if args.plot:
        _write_svg(Path(args.plot), result.snapshots)

    ok = True
    if scenario.expect_terminal is not None and \
            result.reached.value != scenario.expect_terminal:
        log.error("terminal state %s, expected %s", result.reached.value,
                  scenario.expect_terminal)
        ok = False
    if scenario.expect_fault is not None:
        seen = {str(r.get("fault")) for r in session.event_log if r["kind"] == "halt"}
        from .safety import FaultReason
        want = int(FaultReason[scenario.expect_fault])
        if str(want) not in seen:
            log.error("expected fault %s not observed (saw %s)",
                      scenario.expect_fault, seen)
            ok = False
    if result.violations:
        for v in result.violations[:10]:
            log.error("invariant violation: %s", v)
        return EXIT_MONITOR
    log.info("scenario finished in %s ticks, state %s", result.ticks,
             result.reached.value)
    return EXIT_OK if ok else EXIT_MONITOR


# --- plan ------------------------------------------------------------------------

def cmd_plan(args) -> int:
    from .config import ConfigError, load_scenario, load_scene, apply_joint_limits
    from .kinematics import NeedlePose
    from .planning import (CollisionContext, InfeasibleSetupError,
                           PlanningError, UnreachablePoseError,
                           audit_trajectory, objective, optimize_setup_config,
                           plan_path, time_parameterize)
    from .registration import FiducialSet, register, inverse
    from .kinematics import manipulability, joint_limit_margin
    import numpy as np

    try:
        scenario = load_scenario(args.config)
        scene = load_scene(args.scene) if args.scene else scenario.scene
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    apply_joint_limits(scenario.joint_limits)
    seed = args.seed if args.seed is not None else scenario.seed

    if scene.target is None or scene.entry_hint is None:
        log.error("scene needs target and entry_hint for planning")
        return EXIT_CONFIG

    # express the scene in the robot frame via the fiducial fit when possible
    if scene.fiducials is not None and scenario.robot_fiducials is not None:
        T, fre = register(FiducialSet(scenario.robot_fiducials, scene.fiducials))
        inv = inverse(T)
        scene_robot = scene.transformed(inv.R, inv.t)
        log.info("registered scene with FRE %.3e m", fre)
    else:
        scene_robot = scene

    axis = scene_robot.target - scene_robot.entry_hint
    axis = axis / np.linalg.norm(axis)
    tip = scene_robot.entry_hint - scenario.session.setup_standoff_m * axis
    pose = NeedlePose(tip, axis)

    home = np.zeros(8)
    try:
        setup_q = optimize_setup_config(
            pose, scene_robot, home, scenario.weights, scenario.params,
            scenario.shape, seed=seed, n_starts=scenario.session.plan_starts,
            ascent_iters=scenario.session.ascent_iters, lock_insertion=True)
        traj = time_parameterize(plan_path(home, setup_q, scene_robot,
                                           scenario.params, scenario.shape,
                                           seed=seed))
        audit = audit_trajectory(traj, scene_robot, scenario.params, scenario.shape)
    except (UnreachablePoseError, InfeasibleSetupError) as err:
        log.error("infeasible: %s", err)
        return EXIT_INFEASIBLE
    except PlanningError as err:
        log.error("planning failed: %s", err)
        return EXIT_INFEASIBLE

    ctx = CollisionContext(scene_robot, scenario.params, scenario.shape)
    print(f"objective U(q) = {objective(setup_q, ctx, scenario.weights, scenario.params):.6f}")
    print(f"manipulability = {manipulability(setup_q, scenario.params):.6f}")
    print(f"clearance      = {ctx.clearance(setup_q):.6f} m")
    print(f"joint margin   = {joint_limit_margin(setup_q):.6f}")
    print(f"trajectory: {len(traj.waypoints)} samples, {traj.duration:.3f} s, "
          f"audit checked {audit['configs_checked']} configs")

    out = Path(args.out) if args.out else Path.cwd() / "trajectory.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q{i+1}" for i in range(8)])
        for tt, q in zip(traj.times, traj.waypoints):
            w.writerow([repr(float(tt))] + [repr(float(v)) for v in q])
    log.info("wrote %s", out)
    return EXIT_OK


# --- register ----------------------------------------------------------------------

def cmd_register(args) -> int:
    from .config import ConfigError, load_json, load_scene
    from .registration import (DegenerateFiducialsError, FiducialSet,
                               InsufficientPointsError, register)
    try:
        robot_pts = np.asarray(load_json(args.fiducials), dtype=float)
        scene = load_scene(args.scene)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    if scene.fiducials is None:
        log.error("scene has no fiducials")
        return EXIT_CONFIG
    if robot_pts.ndim != 2 or robot_pts.shape[1] != 3 or \
            robot_pts.shape != scene.fiducials.shape:
        log.error("fiducial lists must both be Nx3 with matching N")
        return EXIT_CONFIG
    if len(robot_pts) < 4:
        log.warning("only %d fiducial pairs: FRE has no redundancy", len(robot_pts))
    try:
        T, fre = register(FiducialSet(robot_pts, scene.fiducials))
    except (InsufficientPointsError, DegenerateFiducialsError) as err:
        log.error("registration failed: %s", err)
        return EXIT_CONFIG
    doc = {**T.to_json_dict(), "fre": fre}
    print(json.dumps(doc, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
    return EXIT_OK


# --- serve / replay -----------------------------------------------------------------

def cmd_serve(args) -> int:
    from .config import ConfigError, load_scenario
    try:
        scenario = load_scenario(args.config)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    if args.seed is not None:
        override_seed(scenario, args.seed)
    from .server import serve
    serve(scenario, ui_port=args.ui_port, realtime=args.realtime,
          listen=args.listen)
    return EXIT_OK


def cmd_replay(args) -> int:
    from .config import ConfigError, load_scenario
    from .teleop import ScriptedEvent, WorkflowState, run_cosim
    try:
        scenario = load_scenario(args.config)
        session, controller = _build_cosim(scenario)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    rows = [json.loads(line) for line in Path(args.log).read_text().splitlines()]
    ui_rows = [r for r in rows if r["kind"] == "ui"]
    old_telemetry = [r for r in rows if r["kind"] == "telemetry"]
    script = [ScriptedEvent(r["t_ns"] // 1_000_000, r["msg"]) for r in ui_rows]
    terminal = None if scenario.expect_terminal is None \
        else WorkflowState(scenario.expect_terminal)
    result = run_cosim(session, controller, script,
                       max_duration_s=scenario.max_duration_s,
                       terminal=terminal, faults=scenario.faults)
    new_telemetry = result.telemetry

    diverged = []
    for old in old_telemetry:
        match = next((n for n in new_telemetry if n["t_ns"] == old["t_ns"]), None)
        if match is None:
            diverged.append(f"t={old['t_ns']}: missing telemetry row")
            continue
        if match["workflow"] != old["workflow"]:
            diverged.append(f"t={old['t_ns']}: workflow {match['workflow']} "
                            f"!= {old['workflow']}")
        for key in ("joints", "needle"):
            a, b = old.get(key), match.get(key)
            if (a is None) != (b is None):
                diverged.append(f"t={old['t_ns']}: {key} presence differs")
            elif a is not None and key == "joints":
                if np.max(np.abs(np.array(a) - np.array(b))) > 1e-9:
                    diverged.append(f"t={old['t_ns']}: joints differ")
            elif a is not None and key == "needle":
                if np.max(np.abs(np.array(a["p"]) - np.array(b["p"]))) > 1e-9:
                    diverged.append(f"t={old['t_ns']}: needle tip differs")
    if diverged:
        for d in diverged[:10]:
            log.error("divergence: %s", d)
        return 1
    log.info("replay matched %d telemetry rows", len(old_telemetry))
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {
        "simulate": cmd_simulate,
        "plan": cmd_plan,
        "register": cmd_register,
        "serve": cmd_serve,
        "replay": cmd_replay,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
