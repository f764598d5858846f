"""JSON configuration and scene loading.

Schemas are strict (unknown keys rejected); violations raise ConfigError
carrying the offending key path so the CLI can exit 2 with a usable
diagnostic.  Scene files follow the documented schema: bore{axis_point,
axis_dir, radius}, patient[{a,b,r}], fiducials[[x,y,z]...], target[x,y,z],
optional entry_hint.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .clutch import ThermalParams
from .collision import BoreCylinder, Capsule, RobotShape, Scene
from .control import (AXIS_PRISMATIC, ControllerConfig, EncoderModel,
                      JointPlant, PidGains, NetworkFaults,
                      PRISMATIC_ENCODER, PRISMATIC_GAINS, PRISMATIC_PLANT,
                      REVOLUTE_ENCODER, REVOLUTE_GAINS, REVOLUTE_PLANT)
from .kinematics import ChainParams, JOINT_LOWER, JOINT_UPPER
from .planning import ObjectiveWeights
from .safety import SafetyConfig
from .teleop import ScriptedEvent, SessionConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _vec3():
    return {"type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3}


SCENE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["bore"],
    "properties": {
        "bore": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis_point", "axis_dir", "radius"],
            "properties": {
                "axis_point": _vec3(),
                "axis_dir": _vec3(),
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "patient": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["a", "b", "r"],
                "properties": {"a": _vec3(), "b": _vec3(),
                               "r": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "fiducials": {"type": "array", "items": _vec3(), "minItems": 3},
        "target": _vec3(),
        "entry_hint": _vec3(),
    },
}

_gain_schema = {
    "type": "object", "additionalProperties": False,
    "properties": {k: {"type": "number"} for k in
                   ("kp", "ki", "kd", "i_clamp", "u_clamp")},
}
_plant_schema = {
    "type": "object", "additionalProperties": False,
    "properties": {k: {"type": "number"} for k in
                   ("inertia", "friction", "effort_max")},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "scene": {"type": "string"},
        "robot_fiducials": {"type": "array", "items": _vec3(), "minItems": 3},
        "robot": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "chain": {
                    "type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                                   for k in ("L0", "L1", "L2", "L3", "d0")},
                },
                "shape": {
                    "type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                                   for k in ("carriage_r", "link1_r", "link2_r",
                                             "link3_r", "stage_r")},
                },
                "joint_limits": {
                    "type": "object", "additionalProperties": False,
                    "required": ["lower", "upper"],
                    "properties": {
                        "lower": {"type": "array", "items": {"type": "number"},
                                  "minItems": 8, "maxItems": 8},
                        "upper": {"type": "array",
                                  "items": {"type": ["number", "null"]},
                                  "minItems": 8, "maxItems": 8},
                    },
                },
            },
        },
        "weights": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in
                           ("manipulability", "clearance", "joint_margin",
                            "log_guard", "clearance_cap")},
        },
        "gains": {
            "type": "object", "additionalProperties": False,
            "properties": {"revolute": _gain_schema, "prismatic": _gain_schema},
        },
        "plants": {
            "type": "object", "additionalProperties": False,
            "properties": {"revolute": _plant_schema, "prismatic": _plant_schema},
        },
        "encoders": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "revolute_counts": {"type": "number", "exclusiveMinimum": 0},
                "prismatic_counts_per_m": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "safety": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "heartbeat_period_ms": {"type": "integer", "exclusiveMinimum": 0},
                "heartbeat_timeout_ms": {"type": "integer", "exclusiveMinimum": 0},
                "overrun_threshold": {"type": "integer", "exclusiveMinimum": 0},
            },
        },
        "thermal": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in
                           ("heat_capacity", "thermal_resistance", "ambient_c",
                            "power_max", "engage_c", "release_c")},
        },
        "clutch": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "stroke": {"type": "number", "exclusiveMinimum": 0},
                "stage_speed": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "session": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in
                           ("convergence_mm", "scan_sigma_pos_mm",
                            "scan_sigma_axis_deg", "setup_standoff_m",
                            "jog_step_mm", "jog_step_rad", "jog_speed_m_s",
                            "jog_speed_rad_s", "plan_starts", "ascent_iters")},
        },
        "step_targets": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in
                           ("settle_tol_rad", "settle_time_s", "overshoot_frac",
                            "tracking_tol_rad")},
        },
        "faults": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "latency_ms": {"type": "number", "minimum": 0},
                "jitter_ms": {"type": "number", "minimum": 0},
                "drop_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "hb_outage_ms": {
                    "type": ["array", "null"],
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 2, "maxItems": 2,
                },
            },
        },
        "script": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["t_ms", "msg"],
                "properties": {
                    "t_ms": {"type": "integer", "minimum": 0},
                    "await_state": {"type": ["string", "null"]},
                    "msg": {"type": "object"},
                },
            },
        },
        "expect": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "terminal": {"type": ["string", "null"]},
                "fault": {"type": ["string", "null"]},
                "max_duration_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def _validate(instance, schema, what: str):
    errors = sorted(Draft202012Validator(schema).iter_errors(instance),
                    key=lambda e: e.json_path)
    if errors:
        err = errors[0]
        raise ConfigError(err.message, f"{what}{err.json_path.lstrip('$')}")


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid json in {path}: {err}") from err


def parse_scene(data: dict, what: str = "scene") -> Scene:
    _validate(data, SCENE_SCHEMA, what)
    bore = data["bore"]
    return Scene(
        bore=BoreCylinder(bore["axis_point"], bore["axis_dir"], bore["radius"]),
        patient=tuple(Capsule(c["a"], c["b"], c["r"])
                      for c in data.get("patient", ())),
        fiducials=data.get("fiducials"),
        target=data.get("target"),
        entry_hint=data.get("entry_hint"),
    )


def load_scene(path) -> Scene:
    return parse_scene(load_json(path), f"scene[{path}]")


@dataclass
class Scenario:
    seed: int
    scene: Scene
    robot_fiducials: np.ndarray
    params: ChainParams
    shape: RobotShape
    joint_limits: tuple | None
    weights: ObjectiveWeights
    controller: ControllerConfig
    session: SessionConfig
    faults: NetworkFaults
    script: list
    expect_terminal: str | None
    expect_fault: str | None
    max_duration_s: float
    step_targets: dict
    raw: dict


def _merged(cls, defaults, overrides: dict):
    kwargs = {f: getattr(defaults, f) for f in defaults.__dataclass_fields__}
    kwargs.update(overrides)
    return cls(**kwargs)


def parse_scenario(data: dict, base_dir: Path) -> Scenario:
    _validate(data, SCENARIO_SCHEMA, "config")
    seed = data.get("seed", 0)

    robot = data.get("robot", {})
    params = _merged(ChainParams, ChainParams(), robot.get("chain", {}))
    shape = _merged(RobotShape, RobotShape(), robot.get("shape", {}))
    joint_limits = None
    if "joint_limits" in robot:
        lower = [float(v) for v in robot["joint_limits"]["lower"]]
        upper = [np.inf if v is None else float(v)
                 for v in robot["joint_limits"]["upper"]]
        joint_limits = (np.array(lower), np.array(upper))

    if "scene" in data:
        scene = load_scene(base_dir / data["scene"])
    else:
        raise ConfigError("scenario needs a scene path", "config.scene")
    fid = data.get("robot_fiducials")
    robot_fiducials = None if fid is None else np.asarray(fid, dtype=float)

    weights = _merged(ObjectiveWeights, ObjectiveWeights(), data.get("weights", {}))

    rev_g = _merged(PidGains, REVOLUTE_GAINS, data.get("gains", {}).get("revolute", {}))
    pri_g = _merged(PidGains, PRISMATIC_GAINS, data.get("gains", {}).get("prismatic", {}))
    rev_p = _merged(JointPlant, REVOLUTE_PLANT, data.get("plants", {}).get("revolute", {}))
    pri_p = _merged(JointPlant, PRISMATIC_PLANT, data.get("plants", {}).get("prismatic", {}))
    enc = data.get("encoders", {})
    rev_e = EncoderModel(enc.get("revolute_counts", REVOLUTE_ENCODER.counts), True)
    pri_e = EncoderModel(enc.get("prismatic_counts_per_m", PRISMATIC_ENCODER.counts), False)

    sdata = data.get("safety", {})
    safety = SafetyConfig(
        heartbeat_period_ns=int(sdata.get("heartbeat_period_ms", 10)) * 1_000_000,
        heartbeat_timeout_ns=int(sdata.get("heartbeat_timeout_ms", 50)) * 1_000_000,
        overrun_threshold=sdata.get("overrun_threshold", 2),
    )
    thermal = _merged(ThermalParams, ThermalParams(), data.get("thermal", {}))
    clutch = data.get("clutch", {})

    controller = ControllerConfig(
        gains=tuple(pri_g if p else rev_g for p in AXIS_PRISMATIC),
        plants=tuple(pri_p if p else rev_p for p in AXIS_PRISMATIC),
        encoders=tuple(pri_e if p else rev_e for p in AXIS_PRISMATIC),
        safety=safety, thermal=thermal,
        stroke=clutch.get("stroke", 0.05),
        stage_speed=clutch.get("stage_speed", 0.02),
    )

    sess = data.get("session", {})
    session = SessionConfig(
        seed=seed,
        convergence_mm=sess.get("convergence_mm", 2.0),
        scan_sigma_pos_m=sess.get("scan_sigma_pos_mm", 0.3) * 1e-3,
        scan_sigma_axis_deg=sess.get("scan_sigma_axis_deg", 0.3),
        setup_standoff_m=sess.get("setup_standoff_m", 0.02),
        jog_step_m=sess.get("jog_step_mm", 0.5) * 1e-3,
        jog_step_rad=sess.get("jog_step_rad", 0.01),
        jog_speed_m_s=sess.get("jog_speed_m_s", 0.01),
        jog_speed_rad_s=sess.get("jog_speed_rad_s", 0.2),
        plan_starts=int(sess.get("plan_starts", 16)),
        ascent_iters=int(sess.get("ascent_iters", 20)),
    )

    f = data.get("faults", {})
    outage = f.get("hb_outage_ms")
    faults = NetworkFaults(
        latency_ns=int(f.get("latency_ms", 0) * 1e6),
        jitter_ns=int(f.get("jitter_ms", 0) * 1e6),
        drop_rate=f.get("drop_rate", 0.0),
        seed=seed + 77,
        hb_outage_ms=None if outage is None else tuple(outage),
    )

    script = [ScriptedEvent(e["t_ms"], e["msg"], e.get("await_state"))
              for e in data.get("script", [])]
    expect = data.get("expect", {})

    return Scenario(
        seed=seed, scene=scene, robot_fiducials=robot_fiducials,
        params=params, shape=shape, joint_limits=joint_limits,
        weights=weights, controller=controller, session=session,
        faults=faults, script=script,
        expect_terminal=expect.get("terminal", "TARGET_REACHED"),
        expect_fault=expect.get("fault"),
        max_duration_s=expect.get("max_duration_s", 60.0),
        step_targets=data.get("step_targets", {
            "settle_tol_rad": 0.001, "settle_time_s": 1.0,
            "overshoot_frac": 0.2, "tracking_tol_rad": 0.01}),
        raw=data,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(load_json(path), path.parent)


def apply_joint_limits(limits: tuple | None) -> None:
    """Install config-provided joint limits process-wide (in place, so every
    module referencing the limit arrays sees them)."""
    if limits is None:
        return
    lower, upper = limits
    if np.any(lower >= upper):
        raise ConfigError("joint_limits: lower must be < upper")
    if lower[7] < 0:
        raise ConfigError("joint_limits: insertion depth lower bound must be >= 0")
    JOINT_LOWER[:] = lower
    JOINT_UPPER[:] = upper
