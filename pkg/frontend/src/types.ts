// JSON bridge message shapes, schema v1 (mirrors the teleop service).

export type Vec3 = [number, number, number];

export type WorkflowStateName =
  | "CALIBRATE"
  | "PLAN_SETUP"
  | "REVIEW"
  | "MOVE_TO_SETUP"
  | "TELEOP_ITERATE"
  | "TARGET_REACHED";

export const WORKFLOW_STEPS: WorkflowStateName[] = [
  "CALIBRATE",
  "PLAN_SETUP",
  "REVIEW",
  "MOVE_TO_SETUP",
  "TELEOP_ITERATE",
  "TARGET_REACHED",
];

export type SafetyStateName = "BOOT" | "IDLE" | "ENABLED" | "FAULT_LATCHED";

export const FAULT_REASONS: Record<number, string> = {
  0: "none",
  1: "heartbeat timeout",
  2: "emergency stop",
  3: "watchdog",
  4: "clutch thermal",
};

export interface Telemetry {
  v: 1;
  type: "telemetry";
  t_ns: number;
  workflow: WorkflowStateName;
  halted: boolean;
  joints: number[] | null;
  needle: { p: Vec3; u: Vec3 } | null;
  safety: { state: SafetyStateName; reason: number };
  clutch: { temps: [number, number]; bits: number } | null;
  target: Vec3 | null;
  scan: {
    n: number;
    tip: Vec3;
    axis: Vec3;
    distance_to_target_mm: number;
    reached: boolean;
  } | null;
  plan: {
    tips: Vec3[];
    setup_tip: Vec3;
    setup_axis: Vec3;
    duration_s: number;
  } | null;
  fre: number | null;
}

export interface SceneDoc {
  bore: { axis_point: Vec3; axis_dir: Vec3; radius: number };
  patient: { a: Vec3; b: Vec3; r: number }[];
  fiducials: Vec3[] | null;
  target: Vec3 | null;
  entry_hint: Vec3 | null;
}

export type JogAxis = "x" | "y" | "z" | "tilt_a" | "tilt_b";

export type CommandType =
  | "calibrate"
  | "set_target"
  | "confirm_setup"
  | "reject_setup"
  | "jog"
  | "insert"
  | "retract"
  | "request_scan"
  | "estop"
  | "clear_fault"
  | "enable";

export interface Reply {
  v: 1;
  type: "ack" | "error";
  event?: string;
  message?: string;
  state?: string;
  [key: string]: unknown;
}

export function isTelemetry(msg: unknown): msg is Telemetry {
  return (
    typeof msg === "object" &&
    msg !== null &&
    (msg as { type?: string }).type === "telemetry"
  );
}
