// Which controls are live, derived purely from the last telemetry snapshot.
//
// The rule mirrors the service's own workflow table and is deliberately
// never looser: a button this module enables must be a message the service
// accepts in that state (round-trip rejections are still handled, but they
// should be unreachable through the UI).

import { CommandType, Telemetry } from "./types.js";

const BY_STATE: Record<string, CommandType[]> = {
  CALIBRATE: ["calibrate"],
  PLAN_SETUP: ["set_target"],
  REVIEW: ["confirm_setup", "reject_setup", "set_target", "enable"],
  MOVE_TO_SETUP: [],
  TELEOP_ITERATE: [
    "jog",
    "insert",
    "retract",
    "request_scan",
    "set_target",
    "enable",
  ],
  TARGET_REACHED: ["request_scan"],
};

export function enabledCommands(t: Telemetry | null): Set<CommandType> {
  const out = new Set<CommandType>();
  if (t === null) return out;
  // the e-stop is always live
  out.add("estop");
  if (t.safety.state === "FAULT_LATCHED") {
    out.add("clear_fault");
    return out; // a latched controller accepts nothing else useful
  }
  if (t.halted) return out;
  for (const cmd of BY_STATE[t.workflow] ?? []) {
    out.add(cmd);
  }
  // motion commands additionally need the controller to be ENABLED
  if (t.workflow === "TELEOP_ITERATE" && t.safety.state !== "ENABLED") {
    out.delete("jog");
    out.delete("insert");
    out.delete("retract");
  }
  // confirming a plan that does not exist is meaningless
  if (t.workflow === "REVIEW" && t.plan === null) {
    out.delete("confirm_setup");
    out.delete("reject_setup");
  }
  return out;
}

export function isEnabled(t: Telemetry | null, cmd: CommandType): boolean {
  return enabledCommands(t).has(cmd);
}
