import { describe, expect, it } from "vitest";

import { enabledCommands, isEnabled } from "../src/gating.js";
import { Telemetry, WorkflowStateName } from "../src/types.js";

function telemetry(overrides: Partial<Telemetry> = {}): Telemetry {
  return {
    v: 1,
    type: "telemetry",
    t_ns: 0,
    workflow: "CALIBRATE",
    halted: false,
    joints: null,
    needle: null,
    safety: { state: "IDLE", reason: 0 },
    clutch: null,
    target: null,
    scan: null,
    plan: null,
    fre: null,
    ...overrides,
  };
}

describe("command gating", () => {
  it("enables nothing with no telemetry except nothing at all", () => {
    expect(enabledCommands(null).size).toBe(0);
  });

  it("estop is always enabled once telemetry flows", () => {
    const states: WorkflowStateName[] = [
      "CALIBRATE", "PLAN_SETUP", "REVIEW", "MOVE_TO_SETUP",
      "TELEOP_ITERATE", "TARGET_REACHED",
    ];
    for (const workflow of states) {
      expect(isEnabled(telemetry({ workflow }), "estop")).toBe(true);
    }
  });

  it("only calibrate is offered in CALIBRATE", () => {
    const set = enabledCommands(telemetry());
    expect(set.has("calibrate")).toBe(true);
    expect(set.has("confirm_setup")).toBe(false);
    expect(set.has("jog")).toBe(false);
    expect(set.has("insert")).toBe(false);
  });

  it("confirm requires REVIEW with an actual plan", () => {
    const noPlan = telemetry({ workflow: "REVIEW" });
    expect(isEnabled(noPlan, "confirm_setup")).toBe(false);
    const withPlan = telemetry({
      workflow: "REVIEW",
      plan: { tips: [], setup_tip: [0, 0, 0], setup_axis: [0, 0, 1], duration_s: 1 },
    });
    expect(isEnabled(withPlan, "confirm_setup")).toBe(true);
    expect(isEnabled(withPlan, "reject_setup")).toBe(true);
  });

  it("no motion commands while MOVE_TO_SETUP streams", () => {
    const t = telemetry({ workflow: "MOVE_TO_SETUP",
                          safety: { state: "ENABLED", reason: 0 } });
    const set = enabledCommands(t);
    expect(set.has("jog")).toBe(false);
    expect(set.has("confirm_setup")).toBe(false);
    expect(set.has("estop")).toBe(true);
  });

  it("teleop commands need ENABLED", () => {
    const idle = telemetry({ workflow: "TELEOP_ITERATE",
                             safety: { state: "IDLE", reason: 0 } });
    expect(isEnabled(idle, "jog")).toBe(false);
    expect(isEnabled(idle, "insert")).toBe(false);
    expect(isEnabled(idle, "request_scan")).toBe(true);
    const live = telemetry({ workflow: "TELEOP_ITERATE",
                             safety: { state: "ENABLED", reason: 0 } });
    expect(isEnabled(live, "jog")).toBe(true);
    expect(isEnabled(live, "insert")).toBe(true);
  });

  it("a latched fault leaves only estop and clear", () => {
    const t = telemetry({ workflow: "TELEOP_ITERATE", halted: true,
                          safety: { state: "FAULT_LATCHED", reason: 2 } });
    const set = enabledCommands(t);
    expect([...set].sort()).toEqual(["clear_fault", "estop"]);
  });

  it("clear is disabled without a fault", () => {
    expect(isEnabled(telemetry(), "clear_fault")).toBe(false);
  });

  it("halted session without a latch offers only estop", () => {
    const t = telemetry({ workflow: "TELEOP_ITERATE", halted: true,
                          safety: { state: "IDLE", reason: 0 } });
    expect([...enabledCommands(t)]).toEqual(["estop"]);
  });
});
