// Command constructors: exactly the wire schema the service validates.
// The UI never predicts outcomes; it sends these and waits for telemetry.

import { JogAxis, Vec3 } from "./types.js";

export const calibrate = () => ({ v: 1, type: "calibrate" });

export const setTarget = (target: Vec3, entry?: Vec3) =>
  entry === undefined
    ? { v: 1, type: "set_target", target }
    : { v: 1, type: "set_target", target, entry };

export const confirmSetup = () => ({ v: 1, type: "confirm_setup" });
export const rejectSetup = () => ({ v: 1, type: "reject_setup" });

export const jog = (axis: JogAxis, direction: 1 | -1) => ({
  v: 1,
  type: "jog",
  axis,
  direction,
});

export const insert = (mm: number) => ({ v: 1, type: "insert", mm });
export const retract = (mm: number) => ({ v: 1, type: "retract", mm });
export const requestScan = () => ({ v: 1, type: "request_scan" });
export const estop = () => ({ v: 1, type: "estop" });
export const clearFault = () => ({ v: 1, type: "clear_fault" });
export const enable = () => ({ v: 1, type: "enable" });
