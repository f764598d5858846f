// Snapshot-replace telemetry store with stale detection.
// The UI renders exclusively from the latest snapshot: no queueing, no
// client-side extrapolation of robot state.

import { Telemetry } from "./types.js";

export const STALE_AFTER_MS = 1000;

export class TelemetryStore {
  latest: Telemetry | null = null;
  receivedAtMs: number | null = null;
  updates = 0;

  update(snapshot: Telemetry, nowMs: number): void {
    this.latest = snapshot;
    this.receivedAtMs = nowMs;
    this.updates += 1;
  }

  isStale(nowMs: number): boolean {
    if (this.receivedAtMs === null) return true;
    return nowMs - this.receivedAtMs > STALE_AFTER_MS;
  }
}
