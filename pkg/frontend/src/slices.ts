// Synthetic slice geometry: project the scanner-frame scene and telemetry
// onto axial (x/y) and sagittal (y/z) cutting planes.
//
// All outputs stay in world coordinates plus a separate affine view
// transform, so tests can assert that rendered needle endpoints are exactly
// the telemetry values with no intermediate rounding.

import { SceneDoc, Telemetry, Vec3 } from "./types.js";

export type PlaneName = "axial" | "sagittal";

// world-axis indices spanning each view plane: [horizontal, vertical]
export const PLANE_AXES: Record<PlaneName, [number, number]> = {
  axial: [0, 1], // x right, y up
  sagittal: [1, 2], // y right, z up
};

export interface View {
  plane: PlaneName;
  widthPx: number;
  heightPx: number;
  centerWorld: [number, number];
  scalePxPerM: number;
}

export function makeView(
  plane: PlaneName,
  widthPx: number,
  heightPx: number,
  scene: SceneDoc,
): View {
  const [ih, iv] = PLANE_AXES[plane];
  const c = scene.bore.axis_point;
  const radius = scene.bore.radius;
  const scale = (Math.min(widthPx, heightPx) * 0.92) / (2 * radius);
  return {
    plane,
    widthPx,
    heightPx,
    centerWorld: [c[ih], c[iv]],
    scalePxPerM: scale,
  };
}

export function projectWorld(view: View, p: Vec3): [number, number] {
  const [ih, iv] = PLANE_AXES[view.plane];
  return [
    view.widthPx / 2 + (p[ih] - view.centerWorld[0]) * view.scalePxPerM,
    view.heightPx / 2 - (p[iv] - view.centerWorld[1]) * view.scalePxPerM,
  ];
}

export type Primitive =
  | { kind: "circle"; c: Vec3; r: number; style: string }
  | { kind: "capsule"; a: Vec3; b: Vec3; r: number; style: string }
  | { kind: "line"; a: Vec3; b: Vec3; style: string; width?: number }
  | { kind: "cross"; c: Vec3; sizeM: number; style: string }
  | { kind: "dot"; c: Vec3; r: number; style: string };

export const NEEDLE_DRAW_LENGTH_M = 0.08;

/** World-space draw list for one slice; the needle line's distal endpoint is
 *  the telemetry tip verbatim. */
export function slicePrimitives(
  scene: SceneDoc,
  telemetry: Telemetry | null,
): Primitive[] {
  const out: Primitive[] = [];
  out.push({
    kind: "circle",
    c: scene.bore.axis_point,
    r: scene.bore.radius,
    style: "bore",
  });
  for (const cap of scene.patient) {
    out.push({ kind: "capsule", a: cap.a, b: cap.b, r: cap.r, style: "patient" });
  }
  const target = telemetry?.target ?? scene.target;
  if (target) {
    out.push({ kind: "cross", c: target, sizeM: 0.012, style: "target" });
  }
  if (telemetry?.plan) {
    const s = telemetry.plan;
    const hub: Vec3 = [
      s.setup_tip[0] - s.setup_axis[0] * NEEDLE_DRAW_LENGTH_M,
      s.setup_tip[1] - s.setup_axis[1] * NEEDLE_DRAW_LENGTH_M,
      s.setup_tip[2] - s.setup_axis[2] * NEEDLE_DRAW_LENGTH_M,
    ];
    out.push({ kind: "line", a: hub, b: s.setup_tip, style: "plan", width: 1 });
    for (const tip of s.tips) {
      out.push({ kind: "dot", c: tip, r: 0.002, style: "plan" });
    }
  }
  if (telemetry?.needle) {
    const { p, u } = telemetry.needle;
    const hub: Vec3 = [
      p[0] - u[0] * NEEDLE_DRAW_LENGTH_M,
      p[1] - u[1] * NEEDLE_DRAW_LENGTH_M,
      p[2] - u[2] * NEEDLE_DRAW_LENGTH_M,
    ];
    out.push({ kind: "line", a: hub, b: p, style: "needle", width: 2 });
    out.push({ kind: "dot", c: p, r: 0.0025, style: "needle" });
  }
  return out;
}

/** The needle-line primitive's distal endpoint (for invariant checks). */
export function renderedNeedleTip(prims: Primitive[]): Vec3 | null {
  for (let i = prims.length - 1; i >= 0; i--) {
    const prim = prims[i];
    if (prim.kind === "line" && prim.style === "needle") return prim.b;
  }
  return null;
}
