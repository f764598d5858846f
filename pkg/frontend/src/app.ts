// Operator console wiring: one WebSocket, one telemetry store, two slice
// canvases, the workflow stepper, and the safety banner.  Every control
// flows through the gating table; the render path never anticipates the
// robot, it draws the last snapshot only.

import * as cmd from "./commands.js";
import { enabledCommands } from "./gating.js";
import {
  makeView,
  projectWorld,
  Primitive,
  slicePrimitives,
  View,
} from "./slices.js";
import { TelemetryStore } from "./store.js";
import {
  CommandType,
  FAULT_REASONS,
  isTelemetry,
  JogAxis,
  Reply,
  SceneDoc,
  Telemetry,
  WORKFLOW_STEPS,
} from "./types.js";

const STYLES: Record<string, string> = {
  bore: "#44506a",
  patient: "#8c5a50",
  target: "#e0b341",
  plan: "#4f8f4f",
  needle: "#4fa3e0",
};

function drawPrimitives(ctx: CanvasRenderingContext2D, view: View,
                        prims: Primitive[]): void {
  ctx.clearRect(0, 0, view.widthPx, view.heightPx);
  ctx.fillStyle = "#0d1016";
  ctx.fillRect(0, 0, view.widthPx, view.heightPx);
  for (const p of prims) {
    const color = STYLES[p.style] ?? "#ccc";
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    if (p.kind === "circle") {
      const [cx, cy] = projectWorld(view, p.c);
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.arc(cx, cy, p.r * view.scalePxPerM, 0, Math.PI * 2);
      ctx.stroke();
    } else if (p.kind === "capsule") {
      const [ax, ay] = projectWorld(view, p.a);
      const [bx, by] = projectWorld(view, p.b);
      ctx.lineWidth = Math.max(2 * p.r * view.scalePxPerM, 1);
      ctx.lineCap = "round";
      ctx.globalAlpha = 0.55;
      ctx.beginPath();
      ctx.moveTo(ax, ay);
      ctx.lineTo(bx, by);
      ctx.stroke();
      ctx.globalAlpha = 1.0;
    } else if (p.kind === "line") {
      const [ax, ay] = projectWorld(view, p.a);
      const [bx, by] = projectWorld(view, p.b);
      ctx.lineWidth = p.width ?? 1;
      ctx.lineCap = "butt";
      ctx.beginPath();
      ctx.moveTo(ax, ay);
      ctx.lineTo(bx, by);
      ctx.stroke();
    } else if (p.kind === "cross") {
      const [cx, cy] = projectWorld(view, p.c);
      const s = p.sizeM * view.scalePxPerM;
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.moveTo(cx - s, cy);
      ctx.lineTo(cx + s, cy);
      ctx.moveTo(cx, cy - s);
      ctx.lineTo(cx, cy + s);
      ctx.stroke();
    } else {
      const [cx, cy] = projectWorld(view, p.c);
      ctx.beginPath();
      ctx.arc(cx, cy, Math.max(p.r * view.scalePxPerM, 1.5), 0, Math.PI * 2);
      ctx.fill();
    }
  }
}

class ConsoleApp {
  store = new TelemetryStore();
  scene: SceneDoc | null = null;
  ws: WebSocket | null = null;
  log: HTMLElement;

  constructor() {
    this.log = document.getElementById("log")!;
  }

  async start() {
    this.scene = (await (await fetch("/api/scene")).json()) as SceneDoc;
    const proto = location.protocol === "https:" ? "wss" : "ws";
    this.ws = new WebSocket(`${proto}://${location.host}/ws`);
    this.ws.onmessage = (ev) => this.onMessage(ev.data as string);
    this.ws.onclose = () => this.note("bridge closed");
    this.wireControls();
    setInterval(() => this.renderStale(), 250);
  }

  onMessage(raw: string) {
    let msg: unknown;
    try {
      msg = JSON.parse(raw);
    } catch {
      return;
    }
    if (isTelemetry(msg)) {
      this.store.update(msg, Date.now());
      this.render(msg);
    } else {
      const reply = msg as Reply;
      if (reply.type === "error") {
        this.note(`rejected: ${reply.message ?? "unknown error"}`);
      } else if (reply.event && reply.event !== "jog") {
        this.note(`ok: ${reply.event}`);
      }
    }
  }

  send(command: Record<string, unknown>) {
    // gate once more right before sending: never emit a message the
    // service would reject for workflow-state reasons
    const allowed = enabledCommands(this.store.latest);
    if (!allowed.has(command.type as CommandType)) return;
    this.ws?.send(JSON.stringify(command));
  }

  note(text: string) {
    const line = document.createElement("div");
    line.textContent = text;
    this.log.prepend(line);
    while (this.log.childElementCount > 8) this.log.lastChild?.remove();
  }

  wireControls() {
    const byId = (id: string) => document.getElementById(id)!;
    byId("btn-estop").onclick = () => this.ws?.send(JSON.stringify(cmd.estop()));
    byId("btn-clear").onclick = () => this.send(cmd.clearFault());
    byId("btn-calibrate").onclick = () => this.send(cmd.calibrate());
    byId("btn-target").onclick = () => {
      const t = this.scene?.target;
      if (t) this.send(cmd.setTarget(t));
    };
    byId("btn-confirm").onclick = () => this.send(cmd.confirmSetup());
    byId("btn-reject").onclick = () => this.send(cmd.rejectSetup());
    byId("btn-scan").onclick = () => this.send(cmd.requestScan());
    byId("btn-insert").onclick = () => {
      const mm = Number((byId("depth-mm") as HTMLInputElement).value);
      if (mm > 0) this.send(cmd.insert(mm));
    };
    byId("btn-retract").onclick = () => {
      const mm = Number((byId("depth-mm") as HTMLInputElement).value);
      if (mm > 0) this.send(cmd.retract(mm));
    };
    for (const axis of ["x", "y", "z", "tilt_a", "tilt_b"] as JogAxis[]) {
      for (const dir of [1, -1] as (1 | -1)[]) {
        const el = document.getElementById(`jog-${axis}-${dir > 0 ? "p" : "m"}`);
        if (el) el.onclick = () => this.send(cmd.jog(axis, dir));
      }
    }
  }

  render(t: Telemetry) {
    if (!this.scene) return;
    for (const plane of ["axial", "sagittal"] as const) {
      const canvas = document.getElementById(`view-${plane}`) as HTMLCanvasElement;
      const view = makeView(plane, canvas.width, canvas.height, this.scene);
      drawPrimitives(canvas.getContext("2d")!, view, slicePrimitives(this.scene, t));
    }
    // stepper
    for (const step of WORKFLOW_STEPS) {
      const el = document.getElementById(`step-${step}`);
      el?.classList.toggle("active", t.workflow === step);
    }
    // banner
    const banner = document.getElementById("banner")!;
    if (t.safety.state === "FAULT_LATCHED") {
      banner.className = "banner fault";
      banner.textContent =
        `FAULT LATCHED: ${FAULT_REASONS[t.safety.reason] ?? t.safety.reason}` +
        " — clear required";
    } else if (t.safety.state === "ENABLED") {
      banner.className = "banner enabled";
      banner.textContent = `ENABLED — ${t.workflow}${t.halted ? " (halted)" : ""}`;
    } else {
      banner.className = "banner idle";
      banner.textContent = `${t.safety.state} — ${t.workflow}`;
    }
    // gate every control from telemetry alone
    const allowed = enabledCommands(t);
    const gate = (id: string, c: CommandType) => {
      const el = document.getElementById(id) as HTMLButtonElement | null;
      if (el) el.disabled = !allowed.has(c);
    };
    gate("btn-clear", "clear_fault");
    gate("btn-calibrate", "calibrate");
    gate("btn-target", "set_target");
    gate("btn-confirm", "confirm_setup");
    gate("btn-reject", "reject_setup");
    gate("btn-scan", "request_scan");
    gate("btn-insert", "insert");
    gate("btn-retract", "retract");
    document.querySelectorAll<HTMLButtonElement>(".jog").forEach((el) => {
      el.disabled = !allowed.has("jog");
    });
    // readouts
    const info = document.getElementById("info")!;
    const scan = t.scan
      ? `scan #${t.scan.n}: ${t.scan.distance_to_target_mm.toFixed(2)} mm`
      : "no scan yet";
    const temps = t.clutch
      ? `clutch ${t.clutch.temps[0].toFixed(1)}/${t.clutch.temps[1].toFixed(1)} °C`
      : "";
    info.textContent = `${scan} · ${temps}` +
      (t.fre !== null ? ` · FRE ${(t.fre * 1e3).toFixed(3)} mm` : "");
  }

  renderStale() {
    const el = document.getElementById("stale")!;
    el.classList.toggle("visible", this.store.isStale(Date.now()));
  }
}

new ConsoleApp().start();
