"""Long-running service: sim loop + WebSocket JSON bridge + static console.

The session/controller pair runs in a worker thread (virtual time, optionally
paced to the wall clock); operator messages arrive through a thread-safe
queue and telemetry snapshots go out snapshot-replace, so a slow client
never builds a backlog.  With --listen the controller speaks real TCP on a
stream socket instead of the in-process link (wall-clock paced).
"""

import json
import logging
import os
import queue
import socket
import threading
import time
from pathlib import Path

import numpy as np

from .control import CONTROL_PERIOD_NS, ControllerSim, VirtualLink
from .kinematics import forward_kinematics, JOINT_LOWER, JOINT_UPPER
from .teleop import TeleopSession
from .teleop.session import TELEMETRY_PERIOD_MS

log = logging.getLogger("crane_sim.server")


class TcpControllerHost:
    """Runs a ControllerSim behind a real TCP socket, wall-clock paced."""

    def __init__(self, config, host: str, port: int):
        self.ctrl = ControllerSim(config)
        self.server = socket.create_server((host, port))
        self.server.settimeout(1.0)
        self.port = self.server.getsockname()[1]
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        conn = None
        while not self.stop.is_set() and conn is None:
            try:
                conn, _ = self.server.accept()
            except socket.timeout:
                continue
        if conn is None:
            return
        conn.setblocking(False)
        t_ns = 0
        next_wall = time.monotonic()
        while not self.stop.is_set():
            data = b""
            try:
                data = conn.recv(65536)
                if data == b"":
                    break
            except BlockingIOError:
                pass
            except (ConnectionResetError, OSError):
                break
            out, _ = self.ctrl.tick(t_ns, data)
            try:
                conn.sendall(out)
            except (BlockingIOError, BrokenPipeError, ConnectionResetError):
                break
            t_ns += CONTROL_PERIOD_NS
            next_wall += 1e-3
            delay = next_wall - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        conn.close()

    def close(self):
        self.stop.set()
        self.thread.join(timeout=2.0)
        self.server.close()


class SimService:
    """Owns the lockstep sim loop; bridges operator messages and telemetry."""

    def __init__(self, scenario, realtime: bool = False,
                 listen: str | None = None):
        self.scenario = scenario
        self.realtime = realtime or listen is not None
        self.session = TeleopSession(scenario.scene, scenario.robot_fiducials,
                                     scenario.params, scenario.shape,
                                     scenario.weights, scenario.session)
        self.tcp_host = None
        self.controller = None
        self.ctrl_sock = None
        if listen is not None:
            host, _, port = listen.rpartition(":")
            self.tcp_host = TcpControllerHost(scenario.controller,
                                              host or "127.0.0.1", int(port))
            self.ctrl_sock = socket.create_connection(("127.0.0.1",
                                                       self.tcp_host.port))
            self.ctrl_sock.setblocking(False)
            ctrl_for_scan = self.tcp_host.ctrl
        else:
            self.controller = ControllerSim(scenario.controller)
            ctrl_for_scan = self.controller
        # the scan provider reads the simulated phantom (plant truth)
        self.session.scan_provider = lambda: forward_kinematics(
            np.clip(np.concatenate((ctrl_for_scan.x,
                                    [ctrl_for_scan.driver.depth])),
                    JOINT_LOWER, JOINT_UPPER), scenario.params)

        self.inbox: queue.Queue = queue.Queue()
        self._telemetry_lock = threading.Lock()
        self._telemetry: dict | None = None
        self._telemetry_seq = 0
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)

    def start(self):
        self.thread.start()

    def submit(self, msg: dict) -> dict:
        """Called from the server loop: route one operator message."""
        reply_q: queue.Queue = queue.Queue()
        self.inbox.put((msg, reply_q))
        try:
            return reply_q.get(timeout=30.0)
        except queue.Empty:
            return {"v": 1, "type": "error", "message": "session busy"}

    def telemetry(self) -> tuple[int, dict | None]:
        with self._telemetry_lock:
            return self._telemetry_seq, self._telemetry

    def _run(self):
        to_ctrl = VirtualLink()
        to_sess = VirtualLink()
        t_ns = 0
        tick = 0
        next_wall = time.monotonic()
        while not self.stop.is_set():
            while True:
                try:
                    msg, reply_q = self.inbox.get_nowait()
                except queue.Empty:
                    break
                reply_q.put(self.session.handle_ui(msg))

            out = self.session.on_tick(t_ns)
            if self.ctrl_sock is not None:
                if out:
                    try:
                        self.ctrl_sock.sendall(out)
                    except (BlockingIOError, BrokenPipeError, OSError):
                        pass
                try:
                    data = self.ctrl_sock.recv(65536)
                    self.session.on_controller_bytes(data)
                except (BlockingIOError, ConnectionResetError, OSError):
                    pass
            else:
                to_ctrl.send(t_ns, out)
                ctrl_out, _ = self.controller.tick(t_ns, to_ctrl.poll(t_ns))
                to_sess.send(t_ns, ctrl_out)
                self.session.on_controller_bytes(to_sess.poll(t_ns))

            if tick % TELEMETRY_PERIOD_MS == 0:
                snap = self.session.telemetry()
                with self._telemetry_lock:
                    self._telemetry = snap
                    self._telemetry_seq += 1

            t_ns += CONTROL_PERIOD_NS
            tick += 1
            if self.realtime:
                next_wall += 1e-3
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                elif delay < -1.0:
                    next_wall = time.monotonic()  # resync after a long stall
            elif tick % 256 == 0:
                time.sleep(0)  # let other threads breathe

    def close(self):
        self.stop.set()
        self.thread.join(timeout=2.0)
        if self.ctrl_sock is not None:
            self.ctrl_sock.close()
        if self.tcp_host is not None:
            self.tcp_host.close()


def _scene_to_json(scene) -> dict:
    return {
        "bore": {"axis_point": list(map(float, scene.bore.point)),
                 "axis_dir": list(map(float, scene.bore.axis)),
                 "radius": scene.bore.radius},
        "patient": [{"a": list(map(float, c.a)), "b": list(map(float, c.b)),
                     "r": c.r} for c in scene.patient],
        "fiducials": None if scene.fiducials is None
        else [list(map(float, p)) for p in scene.fiducials],
        "target": None if scene.target is None
        else list(map(float, scene.target)),
        "entry_hint": None if scene.entry_hint is None
        else list(map(float, scene.entry_hint)),
    }


def default_ui_dist() -> Path | None:
    env = os.environ.get("CRANE_UI_DIST")
    if env:
        return Path(env)
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.exists() else None


def build_app(service: SimService):
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles
    import asyncio

    app = FastAPI(title="crane-sim teleop bridge")

    @app.get("/api/scene")
    def get_scene():
        return JSONResponse(_scene_to_json(service.scenario.scene))

    @app.websocket("/ws")
    async def ws_bridge(ws: WebSocket):
        await ws.accept()
        last_seq = -1

        async def pump_telemetry():
            nonlocal last_seq
            while True:
                seq, snap = service.telemetry()
                if snap is not None and seq != last_seq:
                    last_seq = seq
                    await ws.send_text(json.dumps(snap))
                await asyncio.sleep(0.02)

        pump = asyncio.create_task(pump_telemetry())
        try:
            while True:
                raw = await ws.receive_text()
                reply = await asyncio.to_thread(service.submit, raw)
                await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()

    dist = default_ui_dist()
    if dist is not None:
        app.mount("/", StaticFiles(directory=str(dist), html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return JSONResponse({"status": "crane-sim bridge running",
                                 "hint": "build the operator console into "
                                         "frontend/dist to serve a UI here"})
    return app


def serve(scenario, ui_port: int = 8720, realtime: bool = False,
          listen: str | None = None):
    import uvicorn
    service = SimService(scenario, realtime=realtime, listen=listen)
    service.start()
    app = build_app(service)
    log.info("UI bridge on http://127.0.0.1:%d (realtime=%s)", ui_port, realtime)
    try:
        uvicorn.run(app, host="127.0.0.1", port=ui_port, log_level="warning")
    finally:
        service.close()
