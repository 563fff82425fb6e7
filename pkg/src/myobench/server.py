"""Live session service: the WebSocket surface the browser client drives.

Wire protocol (newline-free JSON per WebSocket message):
  server -> client, per tick:
    {"t", "ideal": bits[7], "predicted": bits[7], "reward", "score", "phase"}
  client -> server:
    {"type": "chord", "keys": [...]} |
    {"type": "control", "cmd": "start"|"stop"|"finetune"|"motion_test"}

The 20 Hz loop runs on the server clock; chord messages update the live
intention, which the subject adapter turns into feature states.  Decoding
must finish within one tick period; overruns are logged.
"""
from __future__ import annotations

import asyncio
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import awac, game, movements, subject
from .experiment import ExperimentConfig, _rng, load_policy
from .policy import PolicyNet

logger = logging.getLogger(__name__)

_S_LIVE = 90
TICK_PERIOD_S = 1.0 / game.TICK_HZ


class LiveSessionService:
    """Sequential session state machine behind the WebSocket endpoint.

    ``advance_tick()`` is the only mutator of the game state; the async
    loop (or a test) calls it once per tick period.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        policy: PolicyNet,
        profile: subject.SubjectProfile | None = None,
    ):
        self.config = config
        self.policy = policy
        self.profile = profile or config.subject.build(seed=config.seed)
        self.adapter = subject.HumanAdapter(self.profile)
        self.rng = _rng(config.seed, _S_LIVE)
        self.chart = game.build_chart(config.chart_seed)
        self.phase = "idle"
        self.session: game.GameSession | None = None
        self.current_keys: list[str] = []
        self.episodes: list[awac.Episode] = []
        self.repetition = 0
        self.last_snapshot = self._idle_snapshot()
        self.last_decode_ms = 0.0

    def _idle_snapshot(self) -> dict:
        return {
            "t": -1,
            "ideal": [0] * 6 + [1],
            "predicted": [0] * 6 + [1],
            "reward": 0,
            "score": 0 if self.session is None else self.session.score,
            "phase": self.phase,
        }

    # -- client messages -----------------------------------------------------

    def handle_message(self, message: dict) -> dict | None:
        kind = message.get("type")
        if kind == "chord":
            self.current_keys = [str(k) for k in message.get("keys", [])]
            return None
        if kind == "control":
            return self._handle_control(message.get("cmd", ""))
        return {"error": f"unknown message type: {kind}"}

    def _handle_control(self, cmd: str) -> dict:
        if cmd == "start":
            if self.phase == "play":
                return {"error": "session already playing"}
            self.session = game.GameSession(self.chart)
            self.phase = "play"
            return {"ok": "started", "repetition": self.repetition}
        if cmd == "stop":
            self.phase = "idle"
            return {"ok": "stopped"}
        if cmd == "finetune":
            if self.phase == "play":
                return {"error": "cannot fine-tune during play"}
            if not self.episodes:
                return {"error": "no recorded episodes"}
            buffer = awac.ReplayBuffer()
            for k, ep in enumerate(self.episodes):
                buffer.append(
                    ep,
                    epsilon=self.config.awac.epsilon,
                    rng=_rng(self.config.seed, _S_LIVE + 1 + k),
                )
            self.policy, history = awac.finetune_repetition(
                buffer,
                self.policy,
                self.config.awac,
                seed=[self.config.seed, _S_LIVE + 500 + len(self.episodes)],
            )
            return {"ok": "finetuned", "best_sim_return": history.best_return}
        if cmd == "motion_test":
            if self.phase == "play":
                return {"error": "cannot run a motion test during play"}
            from .experiment import run_motion_test

            self.phase = "motion_test"
            result = run_motion_test(
                self.profile,
                self.policy,
                self.config.motion_test,
                _rng(self.config.seed, _S_LIVE + 900),
            )
            self.phase = "idle"
            return {"ok": "motion_test", "emr": result["emr"], "success_rate": result["success_rate"]}
        return {"error": f"unknown control command: {cmd}"}

    # -- tick loop -----------------------------------------------------------

    def advance_tick(self) -> dict:
        """Run one 20 Hz tick; returns the snapshot to broadcast."""
        if self.phase != "play" or self.session is None:
            self.last_snapshot = self._idle_snapshot()
            return self.last_snapshot
        started = time.perf_counter()
        event, features = self.adapter.emit(self.current_keys, self.rng, tick=self.session.tick)
        action = self.policy.predict(features[None, :])[0]
        ideal = self.session.ideal_now()
        r, score, t = self.session.step(action, features)
        self.last_decode_ms = (time.perf_counter() - started) * 1000.0
        if self.last_decode_ms > TICK_PERIOD_S * 1000.0:
            logger.warning("decode overran the tick period: %.1f ms", self.last_decode_ms)
        self.last_snapshot = {
            "t": t,
            "ideal": [int(b) for b in ideal],
            "predicted": [int(b) for b in action],
            "reward": int(r),
            "score": int(score),
            "phase": self.phase,
        }
        if self.session.done:
            self.episodes.append(awac.Episode.from_session(self.session, self.repetition))
            self.repetition += 1
            self.phase = "idle"
        return self.last_snapshot


def create_app(service: LiveSessionService, static_dir=None, autostart: bool = True):
    """FastAPI app streaming the session over /ws; static client at /."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import HTMLResponse

    app = FastAPI()
    app.state.service = service
    app.state.clients = set()
    app.state.autostart = autostart
    static_dir = Path(static_dir) if static_dir else None

    async def tick_loop():
        while True:
            started = time.perf_counter()
            snapshot = service.advance_tick()
            payload = json.dumps(snapshot, sort_keys=True)
            dead = []
            for ws in app.state.clients:
                try:
                    await ws.send_text(payload)
                except Exception:
                    dead.append(ws)
            for ws in dead:
                app.state.clients.discard(ws)
            elapsed = time.perf_counter() - started
            await asyncio.sleep(max(0.0, TICK_PERIOD_S - elapsed))

    @app.on_event("startup")
    async def _start():
        if app.state.autostart:
            app.state.tick_task = asyncio.create_task(tick_loop())

    @app.on_event("shutdown")
    async def _stop():
        task = getattr(app.state, "tick_task", None)
        if task:
            task.cancel()

    @app.get("/", response_class=HTMLResponse)
    async def index():
        if static_dir and (static_dir / "index.html").exists():
            return (static_dir / "index.html").read_text()
        return "<html><body><h1>motor-intent session</h1><p>connect a client to /ws</p></body></html>"

    @app.get("/movements")
    async def movement_table():
        return movements.movement_table()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        app.state.clients.add(ws)
        await ws.send_text(json.dumps(service.last_snapshot, sort_keys=True))
        try:
            while True:
                text = await ws.receive_text()
                try:
                    message = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps({"error": "bad json"}))
                    continue
                reply = service.handle_message(message)
                if reply is not None:
                    await ws.send_text(json.dumps(reply, sort_keys=True))
        except WebSocketDisconnect:
            pass
        finally:
            app.state.clients.discard(ws)

    if static_dir and static_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/static", StaticFiles(directory=str(static_dir)), name="static")
    return app


def serve(config: ExperimentConfig, workdir, port: int = 8000, static_dir=None):
    """Load the latest decoder from the workspace and serve the session."""
    import uvicorn

    workdir = Path(workdir)
    policy = None
    for tag in (f"p{config.n_repetitions}", "p0"):
        try:
            policy = load_policy(workdir, tag)
            break
        except FileNotFoundError:
            continue
    if policy is None:
        # Fresh session without pretraining artifacts: seeded untrained net.
        policy = PolicyNet(rng=np.random.default_rng(config.seed), dtype=np.dtype(config.dtype))
    service = LiveSessionService(config, policy)
    app = create_app(service, static_dir=static_dir)
    uvicorn.run(app, host="0.0.0.0", port=port)
