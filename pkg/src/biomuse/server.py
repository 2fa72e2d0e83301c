"""Network service: WebSocket session streaming plus segment delivery.

Each WebSocket connection gets its own isolated SessionRunner driven by
a live vitals source (defaults overridable by client frames). Audio is
served by reference: segment frames carry a URL under /segments/.

Frame schemas (all carry ``"v": 1``):
  client -> server: vitals_override {hr_bpm, rr_rpm}, context
                    {time, temp_c, status}, pause, resume
  server -> client: session {session_id}, vitals, state, plan, segment,
                    error, session_end
"""

from __future__ import annotations

import asyncio
import json
import uuid
from dataclasses import replace

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response

from .session import SCHEMA_VERSION, SessionConfig, SessionRunner, _vitals_estimate
from .synth import wav_bytes


def create_app(config: SessionConfig | None = None) -> FastAPI:
    app = FastAPI(title="biomuse session service")
    app.state.base_config = config or SessionConfig(source="live")
    app.state.segments = {}  # "session_id/seg_id" -> AudioClip

    @app.get("/health")
    def health():
        return JSONResponse({"status": "ok"})

    @app.get("/segments/{session_id}/{segment_id}.wav")
    def segment(session_id: str, segment_id: str):
        clip = app.state.segments.get(f"{session_id}/{segment_id}")
        if clip is None:
            return JSONResponse({"error": "unknown segment"}, status_code=404)
        return Response(content=wav_bytes(clip), media_type="audio/wav")

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        await _run_live_session(app, ws)

    return app


class _LiveState:
    """Mutable per-connection vitals/context, fed by client frames."""

    def __init__(self, config: SessionConfig):
        self.hr_bpm = 70.0
        self.rr_rpm = 14.0
        self.config = config
        self.paused = False

    def apply(self, frame: dict) -> None:
        kind = frame.get("type")
        if kind == "vitals_override":
            self.hr_bpm = float(frame["hr_bpm"])
            self.rr_rpm = float(frame["rr_rpm"])
        elif kind == "context":
            updates = {}
            if "time" in frame:
                updates["clock_time"] = str(frame["time"])
            if "temp_c" in frame:
                updates["temperature_c"] = float(frame["temp_c"])
            if "status" in frame:
                updates["user_status"] = str(frame["status"])
            self.config = replace(self.config, **updates)
        elif kind == "pause":
            self.paused = True
        elif kind == "resume":
            self.paused = False
        else:
            raise ValueError(f"unknown frame type {kind!r}")


async def _run_live_session(app: FastAPI, ws: WebSocket) -> None:
    session_id = uuid.uuid4().hex[:12]
    base: SessionConfig = app.state.base_config
    live = _LiveState(base)
    runner = SessionRunner(base)
    runner.start()

    await ws.send_json({"v": SCHEMA_VERSION, "type": "session", "session_id": session_id})

    loop = asyncio.get_event_loop()
    started = loop.time()
    t_sim = 0.0
    tick_interval = base.hop_s * base.time_scale

    async def deliver(events):
        for ev in runner_events_to_frames(session_id, events):
            await ws.send_json(ev)

    receive = None
    try:
        while True:
            if receive is None:
                receive = asyncio.ensure_future(ws.receive_text())
            timer = asyncio.ensure_future(asyncio.sleep(tick_interval))
            done, _ = await asyncio.wait(
                {receive, timer}, return_when=asyncio.FIRST_COMPLETED
            )
            if receive in done:
                timer.cancel()
                raw = receive.result()
                receive = None
                try:
                    frame = json.loads(raw)
                    live.apply(frame)
                except (ValueError, KeyError, TypeError) as exc:
                    await ws.send_json(
                        {"v": SCHEMA_VERSION, "type": "error", "message": str(exc)}
                    )
                    continue
                if frame.get("type") in ("pause", "resume"):
                    continue
                # an override takes effect immediately: run the tick now
            if live.paused:
                continue
            runner.config = live.config
            vit = _vitals_estimate(
                live.hr_bpm, live.rr_rpm, t_sim, t_sim + base.hop_s
            )
            # renders run in a worker so slow synthesis cannot stall frames
            events = await asyncio.to_thread(runner.tick, t_sim, vit)
            wall = loop.time() - started
            for ev in events:
                if ev.kind == "segment":
                    key = f"{session_id}/{ev.payload['id']}"
                    app.state.segments[key] = runner.segments[ev.payload["id"]]
                    ev.payload["url"] = f"/segments/{session_id}/{ev.payload['id']}.wav"
                    ev.payload["actual_s"] = round(wall, 3)
            await deliver(events)
            t_sim += base.hop_s
    except WebSocketDisconnect:
        pass
    finally:
        if receive is not None:
            receive.cancel()
        for key in [k for k in app.state.segments if k.startswith(session_id)]:
            app.state.segments.pop(key, None)


def runner_events_to_frames(session_id: str, events) -> list[dict]:
    frames = []
    for ev in events:
        frame = {
            "v": ev.v,
            "type": ev.kind,
            "t": ev.timestamp_s,
            "session_id": session_id,
        }
        frame.update(ev.payload)
        frames.append(frame)
    return frames


def serve(bind_address: str = "127.0.0.1:8765", config: SessionConfig | None = None):
    """Blocking entry point: host the service on the given address."""
    import uvicorn

    host, _, port = bind_address.partition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8765), log_level="warning")
