"""Closed-loop session: vitals stream in, plans and audio segments out.

The loop ticks on the vitals hop. A plan is recomputed at every replan
interval or as soon as the vital tokens change; a fresh audio segment is
rendered only when the recomputed plan actually differs, so stable
vitals keep the same music playing. Everything is driven by a simulated
clock and the config seed, making a session log (including WAV hashes)
bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .melody import generate
from .pentatonic import tonal_embedding
from .planner import MusicPlan, plan, plan_to_json, trace_to_json
from .radar import PhaseSignal, load_trace_csv
from .state import VitalTokens, build_user_state, discretize_rates
from .synth import AudioClip, clip_sha256, render, wav_bytes, write_wav
from .vitals import RateEstimate, VitalsEstimate, track_vitals

SCHEMA_VERSION = 1


class LogCorruptError(Exception):
    """A session log line failed to parse; ``line_no`` names the line."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class ScriptPhase:
    duration_s: float
    hr_bpm: float
    rr_rpm: float


DEFAULT_SCRIPT = (
    ScriptPhase(60.0, 60.0, 15.0),
    ScriptPhase(60.0, 95.0, 22.0),
    ScriptPhase(60.0, 60.0, 15.0),
)


@dataclass(frozen=True)
class SessionConfig:
    replan_interval_s: float = 10.0
    window_s: float = 30.0
    hop_s: float = 5.0
    crossfade_s: float = 2.0
    seed: int = 0
    source: str = "script"  # script | csv | live
    script: tuple[ScriptPhase, ...] = DEFAULT_SCRIPT
    csv_path: str | None = None
    clock_time: str = "21:00"
    temperature_c: float = 24.0
    user_status: str = "resting"
    segment_bars: int = 4
    out_dir: str | None = None
    time_scale: float = 1.0  # serve-mode pacing; 1.0 = real time

    def __post_init__(self):
        if self.replan_interval_s < self.hop_s:
            raise ValueError("replan_interval_s must be >= hop_s")
        if self.source not in ("script", "csv", "live"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ValueError("csv source requires csv_path")

    def to_json(self) -> dict:
        return {
            "replan_interval_s": self.replan_interval_s,
            "window_s": self.window_s,
            "hop_s": self.hop_s,
            "crossfade_s": self.crossfade_s,
            "seed": self.seed,
            "source": self.source,
            "script": [[p.duration_s, p.hr_bpm, p.rr_rpm] for p in self.script],
            "csv_path": self.csv_path,
            "clock_time": self.clock_time,
            "temperature_c": self.temperature_c,
            "user_status": self.user_status,
            "segment_bars": self.segment_bars,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SessionConfig":
        script = tuple(ScriptPhase(*row) for row in payload.get("script", []))
        return cls(
            replan_interval_s=payload.get("replan_interval_s", 10.0),
            window_s=payload.get("window_s", 30.0),
            hop_s=payload.get("hop_s", 5.0),
            crossfade_s=payload.get("crossfade_s", 2.0),
            seed=payload.get("seed", 0),
            source=payload.get("source", "script"),
            script=script or DEFAULT_SCRIPT,
            csv_path=payload.get("csv_path"),
            clock_time=payload.get("clock_time", "21:00"),
            temperature_c=payload.get("temperature_c", 24.0),
            user_status=payload.get("user_status", "resting"),
            segment_bars=payload.get("segment_bars", 4),
        )


@dataclass(frozen=True)
class SessionEvent:
    timestamp_s: float
    kind: str  # session_start | vitals | state | plan | segment | session_end
    payload: dict
    v: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return {
            "v": self.v,
            "t": self.timestamp_s,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SessionEvent":
        return cls(
            timestamp_s=float(obj["t"]),
            kind=str(obj["kind"]),
            payload=dict(obj["payload"]),
            v=int(obj.get("v", SCHEMA_VERSION)),
        )


def _script_vitals(script, t: float) -> tuple[float, float] | None:
    """(hr, rr) of the script phase containing time t, None past the end."""
    acc = 0.0
    for phase in script:
        if t < acc + phase.duration_s:
            return phase.hr_bpm, phase.rr_rpm
        acc += phase.duration_s
    return None


def _vitals_estimate(hr, rr, t0, t1, hr_conf=1.0, rr_conf=1.0) -> VitalsEstimate:
    return VitalsEstimate(
        heart=RateEstimate(hr, hr / 60.0, hr_conf),
        resp=RateEstimate(rr, rr / 60.0, rr_conf),
        window_start_s=t0,
        window_end_s=t1,
    )


class SessionRunner:
    """Stateful core of one session; usable tick-by-tick (server) or batch."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.tokens: VitalTokens | None = None
        self.current_plan: MusicPlan | None = None
        self.last_replan_t: float | None = None
        self.segment_index = 0
        self.segments: dict[str, AudioClip] = {}
        self.events: list[SessionEvent] = []

    def _emit(self, t, kind, payload) -> SessionEvent:
        ev = SessionEvent(timestamp_s=t, kind=kind, payload=payload)
        self.events.append(ev)
        return ev

    def start(self) -> SessionEvent:
        return self._emit(0.0, "session_start", {"config": self.config.to_json()})

    def tick(self, t: float, vitals: VitalsEstimate) -> list[SessionEvent]:
        """Advance the loop by one hop with the given vitals reading."""
        cfg = self.config
        out = [self._emit(t, "vitals", _vitals_payload(vitals))]

        new_tokens = discretize_rates(
            vitals.heart.rate_per_min, vitals.resp.rate_per_min, self.tokens
        )
        tokens_changed = new_tokens != self.tokens
        self.tokens = new_tokens
        if tokens_changed:
            out.append(
                self._emit(
                    t,
                    "state",
                    {"hr_band": new_tokens.hr_band, "rr_band": new_tokens.rr_band},
                )
            )

        due = (
            self.last_replan_t is None
            or t - self.last_replan_t >= cfg.replan_interval_s - 1e-9
        )
        if not (due or tokens_changed):
            return out
        self.last_replan_t = t

        user_state = build_user_state(
            new_tokens,
            cfg.clock_time,
            cfg.temperature_c,
            cfg.user_status,
            self.current_plan.instrumentation if self.current_plan else None,
        )
        new_plan, trace = plan(user_state, prev=self.current_plan, seed=cfg.seed)
        if self.current_plan is not None and new_plan == self.current_plan:
            return out

        changed = self.current_plan is not None
        self.current_plan = new_plan
        out.append(
            self._emit(
                t,
                "plan",
                {
                    "changed": changed,
                    "plan": plan_to_json(new_plan),
                    "trace": trace_to_json(trace),
                },
            )
        )
        out.append(self._render_segment(t, new_plan))
        return out

    def _render_segment(self, t: float, music_plan: MusicPlan) -> SessionEvent:
        cfg = self.config
        seg_seed = cfg.seed * 10_000 + self.segment_index
        cond = tonal_embedding(music_plan.mode, steps=cfg.segment_bars * 4)
        score = generate(music_plan, cond, bars=cfg.segment_bars, seed=seg_seed)
        clip = render(score, music_plan)
        seg_id = f"{cfg.seed}-{self.segment_index:04d}"
        self.segments[seg_id] = clip
        self.segment_index += 1
        if cfg.out_dir:
            write_wav(clip, f"{cfg.out_dir}/{seg_id}.wav")
        return self._emit(
            t,
            "segment",
            {
                "id": seg_id,
                "url": f"/segments/{seg_id}.wav",
                "bpm": music_plan.tempo_bpm,
                "mode": str(music_plan.mode),
                "duration_s": round(clip.duration_s, 6),
                "sha256": clip_sha256(clip),
                "scheduled_s": t,
                "actual_s": t,
            },
        )

    def end(self, t: float, reason: str = "source_exhausted") -> SessionEvent:
        return self._emit(t, "session_end", {"reason": reason})


def _vitals_payload(v: VitalsEstimate) -> dict:
    return {
        "t0": v.window_start_s,
        "t1": v.window_end_s,
        "hr_bpm": round(v.heart.rate_per_min, 3),
        "rr_rpm": round(v.resp.rate_per_min, 3),
        "hr_conf": round(v.heart.confidence, 4),
        "rr_conf": round(v.resp.confidence, 4),
    }


def _csv_vitals_series(config: SessionConfig) -> list[VitalsEstimate]:
    samples, rate = load_trace_csv(config.csv_path)
    signal = PhaseSignal(samples=samples, sample_rate_hz=rate)
    return track_vitals(signal, window_s=config.window_s, hop_s=config.hop_s)


def run_session(config: SessionConfig, duration_s: float) -> list[SessionEvent]:
    """Run a headless session on a simulated clock; returns the event log.

    Stops at ``duration_s`` or when the source is exhausted, whichever
    comes first, closing with a clean ``session_end`` event.
    """
    runner = SessionRunner(config)
    runner.start()

    if config.source == "script":
        t = 0.0
        while t < duration_s - 1e-9:
            hr_rr = _script_vitals(config.script, t)
            if hr_rr is None:
                runner.end(t, "source_exhausted")
                return runner.events
            hr, rr = hr_rr
            runner.tick(t, _vitals_estimate(hr, rr, t, t + config.hop_s))
            t += config.hop_s
        runner.end(min(t, duration_s), "duration_reached")
    elif config.source == "csv":
        series = _csv_vitals_series(config)
        last_t = 0.0
        for est in series:
            if est.window_end_s > duration_s + 1e-9:
                break
            runner.tick(est.window_end_s, est)
            last_t = est.window_end_s
        runner.end(last_t, "source_exhausted")
    else:
        raise ValueError("run_session supports script and csv sources; use serve() for live")
    return runner.events


def log_append(path, events) -> None:
    """Append events to a JSONL session log."""
    with open(path, "a") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def replay(path) -> list[SessionEvent]:
    """Re-read a JSONL log; corrupt lines raise with their line number."""
    events = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                events.append(SessionEvent.from_json(obj))
            except (ValueError, KeyError, TypeError) as exc:
                raise LogCorruptError(i, str(exc)) from exc
    return events


def rerun_from_log(path, duration_s: float):
    """Re-execute the session recorded in a log from its stored config.

    With the same seed and source data this reproduces the original
    events (and segment hashes) exactly.
    """
    events = replay(path)
    if not events or events[0].kind != "session_start":
        raise LogCorruptError(1, "log does not begin with session_start")
    config = SessionConfig.from_json(events[0].payload["config"])
    return run_session(config, duration_s)
