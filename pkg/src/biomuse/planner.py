"""Rule-based music planner: UserState -> four musical parameters.

The planner walks an explicit three-stage reasoning trace
(observe -> intent -> parameters) over a complete rule table covering
every (hr_band x rr_band x time_bucket) cell, and can defer to an
external HTTP backend speaking the same plan schema, falling back to
the rules on any failure.

Anchored mappings the table must honor:
  * low HR + slow RR at rest      -> Gong mode, slow tempo, ambient
  * fast RR                       -> Zhi mode, percussive, tempo bump
  * late night + elevated HR      -> sleep transition, calm genre,
                                     moderate tempo
"""

from __future__ import annotations

import json
import random
import re
import urllib.request
from dataclasses import dataclass, field

from .pentatonic import PentatonicMode, mode_from_name
from .state import (
    HR_BANDS,
    RR_BANDS,
    UserState,
    temperature_bucket,
    user_state_to_json,
)

GENRES = ("ambient", "classical", "folk", "percussive", "energizing", "lullaby")
INSTRUMENTS = ("erhu", "guzheng", "dizi", "pad", "strings", "percussion")
INTENTS = ("sleep_transition", "relaxation", "neutral", "stimulation")

TEMPO_MIN, TEMPO_MAX = 40, 180

# tempo word boundaries for prompt rendering: <70 slow, 70-110 moderate, >110 fast
_TEMPO_WORDS = ((70, "slow"), (111, "moderate"), (10_000, "fast"))

_USE_CASE_BY_GENRE = {
    "ambient": "relaxation",
    "classical": "meditation",
    "folk": "leisure",
    "percussive": "movement",
    "energizing": "exercise",
    "lullaby": "sleep",
}
_GENRE_BY_USE_CASE = {v: k for k, v in _USE_CASE_BY_GENRE.items()}


class PlanValidationError(ValueError):
    """Plan JSON failed validation; ``fields`` names the offenders."""

    def __init__(self, fields, message=None):
        self.fields = list(fields)
        super().__init__(message or f"invalid plan fields: {', '.join(self.fields)}")


@dataclass(frozen=True)
class MusicPlan:
    tempo_bpm: int
    genre_mood: str
    instrumentation: tuple[str, ...]
    mode: PentatonicMode
    tonic_pc: int
    intensity: float

    def __post_init__(self):
        if not TEMPO_MIN <= self.tempo_bpm <= TEMPO_MAX:
            raise ValueError(f"tempo {self.tempo_bpm} out of [{TEMPO_MIN},{TEMPO_MAX}]")
        if self.genre_mood not in GENRES:
            raise ValueError(f"unknown genre {self.genre_mood!r}")
        if not 1 <= len(self.instrumentation) <= 3:
            raise ValueError("instrumentation must list 1-3 instruments")
        for inst in self.instrumentation:
            if inst not in INSTRUMENTS:
                raise ValueError(f"unknown instrument {inst!r}")
        if not 0 <= self.tonic_pc <= 11:
            raise ValueError(f"tonic_pc {self.tonic_pc} out of 0..11")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity {self.intensity} out of [0,1]")


@dataclass(frozen=True)
class ReasoningTrace:
    """observe -> intent -> parameters, always exactly these three stages."""

    observations: tuple[tuple[str, str, str], ...]
    intent: str
    parameter_rationale: dict = field(default_factory=dict)
    origin: str = "rules"  # rules | external | fallback

    @property
    def stages(self):
        return ("observe", "intent", "parameters")


_HR_READINGS = {
    "low": "deep rest",
    "normal": "steady pulse",
    "elevated": "mild arousal",
    "high": "strong arousal",
}
_RR_READINGS = {
    "slow": "slow, settled breathing",
    "normal": "steady breathing",
    "fast": "fast breathing, activity likely",
}
_BUCKET_READINGS = {
    "morning": "start of the day",
    "day": "daytime activity period",
    "evening": "wind-down period",
    "late_night": "pre-sleep period",
}


def _decide_intent(state: UserState) -> str:
    hr = state.tokens.hr_band
    rr = state.tokens.rr_band
    if rr == "fast":
        return "stimulation"
    if state.time_bucket == "late_night":
        return "sleep_transition"
    if hr in ("elevated", "high"):
        return "relaxation"
    if hr == "low" and rr == "slow":
        return "relaxation"
    if state.user_status == "resting":
        return "relaxation"
    return "neutral"


def _base_tempo(intent: str, hr_band: str) -> int:
    if intent == "sleep_transition":
        # start near the user's pace when aroused, settle low otherwise
        return 76 if hr_band in ("elevated", "high") else 64
    if intent == "relaxation":
        return 58
    if intent == "neutral":
        return 88
    return 126  # stimulation


_RR_TEMPO_DELTA = {"slow": -6, "normal": 0, "fast": +18}


def _choose_mode(intent: str, state: UserState) -> PentatonicMode:
    if intent == "stimulation":
        return PentatonicMode.ZHI
    if intent == "sleep_transition":
        if state.tokens.hr_band in ("elevated", "high"):
            return PentatonicMode.YU
        return PentatonicMode.GONG
    if intent == "relaxation":
        if state.tokens.rr_band == "slow":
            return PentatonicMode.GONG
        return PentatonicMode.YU
    # neutral
    if state.time_bucket in ("morning", "day"):
        return PentatonicMode.SHANG
    return PentatonicMode.JUE


def _choose_genre(intent: str, state: UserState) -> str:
    if intent == "sleep_transition":
        return "lullaby"
    if intent == "relaxation":
        return "ambient"
    if intent == "stimulation":
        return "percussive"
    return "folk" if state.time_bucket == "morning" else "classical"


_DEFAULT_INSTRUMENTS = {
    "sleep_transition": ("pad", "strings"),
    "relaxation": ("erhu", "pad"),
    "neutral": ("guzheng", "dizi"),
    "stimulation": ("percussion", "dizi"),
}


def _choose_instruments(intent: str, state: UserState) -> tuple[str, ...]:
    default = _DEFAULT_INSTRUMENTS[intent]
    prev = state.prev_instrumentation
    if prev and intent != "stimulation" and prev[0] in default:
        # keep the established lead instrument for session continuity
        rest = tuple(x for x in default if x != prev[0])
        return (prev[0],) + rest[:2]
    return default


def plan(
    state: UserState, prev: MusicPlan | None = None, seed: int = 0
) -> tuple[MusicPlan, ReasoningTrace]:
    """Deterministic rule plan plus its three-stage reasoning trace.

    The tonic pitch class is drawn from ``seed`` for a fresh session and
    held from ``prev`` otherwise, so the key does not wander while the
    rest of the plan adapts.
    """
    hr = state.tokens.hr_band
    rr = state.tokens.rr_band
    temp_bucket = temperature_bucket(state.temperature_c)

    intent = _decide_intent(state)
    tempo = _base_tempo(intent, hr) + _RR_TEMPO_DELTA[rr]
    if temp_bucket == "hot":
        tempo -= 4
    elif temp_bucket == "cold":
        tempo += 2
    tempo = int(min(max(tempo, TEMPO_MIN), TEMPO_MAX))

    mode = _choose_mode(intent, state)
    genre = _choose_genre(intent, state)
    instruments = _choose_instruments(intent, state)

    hr_idx = HR_BANDS.index(hr)
    rr_idx = RR_BANDS.index(rr)
    arousal = 0.5 * hr_idx / 3 + 0.5 * rr_idx / 2
    intensity = 0.15 + 0.7 * arousal
    if intent == "stimulation":
        intensity += 0.1
    intensity = round(min(max(intensity, 0.0), 1.0), 2)

    if prev is not None:
        tonic = prev.tonic_pc
    else:
        tonic = random.Random(seed).randrange(12)

    music_plan = MusicPlan(
        tempo_bpm=tempo,
        genre_mood=genre,
        instrumentation=instruments,
        mode=mode,
        tonic_pc=tonic,
        intensity=intensity,
    )

    observations = (
        ("heart_rate", hr, _HR_READINGS[hr]),
        ("respiration", rr, _RR_READINGS[rr]),
        ("time", f"{state.clock_time} ({state.time_bucket})", _BUCKET_READINGS[state.time_bucket]),
        ("temperature", f"{state.temperature_c:.1f} C ({temp_bucket})", f"{temp_bucket} environment"),
        ("status", state.user_status, f"user reports {state.user_status}"),
    )
    rationale = {
        "tempo_bpm": f"{intent} base {_base_tempo(intent, hr)} BPM, {rr} breathing {_RR_TEMPO_DELTA[rr]:+d}",
        "genre_mood": f"{genre} supports {intent.replace('_', ' ')}",
        "instrumentation": ", ".join(instruments)
        + (" held from previous segment" if state.prev_instrumentation else " chosen for the intent"),
        "mode": f"{mode} mode fits {intent.replace('_', ' ')}",
    }
    trace = ReasoningTrace(
        observations=observations,
        intent=intent,
        parameter_rationale=rationale,
        origin="rules",
    )
    return music_plan, trace


def tempo_word(tempo_bpm: int) -> str:
    for bound, word in _TEMPO_WORDS:
        if tempo_bpm < bound:
            return word
    return "fast"


def render_prompt(plan: MusicPlan) -> str:
    """Structured prompt text; round-trips through ``parse_prompt``."""
    lead = plan.instrumentation[0]
    use_case = _USE_CASE_BY_GENRE[plan.genre_mood]
    return (
        f"{tempo_word(plan.tempo_bpm)} {lead} melody (style: {plan.genre_mood}) "
        f"at {plan.tempo_bpm} BPM for {use_case}, {plan.mode} mode"
    )


_PROMPT_RE = re.compile(
    r"^(?P<word>slow|moderate|fast) (?P<lead>\w+) melody "
    r"\(style: (?P<genre>\w+)\) at (?P<bpm>\d+) BPM "
    r"for (?P<use>\w+), (?P<mode>\w+) mode$"
)


def parse_prompt(text: str) -> dict:
    """Recover the prompt-visible plan fields from rendered prompt text."""
    m = _PROMPT_RE.match(text.strip())
    if not m:
        raise ValueError(f"unparseable prompt: {text!r}")
    return {
        "tempo_bpm": int(m.group("bpm")),
        "instrumentation": [m.group("lead")],
        "genre_mood": m.group("genre"),
        "mode": mode_from_name(m.group("mode")),
    }


_REQUIRED_PLAN_FIELDS = (
    "tempo_bpm",
    "genre_mood",
    "instrumentation",
    "mode",
    "tonic_pc",
    "intensity",
)


def validate_plan(candidate: dict) -> tuple[MusicPlan, list[str]]:
    """Check a raw plan JSON against the vocabulary and ranges.

    Returns the validated plan and a list of warnings; tempo outside
    [40, 180] is clamped with a warning rather than rejected.
    """
    if not isinstance(candidate, dict):
        raise PlanValidationError(["<root>"], "plan must be a JSON object")
    bad = [f for f in _REQUIRED_PLAN_FIELDS if f not in candidate]
    if bad:
        raise PlanValidationError(bad, f"missing plan fields: {', '.join(bad)}")

    warnings: list[str] = []
    errors: list[str] = []

    try:
        tempo = int(candidate["tempo_bpm"])
    except (TypeError, ValueError):
        errors.append("tempo_bpm")
        tempo = 0
    else:
        if tempo < TEMPO_MIN:
            warnings.append(f"tempo {tempo} clamped to {TEMPO_MIN}")
            tempo = TEMPO_MIN
        elif tempo > TEMPO_MAX:
            warnings.append(f"tempo {tempo} clamped to {TEMPO_MAX}")
            tempo = TEMPO_MAX

    genre = candidate["genre_mood"]
    if genre not in GENRES:
        errors.append("genre_mood")

    instruments = candidate["instrumentation"]
    if (
        not isinstance(instruments, (list, tuple))
        or not 1 <= len(instruments) <= 3
        or any(i not in INSTRUMENTS for i in instruments)
    ):
        errors.append("instrumentation")

    try:
        mode = mode_from_name(candidate["mode"]) if not isinstance(
            candidate["mode"], PentatonicMode
        ) else candidate["mode"]
    except ValueError:
        errors.append("mode")
        mode = None

    tonic = candidate["tonic_pc"]
    if not isinstance(tonic, int) or not 0 <= tonic <= 11:
        errors.append("tonic_pc")

    intensity = candidate["intensity"]
    if not isinstance(intensity, (int, float)) or not 0 <= float(intensity) <= 1:
        errors.append("intensity")

    if errors:
        raise PlanValidationError(errors)

    return (
        MusicPlan(
            tempo_bpm=tempo,
            genre_mood=genre,
            instrumentation=tuple(instruments),
            mode=mode,
            tonic_pc=tonic,
            intensity=float(intensity),
        ),
        warnings,
    )


def plan_to_json(plan: MusicPlan, trace: ReasoningTrace | None = None) -> dict:
    payload = {
        "tempo_bpm": plan.tempo_bpm,
        "genre_mood": plan.genre_mood,
        "instrumentation": list(plan.instrumentation),
        "mode": str(plan.mode),
        "tonic_pc": plan.tonic_pc,
        "intensity": plan.intensity,
    }
    if trace is not None:
        payload["trace"] = trace_to_json(trace)
    return payload


def trace_to_json(trace: ReasoningTrace) -> dict:
    return {
        "stages": list(trace.stages),
        "observations": [list(o) for o in trace.observations],
        "intent": trace.intent,
        "parameter_rationale": dict(trace.parameter_rationale),
        "origin": trace.origin,
    }


_INTENT_BY_GENRE = {
    "lullaby": "sleep_transition",
    "ambient": "relaxation",
    "classical": "neutral",
    "folk": "neutral",
    "percussive": "stimulation",
    "energizing": "stimulation",
}


def external_plan(
    state: UserState,
    endpoint: str,
    timeout_ms: float = 2000.0,
    seed: int = 0,
    prev: MusicPlan | None = None,
) -> tuple[MusicPlan, ReasoningTrace]:
    """Ask an external planner backend, falling back to the rule table.

    POSTs the UserState JSON to ``endpoint`` and validates the returned
    plan. Any network failure, timeout, or invalid response falls back
    to :func:`plan`; the fallback (and its reason) is recorded in the
    trace, never raised to the session.
    """
    reason = None
    try:
        req = urllib.request.Request(
            endpoint,
            data=json.dumps(user_state_to_json(state)).encode(),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req, timeout=timeout_ms / 1000.0) as resp:
            payload = json.loads(resp.read().decode())
        music_plan, warnings = validate_plan(payload)
    except Exception as exc:  # noqa: BLE001 - any backend failure means fallback
        reason = f"{type(exc).__name__}: {exc}"
    else:
        backend_trace = payload.get("trace")
        notes = {"backend": endpoint}
        if warnings:
            notes["warnings"] = "; ".join(warnings)
        if isinstance(backend_trace, (list, dict)):
            notes["backend_trace"] = backend_trace
        trace = ReasoningTrace(
            observations=(
                ("backend", endpoint, "external plan accepted"),
                ("heart_rate", state.tokens.hr_band, _HR_READINGS[state.tokens.hr_band]),
                ("respiration", state.tokens.rr_band, _RR_READINGS[state.tokens.rr_band]),
            ),
            intent=_INTENT_BY_GENRE.get(music_plan.genre_mood, "neutral"),
            parameter_rationale=notes,
            origin="external",
        )
        return music_plan, trace

    music_plan, trace = plan(state, prev=prev, seed=seed)
    fallback_obs = (("backend", endpoint, f"fallback to rules: {reason}"),)
    trace = ReasoningTrace(
        observations=fallback_obs + trace.observations,
        intent=trace.intent,
        parameter_rationale=dict(trace.parameter_rationale, backend_fallback=reason),
        origin="fallback",
    )
    return music_plan, trace
