"""Discretize continuous vitals into symbolic tokens and fuse context.

Band thresholds carry a hysteresis margin: once a token is set, the
value must cross the boundary by the margin before the token changes,
so small oscillations around a threshold never flap the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

HR_BANDS = ("low", "normal", "elevated", "high")
RR_BANDS = ("slow", "normal", "fast")
TIME_BUCKETS = ("morning", "day", "evening", "late_night")

HR_HYSTERESIS_BPM = 3.0
RR_HYSTERESIS_RPM = 1.0


def _hr_raw_band(bpm: float) -> int:
    if bpm < 55:
        return 0  # low
    if bpm < 80:
        return 1  # normal
    if bpm <= 100:
        return 2  # elevated
    return 3  # high


def _rr_raw_band(rpm: float) -> int:
    if rpm < 10:
        return 0  # slow
    if rpm <= 18:
        return 1  # normal
    return 2  # fast


def _with_hysteresis(value, prev_idx, raw_fn, margin):
    raw = raw_fn(value)
    if prev_idx is None or raw == prev_idx:
        return raw
    if raw > prev_idx:
        # moving up: only as far as the margin-shifted value allows
        return max(prev_idx, raw_fn(value - margin))
    return min(prev_idx, raw_fn(value + margin))


@dataclass(frozen=True)
class VitalTokens:
    hr_band: str
    rr_band: str

    def __post_init__(self):
        if self.hr_band not in HR_BANDS:
            raise ValueError(f"unknown hr_band {self.hr_band!r}")
        if self.rr_band not in RR_BANDS:
            raise ValueError(f"unknown rr_band {self.rr_band!r}")


@dataclass(frozen=True)
class UserState:
    tokens: VitalTokens
    clock_time: str
    time_bucket: str
    temperature_c: float
    user_status: str = "resting"
    prev_instrumentation: tuple[str, ...] | None = None


def discretize_rates(
    hr_bpm: float, rr_rpm: float, prev: VitalTokens | None = None
) -> VitalTokens:
    """Band tokens from raw rates; out-of-range values clamp to the extremes.

    HR: low < 55, normal 55-80, elevated 80-100, high > 100 bpm.
    RR: slow < 10, normal 10-18, fast > 18 rpm.
    With ``prev`` given, changing band requires crossing the boundary by
    3 bpm / 1 rpm.
    """
    prev_hr = HR_BANDS.index(prev.hr_band) if prev else None
    prev_rr = RR_BANDS.index(prev.rr_band) if prev else None
    hr_idx = _with_hysteresis(hr_bpm, prev_hr, _hr_raw_band, HR_HYSTERESIS_BPM)
    rr_idx = _with_hysteresis(rr_rpm, prev_rr, _rr_raw_band, RR_HYSTERESIS_RPM)
    return VitalTokens(hr_band=HR_BANDS[hr_idx], rr_band=RR_BANDS[rr_idx])


def discretize(vitals, prev: VitalTokens | None = None) -> VitalTokens:
    """Tokens from a VitalsEstimate (heart in bpm, respiration in rpm)."""
    return discretize_rates(vitals.heart.rate_per_min, vitals.resp.rate_per_min, prev)


def parse_clock(clock_time: str) -> int:
    """'HH:MM' -> minutes since midnight; raises ValueError when malformed."""
    try:
        hh, mm = clock_time.strip().split(":")
        hours, minutes = int(hh), int(mm)
    except (ValueError, AttributeError) as exc:
        raise ValueError(f"malformed clock time {clock_time!r}") from exc
    if not (0 <= hours <= 23 and 0 <= minutes <= 59):
        raise ValueError(f"clock time out of range: {clock_time!r}")
    return hours * 60 + minutes


def time_bucket_of(clock_time: str) -> str:
    """Total, disjoint bucketing of the clock (half-open [start, end)).

    morning 05:00-11:00, day 11:00-18:00, evening 18:00-22:30,
    late_night 22:30-05:00.
    """
    m = parse_clock(clock_time)
    if 5 * 60 <= m < 11 * 60:
        return "morning"
    if 11 * 60 <= m < 18 * 60:
        return "day"
    if 18 * 60 <= m < 22 * 60 + 30:
        return "evening"
    return "late_night"


def temperature_bucket(temp_c: float) -> str:
    """cold < 16, comfortable 16-26, hot > 26 degrees C."""
    if temp_c < 16:
        return "cold"
    if temp_c <= 26:
        return "comfortable"
    return "hot"


def build_user_state(
    tokens: VitalTokens,
    clock_time: str,
    temperature_c: float = 22.0,
    user_status: str = "resting",
    prev_instrumentation=None,
) -> UserState:
    """Fuse tokens with environmental context into the planner's input."""
    if not math.isfinite(temperature_c):
        raise ValueError(f"temperature must be finite, got {temperature_c}")
    bucket = time_bucket_of(clock_time)
    prev = tuple(prev_instrumentation) if prev_instrumentation else None
    return UserState(
        tokens=tokens,
        clock_time=clock_time,
        time_bucket=bucket,
        temperature_c=float(temperature_c),
        user_status=str(user_status),
        prev_instrumentation=prev,
    )


def user_state_to_json(state: UserState) -> dict:
    """Wire encoding used on the planner endpoint."""
    return {
        "hr_band": state.tokens.hr_band,
        "rr_band": state.tokens.rr_band,
        "time": state.clock_time,
        "time_bucket": state.time_bucket,
        "temp_c": state.temperature_c,
        "status": state.user_status,
        "prev_instruments": list(state.prev_instrumentation or []),
    }


def user_state_from_json(payload: dict) -> UserState:
    tokens = VitalTokens(hr_band=payload["hr_band"], rr_band=payload["rr_band"])
    return build_user_state(
        tokens,
        payload["time"],
        payload.get("temp_c", 22.0),
        payload.get("status", "resting"),
        payload.get("prev_instruments") or None,
    )
