"""Synthetic chest-motion and radar-phase signal generation.

The simulator produces ground-truth two-component chest displacement
(respiration + heartbeat sinusoids, optional respiration harmonic) and
converts it to the demodulated phase a radar front-end would deliver for
the target range bin. Range processing and chirp-level details are
deliberately collapsed: downstream stages only ever see phase.

Phase model: phi(t) = 4*pi*x(t)/lambda, with x(t) in mm and the radar
wavelength lambda in mm (60 GHz -> ~5 mm).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

#: Default amplitude ratio of the optional respiration harmonic at 2*f_r.
RESP_HARMONIC_RATIO = 0.3

#: c / 60 GHz in millimetres.
WAVELENGTH_60GHZ_MM = 299_792_458_000.0 / 60e9  # ~4.9965 mm


@dataclass(frozen=True)
class VitalsGroundTruth:
    """True respiration/heart frequencies and displacement amplitudes."""

    resp_freq_hz: float
    heart_freq_hz: float
    resp_amp_mm: float = 4.0
    heart_amp_mm: float = 0.2
    resp_phase_rad: float = 0.0
    heart_phase_rad: float = 0.0

    def __post_init__(self):
        if not 0.1 <= self.resp_freq_hz <= 0.5:
            raise ValueError(f"resp_freq_hz out of [0.1, 0.5]: {self.resp_freq_hz}")
        if not 0.8 <= self.heart_freq_hz <= 2.0:
            raise ValueError(f"heart_freq_hz out of [0.8, 2.0]: {self.heart_freq_hz}")
        if self.resp_amp_mm < 0 or self.heart_amp_mm < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.resp_amp_mm > 0 and self.heart_amp_mm >= self.resp_amp_mm:
            raise ValueError("heart_amp_mm must be smaller than resp_amp_mm")

    @property
    def resp_rpm(self) -> float:
        return self.resp_freq_hz * 60.0

    @property
    def heart_bpm(self) -> float:
        return self.heart_freq_hz * 60.0


@dataclass(frozen=True, eq=False)
class DisplacementTrace:
    samples: np.ndarray
    sample_rate_hz: float
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.samples.size == 0:
            raise ValueError("trace must be non-empty")
        if self.sample_rate_hz < 20:
            raise ValueError("sample_rate_hz must be >= 20")
        expected = self.duration_s * self.sample_rate_hz
        if abs(self.samples.size - expected) > 1:
            raise ValueError(
                f"sample count {self.samples.size} inconsistent with "
                f"{self.duration_s} s @ {self.sample_rate_hz} Hz"
            )


@dataclass(frozen=True, eq=False)
class PhaseSignal:
    samples: np.ndarray
    sample_rate_hz: float
    wavelength_mm: float = WAVELENGTH_60GHZ_MM

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.samples.size == 0:
            raise ValueError("phase signal must be non-empty")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.wavelength_mm <= 0:
            raise ValueError("wavelength_mm must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz


def synth_displacement(
    truth: VitalsGroundTruth,
    duration_s: float,
    sample_rate_hz: float = 100.0,
    resp_harmonic: bool = False,
) -> DisplacementTrace:
    """Two-sinusoid chest displacement in mm, uniformly sampled.

    x(t) = A_r sin(2 pi f_r t + p_r) + A_h sin(2 pi f_h t + p_h)

    With ``resp_harmonic`` a third term at 2*f_r with amplitude
    RESP_HARMONIC_RATIO * A_r is added; it stresses the harmonic
    rejection path of the vitals estimator.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    if sample_rate_hz < 20:
        raise ValueError(f"sample_rate_hz must be >= 20, got {sample_rate_hz}")

    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    x = truth.resp_amp_mm * np.sin(
        2 * np.pi * truth.resp_freq_hz * t + truth.resp_phase_rad
    )
    x += truth.heart_amp_mm * np.sin(
        2 * np.pi * truth.heart_freq_hz * t + truth.heart_phase_rad
    )
    if resp_harmonic:
        x += (
            RESP_HARMONIC_RATIO
            * truth.resp_amp_mm
            * np.sin(2 * np.pi * 2 * truth.resp_freq_hz * t + truth.resp_phase_rad)
        )
    return DisplacementTrace(samples=x, sample_rate_hz=sample_rate_hz, duration_s=duration_s)


def displacement_to_phase(
    trace: DisplacementTrace, wavelength_mm: float = WAVELENGTH_60GHZ_MM
) -> PhaseSignal:
    """Element-wise phase phi = 4 pi x / lambda; sample rate preserved."""
    if wavelength_mm <= 0:
        raise ValueError(f"wavelength_mm must be positive, got {wavelength_mm}")
    phase = 4.0 * np.pi * trace.samples / wavelength_mm
    return PhaseSignal(
        samples=phase,
        sample_rate_hz=trace.sample_rate_hz,
        wavelength_mm=wavelength_mm,
    )


def corrupt(
    signal: PhaseSignal,
    snr_db: float | None,
    drift_rad_per_s: float = 0.0,
    seed: int = 0,
) -> PhaseSignal:
    """Add white Gaussian noise at the given SNR plus a linear phase drift.

    Noise power is scaled so signal-power / noise-power = 10^(snr_db/10),
    where signal power is the variance of the input. ``snr_db=None``
    disables noise entirely. Deterministic for a given seed.
    """
    x = signal.samples
    out = x.astype(float).copy()
    if snr_db is not None:
        p_signal = float(np.var(x))
        if p_signal > 0:
            p_noise = p_signal / (10.0 ** (snr_db / 10.0))
            rng = np.random.default_rng(seed)
            out = out + rng.normal(0.0, np.sqrt(p_noise), size=x.size)
    if drift_rad_per_s != 0.0:
        out = out + drift_rad_per_s * signal.times()
    return PhaseSignal(
        samples=out,
        sample_rate_hz=signal.sample_rate_hz,
        wavelength_mm=signal.wavelength_mm,
    )


def save_trace_csv(path, samples: np.ndarray, sample_rate_hz: float):
    """Write a `t_s,value` CSV, one row per sample."""
    samples = np.asarray(samples, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "value"])
        for i, v in enumerate(samples):
            writer.writerow([f"{i / sample_rate_hz:.6f}", f"{v:.9g}"])


def load_trace_csv(path) -> tuple[np.ndarray, float]:
    """Read a `t_s,value` CSV back into (samples, sample_rate_hz)."""
    times, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["t_s", "value"]:
            raise ValueError(f"expected header 't_s,value', got {header!r}")
        for row in reader:
            if not row:
                continue
            times.append(float(row[0]))
            values.append(float(row[1]))
    if len(values) < 2:
        raise ValueError("trace CSV must contain at least 2 samples")
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise ValueError("time column must be strictly increasing")
    rate = 1.0 / float(np.median(dt))
    return np.asarray(values), rate
