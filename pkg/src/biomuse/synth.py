"""Render melodies to 44.1 kHz PCM audio with simple classical synthesis.

One timbre per instrument family, all exactly pitched in 12-TET
(A4 = 440 Hz):

  * guzheng  - Karplus-Strong plucked string (allpass-tuned fractional
               delay, run through scipy.lfilter for speed)
  * erhu     - filtered sawtooth with gentle vibrato
  * dizi     - breathy near-sine flute
  * pad      - slow-attack additive pad
  * strings  - detuned sawtooth ensemble
  * percussion - noise burst into a pitched resonator

Clips are mono, peak-normalized to 0.9, and written as 16-bit RIFF/WAVE.
"""

from __future__ import annotations

import hashlib
import io
import wave
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .melody import MelodyScore
from .planner import MusicPlan

SAMPLE_RATE = 44100
RELEASE_S = 0.25
PEAK_NORM = 0.9


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"sample rate fixed at {SAMPLE_RATE}")
        if self.channels not in (1, 2):
            raise ValueError("channels must be 1 or 2")
        if self.samples.size and float(np.max(np.abs(self.samples))) > 1.0 + 1e-9:
            raise ValueError("samples exceed +-1")

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate_hz


def midi_to_hz(pitch: int) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def _env(n: int, fs: int, attack_s: float, release_n: int, sustain: float = 1.0,
         decay_s: float = 0.0, decay_to: float = 1.0):
    """Attack / optional decay / sustain / raised-cosine release envelope."""
    env = np.full(n, sustain)
    a = max(int(attack_s * fs), 1)
    a = min(a, n)
    env[:a] = np.linspace(0.0, sustain, a, endpoint=False)
    if decay_s > 0:
        d = min(int(decay_s * fs), n - a)
        if d > 0:
            env[a : a + d] = np.linspace(sustain, sustain * decay_to, d)
            env[a + d :] = sustain * decay_to
    r = min(release_n, n)
    if r > 0:
        fade = 0.5 * (1 + np.cos(np.linspace(0, np.pi, r)))
        env[n - r :] *= fade
    return env


def _pluck(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    """Karplus-Strong string: noise burst through a tuned feedback loop.

    Loop delay = N + 0.5 (two-point average) + allpass fractional delay,
    matched to fs/freq so the fundamental lands on the target pitch.
    """
    period = fs / freq
    delay_n = int(np.floor(period - 0.5 - 1e-9))
    frac = period - delay_n - 0.5
    c = (1.0 - frac) / (1.0 + frac)
    rho = np.exp(-6.9 * period / fs / (n / fs + 0.3))  # ring ~ note length

    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    burst = min(delay_n, n)
    x[:burst] = rng.uniform(-1, 1, burst)

    # y = x + rho * AP(c) * LP * z^-N * y, expanded into one IIR
    a = np.zeros(delay_n + 3)
    a[0] = 1.0
    a[1] = c
    a[delay_n] += -0.5 * rho * c
    a[delay_n + 1] += -0.5 * rho * (1.0 + c)
    a[delay_n + 2] += -0.5 * rho
    y = sps.lfilter([1.0, c], a, x)
    peak = np.max(np.abs(y))
    return y / peak if peak > 0 else y


def _saw(phase: np.ndarray) -> np.ndarray:
    return 2.0 * (phase % 1.0) - 1.0


def _bowed(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    """Sawtooth with vibrato, low-passed to soften the upper harmonics."""
    t = np.arange(n) / fs
    vib = 1.0 + 0.0012 * np.sin(2 * np.pi * 5.5 * t)  # ~2 cents at 5.5 Hz
    phase = np.cumsum(freq * vib) / fs
    raw = _saw(phase)
    sos = sps.butter(2, min(6 * freq, 0.45 * fs), btype="low", fs=fs, output="sos")
    return sps.sosfilt(sos, raw)


def _flute(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    t = np.arange(n) / fs
    rng = np.random.default_rng(seed)
    tone = np.sin(2 * np.pi * freq * t) + 0.25 * np.sin(2 * np.pi * 2 * freq * t)
    breath = rng.normal(0, 1, n)
    sos = sps.butter(2, min(2.5 * freq, 0.45 * fs), btype="low", fs=fs, output="sos")
    return tone + 0.04 * sps.sosfilt(sos, breath)


def _pad(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    t = np.arange(n) / fs
    y = np.zeros(n)
    for k, amp in ((1, 1.0), (2, 0.4), (3, 0.2), (4, 0.1)):
        f = k * freq
        if f < 0.45 * fs:
            y += amp * np.sin(2 * np.pi * f * t + 0.7 * k)
    y *= 1.0 + 0.08 * np.sin(2 * np.pi * 0.7 * t)  # slow shimmer
    return y


def _strings(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    t = np.arange(n) / fs
    y = _saw(freq * 1.0005 * t) + _saw(freq * 0.9995 * t)
    sos = sps.butter(2, min(5 * freq, 0.45 * fs), btype="low", fs=fs, output="sos")
    return sps.sosfilt(sos, y)


def _percussion(freq: float, n: int, fs: int, seed: int) -> np.ndarray:
    """Noise strike exciting a pitched, exponentially decaying resonator."""
    t = np.arange(n) / fs
    rng = np.random.default_rng(seed)
    strike_n = min(int(0.02 * fs), n)
    strike = np.zeros(n)
    strike[:strike_n] = rng.uniform(-1, 1, strike_n) * np.linspace(1, 0, strike_n)
    ring = np.exp(-t * 7.0) * np.sin(2 * np.pi * freq * t)
    return ring + 0.4 * strike


# per-timbre render function and (attack_s, decay_s, decay_to) envelope shape
_TIMBRES = {
    "guzheng": (_pluck, 0.002, 0.0, 1.0),
    "erhu": (_bowed, 0.08, 0.0, 1.0),
    "dizi": (_flute, 0.05, 0.0, 1.0),
    "pad": (_pad, 0.35, 0.0, 1.0),
    "strings": (_strings, 0.25, 0.0, 1.0),
    "percussion": (_percussion, 0.001, 0.0, 1.0),
}


def render(score: MelodyScore, plan: MusicPlan) -> AudioClip:
    """Synthesize a melody at the plan's tempo with its lead instrument.

    Clip length is beats_total * (60/tempo) plus a fixed release tail;
    output is peak-normalized to 0.9. An empty score yields an empty
    (zero-sample) clip.
    """
    if not 40 <= plan.tempo_bpm <= 180:
        raise ValueError(f"tempo {plan.tempo_bpm} out of [40, 180]")
    if not score.notes:
        return AudioClip(samples=np.zeros(0), sample_rate_hz=SAMPLE_RATE)

    fs = SAMPLE_RATE
    spb = 60.0 / plan.tempo_bpm
    release_n = int(RELEASE_S * fs)
    total_n = int(round((score.beats_total * spb + RELEASE_S) * fs))
    lead = plan.instrumentation[0]
    timbre_fn, attack_s, decay_s, decay_to = _TIMBRES[lead]

    buf = np.zeros(total_n + release_n)
    for idx, note in enumerate(score.notes):
        start = int(round(note.onset_beats * spb * fs))
        dur_n = int(round(note.duration_beats * spb * fs))
        n = dur_n + release_n
        freq = midi_to_hz(note.pitch)
        seed = note.pitch * 7919 + idx
        tone = timbre_fn(freq, n, fs, seed)
        tone = tone * _env(n, fs, attack_s, release_n, decay_s=decay_s, decay_to=decay_to)
        end = min(start + n, buf.size)
        buf[start:end] += note.velocity * tone[: end - start]

    buf = buf[:total_n]
    if not np.all(np.isfinite(buf)):
        raise ValueError("rendered audio contains non-finite samples")
    peak = float(np.max(np.abs(buf)))
    if peak > 0:
        buf = buf * (PEAK_NORM / peak)
    return AudioClip(samples=buf, sample_rate_hz=fs)


def write_wav(clip: AudioClip, path) -> None:
    """16-bit little-endian PCM RIFF/WAVE; read-back error <= 1 LSB."""
    data = _pcm16_bytes(clip)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(clip.channels)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(data)


def wav_bytes(clip: AudioClip) -> bytes:
    """The complete WAV file as bytes (for in-memory serving)."""
    bio = io.BytesIO()
    with wave.open(bio, "wb") as wf:
        wf.setnchannels(clip.channels)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(_pcm16_bytes(clip))
    return bio.getvalue()


def _pcm16_bytes(clip: AudioClip) -> bytes:
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    return pcm.tobytes()


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as wf:
        n = wf.getnframes()
        channels = wf.getnchannels()
        rate = wf.getframerate()
        raw = wf.readframes(n)
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=np.clip(pcm, -1, 1), sample_rate_hz=rate, channels=1)


def clip_sha256(clip: AudioClip) -> str:
    return hashlib.sha256(wav_bytes(clip)).hexdigest()


def crossfade(a: AudioClip, b: AudioClip, overlap_s: float) -> AudioClip:
    """Constant-sum raised-cosine crossfade.

    Complementary cos^2/sin^2 gains keep the summed gain exactly 1, so
    identical (fully correlated) material passes through the fade at
    constant amplitude. Output length = len(a) + len(b) - overlap.
    """
    if a.sample_rate_hz != b.sample_rate_hz or a.channels != b.channels:
        raise ValueError("crossfade requires matching sample rate and channels")
    n_ov = int(round(overlap_s * a.sample_rate_hz))
    if n_ov < 0 or n_ov > min(a.samples.size, b.samples.size):
        raise ValueError(
            f"overlap {overlap_s}s exceeds a clip ({a.duration_s:.2f}/{b.duration_s:.2f}s)"
        )
    if n_ov == 0:
        return AudioClip(
            samples=np.concatenate([a.samples, b.samples]),
            sample_rate_hz=a.sample_rate_hz,
            channels=a.channels,
        )
    t = np.linspace(0.0, 1.0, n_ov, endpoint=False)
    gain_out = np.cos(0.5 * np.pi * t) ** 2
    gain_in = 1.0 - gain_out
    mixed = a.samples[-n_ov:] * gain_out + b.samples[:n_ov] * gain_in
    out = np.concatenate([a.samples[:-n_ov], mixed, b.samples[n_ov:]])
    return AudioClip(
        samples=np.clip(out, -1.0, 1.0),
        sample_rate_hz=a.sample_rate_hz,
        channels=a.channels,
    )


def dominant_frequency(clip: AudioClip, fmin: float = 30.0, fmax: float = 4000.0) -> float:
    """Strongest spectral component of a clip (for pitch verification)."""
    x = clip.samples
    if x.size == 0:
        raise ValueError("empty clip")
    win = np.hanning(x.size)
    nfft = int(2 ** np.ceil(np.log2(x.size * 2)))
    spec = np.abs(np.fft.rfft(x * win, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1.0 / clip.sample_rate_hz)
    band = (freqs >= fmin) & (freqs <= fmax)
    idx = np.flatnonzero(band)
    k = idx[np.argmax(spec[idx])]
    if 0 < k < spec.size - 1:
        a, b0, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b0 + c
        if denom != 0:
            k = k + float(np.clip(0.5 * (a - c) / denom, -1, 1))
    return float(k * clip.sample_rate_hz / nfft)


def estimate_tempo_bpm(
    clip: AudioClip, bpm_min: float = 40.0, bpm_max: float = 180.0
) -> float:
    """Beat period from the autocorrelation of the onset-strength envelope."""
    fs = clip.sample_rate_hz
    hop = int(0.005 * fs)
    win = int(0.02 * fs)
    x = clip.samples
    if x.size < 4 * win:
        raise ValueError("clip too short for tempo estimation")
    n_frames = (x.size - win) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: hop][:n_frames]
    env = np.sqrt(np.mean(frames**2, axis=1))
    # smooth away vibrato-rate (>4 Hz) envelope wiggle before onset detection
    smooth = max(int(0.09 / (hop / fs)), 1)
    kernel = np.ones(smooth) / smooth
    env = np.convolve(env, kernel, mode="same")
    onset = np.maximum(np.diff(env), 0.0)
    onset = onset - onset.mean()
    ac = np.correlate(onset, onset, mode="full")[onset.size - 1 :]
    hop_s = hop / fs
    lag_min = max(int(60.0 / bpm_max / hop_s), 1)
    lag_max = min(int(60.0 / bpm_min / hop_s), ac.size - 2)
    if lag_max <= lag_min:
        raise ValueError("clip too short for the tempo search range")
    window = ac[lag_min : lag_max + 1]
    peak = float(window.max())
    # metric multiples of the beat correlate almost as strongly as the
    # beat itself; take the smallest-lag local maximum that is nearly
    # as strong as the global one
    interior = np.arange(1, window.size - 1)
    is_max = (window[interior] >= window[interior - 1]) & (
        window[interior] >= window[interior + 1]
    )
    strong = interior[is_max & (window[interior] >= 0.85 * peak)]
    k = lag_min + (int(strong[0]) if strong.size else int(np.argmax(window)))
    a, b0, c = ac[k - 1], ac[k], ac[k + 1]
    denom = a - 2 * b0 + c
    delta = 0.0 if denom == 0 else float(np.clip(0.5 * (a - c) / denom, -1, 1))
    return 60.0 / ((k + delta) * hop_s)
