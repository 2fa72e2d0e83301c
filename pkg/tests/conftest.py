import numpy as np
import pytest

from biomuse.planner import MusicPlan
from biomuse.pentatonic import PentatonicMode


@pytest.fixture
def gong_plan():
    return MusicPlan(
        tempo_bpm=90,
        genre_mood="classical",
        instrumentation=("erhu",),
        mode=PentatonicMode.GONG,
        tonic_pc=0,
        intensity=0.5,
    )


def fft_peak_hz(samples, sample_rate_hz, fmin, fmax):
    """Independent FFT oracle: location of the strongest peak in a band."""
    x = np.asarray(samples, dtype=float)
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate_hz)
    band = (freqs >= fmin) & (freqs <= fmax)
    idx = np.flatnonzero(band)
    return float(freqs[idx[np.argmax(spec[idx])]])


def fft_amplitude_at(samples, sample_rate_hz, freq_hz):
    """Oracle amplitude of the component nearest freq_hz (rectangular DFT)."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    spec = np.abs(np.fft.rfft(x)) * 2.0 / n
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    k = int(np.argmin(np.abs(freqs - freq_hz)))
    return float(spec[max(k - 1, 0) : k + 2].max())
