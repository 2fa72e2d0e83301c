import numpy as np
import pytest

from biomuse.melody import MelodyScore, NoteEvent, generate
from biomuse.pentatonic import PentatonicMode, scale_pitch_classes, tonal_embedding
from biomuse.planner import MusicPlan
from biomuse.synth import (
    SAMPLE_RATE,
    RELEASE_S,
    AudioClip,
    crossfade,
    dominant_frequency,
    estimate_tempo_bpm,
    midi_to_hz,
    read_wav,
    render,
    wav_bytes,
    write_wav,
)


def one_note_score(pitch=69, dur=2.0):
    return MelodyScore(notes=(NoteEvent(0.0, dur, pitch, 0.9),), beats_total=dur, meta={})


def plan_with(inst, tempo=60, intensity=0.5):
    return MusicPlan(tempo, "classical", (inst,), PentatonicMode.GONG, 0, intensity)


class TestRender:
    def test_quarter_note_duration_at_60bpm(self):
        clip = render(one_note_score(dur=1.0), plan_with("erhu", 60))
        assert clip.duration_s == pytest.approx(1.0 + RELEASE_S, abs=0.01)

    @pytest.mark.parametrize(
        "inst", ["guzheng", "erhu", "dizi", "pad", "strings", "percussion"]
    )
    def test_a4_peaks_at_440(self, inst):
        clip = render(one_note_score(69), plan_with(inst))
        assert dominant_frequency(clip, 200, 1000) == pytest.approx(440.0, abs=1.0)

    def test_eight_beats_at_120bpm(self):
        score = MelodyScore(
            notes=tuple(NoteEvent(float(i), 1.0, 64, 0.8) for i in range(8)),
            beats_total=8.0,
            meta={},
        )
        clip = render(score, plan_with("erhu", 120))
        assert clip.duration_s == pytest.approx(4.0 + RELEASE_S, abs=0.01)

    def test_peak_normalized(self):
        clip = render(one_note_score(), plan_with("guzheng"))
        peak = float(np.max(np.abs(clip.samples)))
        assert peak == pytest.approx(0.9, abs=1e-6)
        assert np.all(np.isfinite(clip.samples))

    def test_empty_score_gives_empty_clip(self):
        empty = MelodyScore(notes=(), beats_total=0.0, meta={})
        clip = render(empty, plan_with("erhu"))
        assert clip.samples.size == 0

    def test_rendered_pitches_in_scale_for_conditioned_score(self):
        plan = MusicPlan(72, "ambient", ("erhu",), PentatonicMode.ZHI, 7, 0.3)
        score = generate(plan, tonal_embedding(plan.mode, 16), 4, 2)
        scale = set(scale_pitch_classes(plan.mode, plan.tonic_pc))
        spb = 60.0 / plan.tempo_bpm
        clip = render(score, plan)
        for note in score.notes[:6]:
            i0 = int((note.onset_beats * spb + 0.02) * SAMPLE_RATE)
            i1 = int((note.onset_beats + note.duration_beats) * spb * SAMPLE_RATE)
            f = dominant_frequency(AudioClip(clip.samples[i0:i1]), 50, 2000)
            midi = 69 + 12 * np.log2(f / 440.0)
            assert round(midi) % 12 in scale

    def test_determinism(self):
        plan = plan_with("guzheng", 90)
        score = generate(
            MusicPlan(90, "classical", ("guzheng",), PentatonicMode.GONG, 0, 0.5),
            tonal_embedding(PentatonicMode.GONG, 16),
            4,
            7,
        )
        a = render(score, plan)
        b = render(score, plan)
        assert np.array_equal(a.samples, b.samples)

    def test_tempo_out_of_range(self):
        from types import SimpleNamespace

        score = one_note_score()
        bad = SimpleNamespace(tempo_bpm=30, instrumentation=("erhu",))
        with pytest.raises(ValueError):
            render(score, bad)


class TestWav:
    def test_round_trip_within_one_lsb(self, tmp_path):
        clip = render(one_note_score(), plan_with("erhu"))
        path = tmp_path / "clip.wav"
        write_wav(clip, path)
        back = read_wav(path)
        assert back.sample_rate_hz == SAMPLE_RATE
        assert back.samples.size == clip.samples.size
        assert float(np.max(np.abs(back.samples - clip.samples))) <= 1.0 / 32768

    def test_data_chunk_sizing(self, tmp_path):
        clip = AudioClip(samples=np.zeros(44100))
        path = tmp_path / "sec.wav"
        write_wav(clip, path)
        assert path.stat().st_size == 44 + 88200

    def test_empty_clip_valid_header(self, tmp_path):
        path = tmp_path / "empty.wav"
        write_wav(AudioClip(samples=np.zeros(0)), path)
        assert path.stat().st_size == 44
        assert path.read_bytes()[:4] == b"RIFF"

    def test_wav_bytes_match_file(self, tmp_path):
        clip = AudioClip(samples=np.linspace(-0.5, 0.5, 1000))
        path = tmp_path / "x.wav"
        write_wav(clip, path)
        assert wav_bytes(clip) == path.read_bytes()


class TestCrossfade:
    def test_zero_overlap_is_concatenation(self):
        a = AudioClip(samples=np.full(100, 0.25))
        b = AudioClip(samples=np.full(50, -0.25))
        out = crossfade(a, b, 0.0)
        assert out.samples.size == 150
        assert np.array_equal(out.samples[:100], a.samples)

    def test_constant_inputs_stay_constant(self):
        a = AudioClip(samples=np.full(SAMPLE_RATE, 0.5))
        b = AudioClip(samples=np.full(SAMPLE_RATE, 0.5))
        out = crossfade(a, b, 0.5)
        ripple = float(np.max(np.abs(out.samples - 0.5))) / 0.5
        assert ripple < 0.01

    def test_full_overlap_length(self):
        a = AudioClip(samples=np.full(1000, 0.1))
        b = AudioClip(samples=np.full(2000, 0.1))
        out = crossfade(a, b, 1000 / SAMPLE_RATE)
        assert out.samples.size == 2000

    def test_output_length_formula(self):
        a = AudioClip(samples=np.zeros(5000))
        b = AudioClip(samples=np.zeros(7000))
        n_ov = int(round(0.05 * SAMPLE_RATE))
        out = crossfade(a, b, 0.05)
        assert out.samples.size == 5000 + 7000 - n_ov

    def test_mismatched_formats_rejected(self):
        a = AudioClip(samples=np.zeros(100), channels=1)
        b = AudioClip(samples=np.zeros((100, 2)).flatten(), channels=2)
        with pytest.raises(ValueError):
            crossfade(a, b, 0.0)

    def test_overlap_exceeding_clip_rejected(self):
        a = AudioClip(samples=np.zeros(100))
        b = AudioClip(samples=np.zeros(100))
        with pytest.raises(ValueError):
            crossfade(a, b, 1.0)


class TestTempoRecovery:
    @pytest.mark.parametrize("tempo,intensity,inst", [
        (52, 0.15, "erhu"),
        (72, 0.3, "pad"),
        (88, 0.45, "guzheng"),
        (144, 0.82, "percussion"),
    ])
    def test_beat_period_within_2bpm(self, tempo, intensity, inst):
        plan = MusicPlan(tempo, "ambient", (inst,), PentatonicMode.GONG, 0, intensity)
        score = generate(plan, tonal_embedding(plan.mode, 32), bars=8, seed=5)
        clip = render(score, plan)
        assert estimate_tempo_bpm(clip) == pytest.approx(tempo, abs=2.0)


def test_midi_to_hz():
    assert midi_to_hz(69) == pytest.approx(440.0)
    assert midi_to_hz(57) == pytest.approx(220.0)
    assert midi_to_hz(60) == pytest.approx(261.6256, rel=1e-4)
