"""Command-line entry point for every pipeline stage plus evaluations.

Subcommands: simulate, vitals, plan, generate, render, classify,
session, serve, eval-tonal, eval-vitals. All randomness takes --seed;
results write to --out or stdout. Operation failures exit 1 with a
message on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import melody as melody_mod
from . import synth as synth_mod
from .pentatonic import (
    MODE_ORDER,
    classify_mode,
    mode_from_name,
    tonal_embedding,
)
from .planner import GENRES, INSTRUMENTS, MusicPlan, plan as rule_plan, plan_to_json, render_prompt
from .radar import (
    PhaseSignal,
    VitalsGroundTruth,
    corrupt,
    displacement_to_phase,
    load_trace_csv,
    save_trace_csv,
    synth_displacement,
)
from .session import ScriptPhase, SessionConfig, log_append, run_session
from .state import build_user_state, discretize_rates
from .vitals import track_vitals, vitals_to_json

# ground-truth displacement amplitudes used by eval-vitals (mm)
EVAL_RESP_AMP_MM = 3.0
EVAL_HEART_AMP_MM = 0.5


@dataclass(frozen=True)
class EvalReport:
    condition: str  # embedded | soft_label | unconditioned
    n: int
    accuracy: float
    confusion: dict  # target mode -> {classified mode -> count}

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "n": self.n,
            "accuracy": round(self.accuracy, 4),
            "confusion": self.confusion,
        }


def eval_tonal(n_per_condition: int = 1000, seed: int = 0, bars: int = 4):
    """Tonal-conditioning ablation: classification accuracy per regime.

    For each condition, n melodies with uniformly random target
    (mode, tonic) are generated and classified; accuracy is the fraction
    whose classified mode matches the target mode.
    """
    if n_per_condition < 100:
        raise ValueError("n_per_condition must be >= 100")

    def one_condition(name, gen, cond_seed):
        rng = np.random.default_rng(seed * 7919 + cond_seed)
        confusion = {m.value: {k.value: 0 for k in MODE_ORDER} for m in MODE_ORDER}
        correct = 0
        for i in range(n_per_condition):
            mode = MODE_ORDER[int(rng.integers(5))]
            tonic = int(rng.integers(12))
            intensity = float(rng.uniform(0.1, 0.9))
            target = MusicPlan(90, "classical", ("erhu",), mode, tonic, intensity)
            score = gen(target, seed * 1_000_000 + cond_seed * 100_000 + i)
            result = classify_mode(score)
            confusion[mode.value][result.mode.value] += 1
            correct += result.mode is mode
        return EvalReport(name, n_per_condition, correct / n_per_condition, confusion)

    reports = [
        one_condition(
            "embedded",
            lambda p, s: melody_mod.generate(p, tonal_embedding(p.mode, bars * 4), bars, s),
            1,
        ),
        one_condition(
            "soft_label",
            lambda p, s: melody_mod.generate_soft(p, bars=bars, seed=s),
            2,
        ),
        one_condition(
            "unconditioned",
            lambda p, s: melody_mod.generate_unconditioned(p, bars, s),
            3,
        ),
    ]
    return reports


def eval_vitals(
    rate_grid=None,
    snr_list=(None, 0.0),
    seed: int = 0,
    duration_s: float = 60.0,
):
    """Vitals recovery error over a frequency grid at each SNR.

    Per cell: synthesize two-component chest motion (with the
    respiration harmonic enabled when noise is present), corrupt,
    track, and report the absolute error of the tracked session
    estimate (median across windows) per band.
    """
    if rate_grid is None:
        rate_grid = [(fr, fh) for fr in (0.15, 0.25, 0.4) for fh in (0.9, 1.2, 1.8)]
    rows = []
    for snr_db in snr_list:
        for fr, fh in rate_grid:
            truth = VitalsGroundTruth(
                fr, fh, EVAL_RESP_AMP_MM, EVAL_HEART_AMP_MM
            )
            trace = synth_displacement(
                truth, duration_s, 100.0, resp_harmonic=snr_db is not None
            )
            signal = displacement_to_phase(trace)
            if snr_db is not None:
                signal = corrupt(signal, snr_db, 0.0, seed)
            estimates = track_vitals(signal, 30.0, 5.0)
            hr = float(np.median([e.heart.rate_per_min for e in estimates]))
            rr = float(np.median([e.resp.rate_per_min for e in estimates]))
            rows.append(
                {
                    "snr_db": snr_db,
                    "resp_freq_hz": fr,
                    "heart_freq_hz": fh,
                    "hr_est_bpm": round(hr, 3),
                    "rr_est_rpm": round(rr, 3),
                    "hr_err_bpm": round(abs(hr - fh * 60.0), 3),
                    "rr_err_rpm": round(abs(rr - fr * 60.0), 3),
                }
            )
    summary = {}
    for snr_db in snr_list:
        sel = [r for r in rows if r["snr_db"] == snr_db]
        key = "clean" if snr_db is None else f"{snr_db:g}dB"
        summary[key] = {
            "max_hr_err_bpm": max(r["hr_err_bpm"] for r in sel),
            "max_rr_err_rpm": max(r["rr_err_rpm"] for r in sel),
            "mean_hr_err_bpm": round(float(np.mean([r["hr_err_bpm"] for r in sel])), 3),
            "mean_rr_err_rpm": round(float(np.mean([r["rr_err_rpm"] for r in sel])), 3),
        }
    return {"cells": rows, "summary": summary}


def _write_out(obj, out_path, default=sys.stdout):
    text = json.dumps(obj, indent=2)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    else:
        default.write(text + "\n")


def _cmd_simulate(args):
    truth = VitalsGroundTruth(
        resp_freq_hz=args.rr / 60.0,
        heart_freq_hz=args.hr / 60.0,
        resp_amp_mm=args.resp_amp,
        heart_amp_mm=args.heart_amp,
    )
    trace = synth_displacement(
        truth, args.duration, args.rate, resp_harmonic=args.resp_harmonic
    )
    signal = displacement_to_phase(trace)
    if args.snr is not None or args.drift:
        signal = corrupt(signal, args.snr, args.drift, args.seed)
    if not args.out:
        raise SystemExit("simulate requires --out for the CSV trace")
    save_trace_csv(args.out, signal.samples, signal.sample_rate_hz)
    print(f"wrote {signal.samples.size} samples to {args.out}")


def _cmd_vitals(args):
    samples, rate = load_trace_csv(args.infile)
    signal = PhaseSignal(samples=samples, sample_rate_hz=rate)
    estimates = track_vitals(
        signal, window_s=args.window, hop_s=args.hop, estimator=args.estimator
    )
    lines = [json.dumps(vitals_to_json(e)) for e in estimates]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_plan(args):
    tokens = discretize_rates(args.hr, args.rr)
    state = build_user_state(tokens, args.time, args.temp, args.status)
    music_plan, trace = rule_plan(state, seed=args.seed)
    payload = plan_to_json(music_plan, trace)
    payload["prompt"] = render_prompt(music_plan)
    _write_out(payload, args.out)


def _load_plan_json(path) -> MusicPlan:
    from .planner import validate_plan

    with open(path) as fh:
        raw = json.load(fh)
    music_plan, warnings = validate_plan(raw)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return music_plan


def _plan_from_args(args) -> MusicPlan:
    if args.plan:
        return _load_plan_json(args.plan)
    return MusicPlan(
        tempo_bpm=args.tempo,
        genre_mood=args.genre,
        instrumentation=tuple(args.instrument.split(",")),
        mode=mode_from_name(args.mode),
        tonic_pc=args.tonic,
        intensity=args.intensity,
    )


def _cmd_generate(args):
    music_plan = _plan_from_args(args)
    if args.condition == "embedded":
        cond = tonal_embedding(music_plan.mode, args.bars * 4)
        score = melody_mod.generate(music_plan, cond, args.bars, args.seed)
    elif args.condition == "soft":
        score = melody_mod.generate_soft(music_plan, bars=args.bars, seed=args.seed)
    else:
        score = melody_mod.generate_unconditioned(music_plan, args.bars, args.seed)
    _write_out(melody_mod.melody_to_json(score), args.out)


def _cmd_render(args):
    with open(args.infile) as fh:
        score = melody_mod.melody_from_json(json.load(fh))
    tempo = score.meta.get("tempo_bpm") or args.tempo
    mode = score.meta.get("mode")
    music_plan = MusicPlan(
        tempo_bpm=int(tempo),
        genre_mood=args.genre,
        instrumentation=(args.instrument,),
        mode=mode_from_name(mode) if mode else MODE_ORDER[0],
        tonic_pc=score.meta.get("tonic_pc") or 0,
        intensity=0.5,
    )
    clip = synth_mod.render(score, music_plan)
    synth_mod.write_wav(clip, args.out)
    print(f"wrote {clip.duration_s:.2f}s to {args.out}")


def _cmd_classify(args):
    with open(args.infile) as fh:
        score = melody_mod.melody_from_json(json.load(fh))
    result = classify_mode(score)
    _write_out(
        {
            "mode": result.mode.value,
            "tonic_pc": result.tonic_pc,
            "confidence": round(result.confidence, 4),
            "low_confidence": result.low_confidence,
        },
        args.out,
    )


def _parse_script(spec: str):
    phases = []
    for part in spec.split(";"):
        dur, hr, rr = part.split(",")
        phases.append(ScriptPhase(float(dur), float(hr), float(rr)))
    return tuple(phases)


def _cmd_session(args):
    config = SessionConfig(
        replan_interval_s=args.replan,
        hop_s=args.hop,
        crossfade_s=args.crossfade,
        seed=args.seed,
        source="csv" if args.infile else "script",
        script=_parse_script(args.script) if args.script else SessionConfig().script,
        csv_path=args.infile,
        clock_time=args.time,
        temperature_c=args.temp,
        user_status=args.status,
        out_dir=args.segments_dir,
    )
    events = run_session(config, args.duration)
    if args.out:
        log_append(args.out, events)
        print(f"logged {len(events)} events to {args.out}")
    else:
        for ev in events:
            print(json.dumps(ev.to_json(), sort_keys=True))


def _cmd_serve(args):
    from .server import serve

    config = SessionConfig(
        replan_interval_s=args.replan,
        hop_s=args.hop,
        seed=args.seed,
        source="live",
        clock_time=args.time,
        temperature_c=args.temp,
        user_status=args.status,
        time_scale=args.time_scale,
    )
    serve(args.bind, config)


def _cmd_eval_tonal(args):
    reports = eval_tonal(args.n, args.seed)
    print(f"{'condition':16s} {'n':>6s} {'accuracy':>9s}")
    for r in reports:
        print(f"{r.condition:16s} {r.n:6d} {r.accuracy:9.3f}")
    if args.out:
        _write_out([r.to_json() for r in reports], args.out)


def _cmd_eval_vitals(args):
    snrs = [None if s.lower() in ("clean", "inf") else float(s) for s in args.snr.split(",")]
    result = eval_vitals(snr_list=snrs, seed=args.seed)
    print(f"{'snr':>6s} {'f_r':>5s} {'f_h':>5s} {'rr_err':>7s} {'hr_err':>7s}")
    for row in result["cells"]:
        snr = "clean" if row["snr_db"] is None else f"{row['snr_db']:g}"
        print(
            f"{snr:>6s} {row['resp_freq_hz']:5.2f} {row['heart_freq_hz']:5.2f} "
            f"{row['rr_err_rpm']:7.3f} {row['hr_err_bpm']:7.3f}"
        )
    print("summary:", json.dumps(result["summary"]))
    if args.out:
        _write_out(result, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biomuse",
        description="bio-adaptive pentatonic music pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a radar phase trace CSV")
    p.add_argument("--hr", type=float, default=72.0, help="heart rate, bpm")
    p.add_argument("--rr", type=float, default=15.0, help="respiration rate, rpm")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--rate", type=float, default=100.0, help="sample rate, Hz")
    p.add_argument("--resp-amp", type=float, default=4.0)
    p.add_argument("--heart-amp", type=float, default=0.2)
    p.add_argument("--snr", type=float, default=None, help="SNR in dB (omit for clean)")
    p.add_argument("--drift", type=float, default=0.0, help="phase drift, rad/s")
    p.add_argument("--resp-harmonic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=False)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("vitals", help="estimate HR/RR from a phase trace CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--window", type=float, default=30.0)
    p.add_argument("--hop", type=float, default=5.0)
    p.add_argument("--estimator", choices=("fft", "music"), default="fft")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_vitals)

    p = sub.add_parser("plan", help="rule-plan music parameters from a state")
    p.add_argument("--hr", type=float, required=True)
    p.add_argument("--rr", type=float, required=True)
    p.add_argument("--time", default="12:00")
    p.add_argument("--temp", type=float, default=22.0)
    p.add_argument("--status", default="resting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("generate", help="generate a melody JSON from a plan")
    p.add_argument("--plan", help="plan JSON file (from the plan subcommand)")
    p.add_argument("--tempo", type=int, default=90)
    p.add_argument("--genre", choices=GENRES, default="classical")
    p.add_argument("--instrument", default="erhu", help="comma-separated tags")
    p.add_argument("--mode", default="Gong")
    p.add_argument("--tonic", type=int, default=0)
    p.add_argument("--intensity", type=float, default=0.5)
    p.add_argument("--bars", type=int, default=4)
    p.add_argument("--condition", choices=("embedded", "soft", "none"), default="embedded")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("render", help="render a melody JSON to WAV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--instrument", choices=INSTRUMENTS, default="erhu")
    p.add_argument("--genre", choices=GENRES, default="classical")
    p.add_argument("--tempo", type=int, default=90, help="fallback if JSON lacks bpm")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("classify", help="classify the mode/tonic of a melody JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("session", help="run a headless scripted session")
    p.add_argument("--duration", type=float, default=180.0)
    p.add_argument("--script", help="phases as 'dur,hr,rr;dur,hr,rr;...'")
    p.add_argument("--in", dest="infile", help="phase trace CSV instead of a script")
    p.add_argument("--replan", type=float, default=10.0)
    p.add_argument("--hop", type=float, default=5.0)
    p.add_argument("--crossfade", type=float, default=2.0)
    p.add_argument("--time", default="21:00")
    p.add_argument("--temp", type=float, default=24.0)
    p.add_argument("--status", default="resting")
    p.add_argument("--segments-dir", help="directory for segment WAV files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSONL event log path")
    p.set_defaults(func=_cmd_session)

    p = sub.add_parser("serve", help="host the WebSocket session service")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--replan", type=float, default=10.0)
    p.add_argument("--hop", type=float, default=5.0)
    p.add_argument("--time", default="21:00")
    p.add_argument("--temp", type=float, default=24.0)
    p.add_argument("--status", default="resting")
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("eval-tonal", help="tonal conditioning ablation")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_tonal)

    p = sub.add_parser("eval-vitals", help="vitals recovery error table")
    p.add_argument("--snr", default="clean,0", help="comma list: clean or dB values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval_vitals)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
