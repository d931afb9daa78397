"""Command-line front end: simulate, render, detect, track, evaluate, benchmark.

Exit codes: 0 success, 1 runtime or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .io import (
    FormatError,
    RunConfig,
    detections_from_dict,
    detections_to_dict,
    dump_json,
    load_config,
    load_json,
    scene_from_dict,
    scene_to_dict,
    tracks_from_dict,
    tracks_to_dict,
    write_text,
)


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("frame size must be positive")
    return h, w


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _pos_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg


def _read(path, parse, what: str):
    if not Path(path).is_file():
        raise CliError(f"{what} file not found: {path}")
    try:
        return parse(load_json(path))
    except FormatError as exc:
        raise CliError(f"{what}: {exc}") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"{what}: invalid content in {path}: {exc}") from exc


def _emit(out, payload: dict) -> None:
    if out:
        write_text(out, dump_json(payload))


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    from .pipeline import stage_seed
    from .wormsim import count_overlaps, populate_scene

    cfg = _config(args)
    scene = populate_scene(args.density, args.size, args.frames, args.dt, stage_seed(cfg.seed, "simulate"), cfg.sim)
    text = dump_json(scene_to_dict(scene))
    write_text(args.out, text)
    overlaps = float(np.mean([count_overlaps(scene, i) for i in range(scene.n_frames)])) if scene.worms else 0.0
    print(f"worms: {len(scene.worms)}")
    print(f"mean overlaps per worm: {overlaps:.4f}")
    return 0


def cmd_render(args) -> int:
    from .pipeline import stage_seed
    from .synth import frame_name, render_clip, write_pgm

    cfg = _config(args)
    scene = _read(args.scene, scene_from_dict, "scene")
    if scene.n_frames == 0:
        raise CliError("scene has no frames to render")
    frames = render_clip(scene, cfg.render, cfg.noise, stage_seed(cfg.seed, "render"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_pgm(out / frame_name(i), f)
    print(f"frames: {len(frames)} written to {out}")
    return 0


def cmd_detect(args) -> int:
    from dataclasses import replace

    from .pipeline import detect_scene, stage_seed

    cfg = _config(args)
    th = cfg.thresholds
    if args.tau_s is not None:
        th = replace(th, tau_s=args.tau_s)
    if args.tau_o is not None:
        th = replace(th, tau_o=args.tau_o)
    scene = _read(args.scene, scene_from_dict, "scene")
    if scene.n_frames < 3:
        raise CliError(f"scene has {scene.n_frames} frames; detection needs at least 3")
    accepted, counts = detect_scene(scene, cfg.oracle, th, stage_seed(cfg.seed, "detect"))
    write_text(args.out, dump_json(detections_to_dict(accepted)))
    print(f"frames: {len(accepted)}  candidates: {counts['candidates']}  accepted: {counts['accepted']}")
    return 0


def cmd_track(args) -> int:
    from .pipeline import track_detections

    cfg = _config(args)
    per_frame = _read(args.detections, detections_from_dict, "detections")
    tracks = track_detections(per_frame, cfg.link)
    write_text(args.out, dump_json(tracks_to_dict(tracks)))
    mean_len = float(np.mean([len(t) for t in tracks])) if tracks else 0.0
    print(f"tracks: {len(tracks)}  mean length: {mean_len:.2f}")
    return 0


def _curves(path, what: str) -> list[np.ndarray]:
    """Point lists from a JSON file: a list of curves or ``{"curves": [...]}``."""
    def parse(d):
        items = d.get("curves") if isinstance(d, dict) else d
        if not isinstance(items, list):
            raise FormatError("expected a list of curves or an object with 'curves'")
        out = []
        for i, c in enumerate(items):
            a = np.asarray(c, dtype=np.float64)
            if a.ndim != 2 or a.shape[1] != 2 or len(a) < 1 or not np.all(np.isfinite(a)):
                raise FormatError(f"curve {i}: expected a non-empty list of [x, y] points")
            out.append(a)
        return out
    return _read(path, parse, what)


def cmd_evaluate(args) -> int:
    from .evaluate import adtw, match_tp_fn, scene_integrity, tracking_integrity

    cfg = _config(args)
    if args.metric == "integrity":
        if args.series is not None:
            series = _read(args.series, lambda d: d["series"] if isinstance(d, dict) else d, "series")
            if not isinstance(series, list) or not series:
                raise CliError("series: expected a non-empty list of identities")
            report = {"integrity": tracking_integrity(series), "n": len(series)}
        else:
            if not (args.scene and args.tracks):
                raise CliError("integrity needs --series, or both --scene and --tracks")
            scene = _read(args.scene, scene_from_dict, "scene")
            tracks = _read(args.tracks, tracks_from_dict, "tracks")
            bad = [t.id for t in tracks if t.frames and (t.frames[0] < 0 or t.frames[-1] >= scene.n_frames)]
            if bad:
                raise CliError(f"tracks {bad[:5]} reference frames outside the scene")
            per, mean = scene_integrity(scene, tracks, cfg.eval)
            report = {"integrity": {str(k): v for k, v in per.items()}, "mean_integrity": mean}
    else:
        labels = _curves(args.labels, "labels")
        preds = _curves(args.predictions, "predictions")
        if any(len(p) < 2 for p in preds):
            raise CliError("predictions need at least 2 points each")
        if args.metric == "adtw":
            if len(labels) != len(preds):
                raise CliError(f"adtw pairs labels with predictions: {len(labels)} vs {len(preds)}")
            vals = [adtw(a, b) for a, b in zip(labels, preds)]
            report = {"delta_adtw": vals, "mean_delta_adtw": float(np.mean(vals)) if vals else None}
        else:
            report = match_tp_fn(labels, preds, cfg.eval).to_dict()
    report["metric"] = args.metric
    _emit(args.out, report)
    print(f"report written to {args.out}" if args.out else json.dumps(report, indent=2))
    return 0


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    report = bench.run(args.target, args.n, args.repeat, cfg.seed)
    for name, r in report["backends"].items():
        print(f"{args.target} n={report['n']} [{name}] median {r['median_s'] * 1e3:.4f} ms  "
              f"stdev {r['stdev_s'] * 1e3:.4f} ms  throughput {r['throughput_per_s']:.1f}/s")
    if "speedup" in report:
        print(f"compiled speedup: {report['speedup']:.1f}x")
    if "budget_s" in report:
        verdict = "within" if report["within_budget"] else "OVER"
        print(f"budget {report['budget_s'] * 1e3:.3f} ms: {verdict}")
    _emit(args.out, report)
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tanglekit", description="Synthetic worm tracking toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=_nonneg_int, help="master seed (overrides the config)")
        sp.add_argument("--out", required=out_required)

    s = sub.add_parser("simulate", help="simulate a scene")
    s.add_argument("--density", type=_nonneg_float, required=True, help="worms per mm^2")
    s.add_argument("--size", type=_size, default=(256, 256), help="HxW pixels")
    s.add_argument("--frames", type=_pos_int, default=200)
    s.add_argument("--dt", type=_pos_float, default=0.05, help="seconds per frame")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("render", help="render a scene to PGM frames")
    s.add_argument("--scene", required=True)
    common(s)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("detect", help="oracle detection plus non-max suppression")
    s.add_argument("--scene", required=True)
    s.add_argument("--mode", choices=["oracle"], default="oracle")
    s.add_argument("--tau-s", type=_unit, dest="tau_s")
    s.add_argument("--tau-o", type=_unit, dest="tau_o")
    common(s)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("track", help="link detections into tracks")
    s.add_argument("--detections", required=True)
    common(s)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("evaluate", help="accuracy and integrity metrics")
    s.add_argument("metric", choices=["adtw", "integrity", "tpfn"])
    s.add_argument("--labels")
    s.add_argument("--predictions")
    s.add_argument("--scene")
    s.add_argument("--tracks")
    s.add_argument("--series", help="JSON list of identities")
    common(s, out_required=False)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("benchmark", help="time the hot paths")
    s.add_argument("target", choices=list(bench.TARGETS))
    s.add_argument("--n", type=_nonneg_int)
    s.add_argument("--repeat", type=_pos_int, default=5)
    common(s, out_required=False)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command == "evaluate" and args.metric in ("adtw", "tpfn") and not (args.labels and args.predictions):
        parser.print_usage(sys.stderr)
        print(f"tanglekit evaluate {args.metric}: --labels and --predictions are required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
