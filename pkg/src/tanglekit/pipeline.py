"""Glue for running detection, filtering, tracking and scoring on a scene."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .detect import Candidates, OracleDetectorConfig, Thresholds, default_encoder, nms_filter, oracle_detect
from .evaluate import EvalConfig, scene_integrity
from .synth import _threads
from .track import Detection, LinkConfig, build_tracks, fix_stubs

STAGES = ("simulate", "render", "detect")


def stage_seed(master: int, stage: str) -> np.random.SeedSequence:
    """Independent stream for one pipeline stage, derived from the master seed."""
    return np.random.SeedSequence(master, spawn_key=(STAGES.index(stage),))


def detect_scene(scene, oracle: OracleDetectorConfig = OracleDetectorConfig(),
                 thresholds: Thresholds = Thresholds(), seed=0, encoder=None) -> tuple[dict[int, Candidates], dict]:
    """Oracle candidates plus NMS for every frame with triplet context.

    Returns ``(accepted per frame index, counts)`` where counts holds the raw
    and accepted candidate totals.
    """
    if scene.n_frames < 3:
        raise ValueError("scene needs at least 3 frames for triplet context")
    encoder = encoder or default_encoder()
    indices = list(range(1, scene.n_frames - 1))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = dict(zip(indices, root.spawn(len(indices))))

    def one(i):
        raw = oracle_detect(scene, i, oracle, thresholds, np.random.default_rng(streams[i]), encoder)
        return len(raw), nms_filter(raw, thresholds)

    threads = min(_threads(), len(indices))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, indices))
    else:
        results = [one(i) for i in indices]
    accepted = {i: r[1] for i, r in zip(indices, results)}
    counts = {"candidates": int(sum(r[0] for r in results)),
              "accepted": int(sum(len(r[1]) for r in results))}
    return accepted, counts


def to_detections(index: int, cands: Candidates) -> list[Detection]:
    return [Detection(frame=index, triplet=cands.triplets[j], score=float(cands.scores[j]))
            for j in range(len(cands))]


def track_detections(per_frame: dict[int, list[Detection]], link: LinkConfig = LinkConfig()):
    return fix_stubs(build_tracks(per_frame, link), link)


def integrity_run(scene, oracle: OracleDetectorConfig, link: LinkConfig = LinkConfig(),
                  thresholds: Thresholds = Thresholds(), evalc: EvalConfig = EvalConfig(), seed=0,
                  accepted: dict[int, Candidates] | None = None) -> float:
    """Mean tracking integrity of the oracle pipeline on ``scene``."""
    if accepted is None:
        accepted, _ = detect_scene(scene, oracle, thresholds, seed)
    per_frame = {i: to_detections(i, c) for i, c in accepted.items()}
    tracks = track_detections(per_frame, link)
    return scene_integrity(scene, tracks, evalc)[1]
