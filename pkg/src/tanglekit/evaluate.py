"""Accuracy and tracking metrics.

``adtw`` is the asymmetric dynamic-time-warped distance from label points to
prediction segments; it is not symmetric in its arguments.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .splines import flip_distance_sq_many

@dataclass(frozen=True)
class EvalConfig:
    sigma_eps: float = 3.0
    # matching cost cap in px (None: sigma_eps); pairs above it are never
    # matched. A larger cap lets a label with no nearby prediction pull a good
    # prediction away from its own label.
    sentinel: float | None = None

    def __post_init__(self):
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be positive")
        if self.sentinel is not None and not self.sentinel >= self.sigma_eps:
            raise ValueError("sentinel must be >= sigma_eps")

    @property
    def cap(self) -> float:
        return self.sigma_eps if self.sentinel is None else float(self.sentinel)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        unknown = set(d) - {"sigma_eps", "sentinel"}
        if unknown:
            raise ValueError(f"unknown EvalConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EvalReport:
    delta: list[float] = field(default_factory=list)  # per matched pair
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (label, prediction)
    tp_rate: float = 1.0
    fn_rate: float = 0.0
    n_labels: int = 0
    n_predictions: int = 0
    n_tp: int = 0
    n_fn: int = 0
    zero_predictions: bool = False
    zero_labels: bool = False

    def to_dict(self) -> dict:
        return {
            "delta_adtw": [float(d) for d in self.delta],
            "pairs": [list(p) for p in self.pairs],
            "mean_delta_adtw": float(np.mean(self.delta)) if self.delta else None,
            "tp_rate": self.tp_rate,
            "fn_rate": self.fn_rate,
            "n_labels": self.n_labels,
            "n_predictions": self.n_predictions,
            "n_tp": self.n_tp,
            "n_fn": self.n_fn,
            "zero_predictions": self.zero_predictions,
            "zero_labels": self.zero_labels,
        }


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    d = b - a
    den = d @ d
    t = 0.0 if den == 0.0 else min(max((p - a) @ d / den, 0.0), 1.0)
    return float(np.hypot(*(a + t * d - p)))


def adtw(label, prediction) -> float:
    """Mean label-point distance under the best monotone assignment to segments.

    Both orientations of the prediction are tried (non-decreasing and
    non-increasing assignment); the smaller value is returned.
    """
    label = np.ascontiguousarray(label, dtype=np.float64).reshape(-1, 2)
    pred = np.ascontiguousarray(prediction, dtype=np.float64).reshape(-1, 2)
    if label.shape[0] < 1 or pred.shape[0] < 2:
        raise ValueError("adtw needs at least one label point and a prediction with >= 2 points")
    return float(_kernels.adtw(label, pred))


def adtw_matrix(labels, predictions) -> np.ndarray:
    out = np.empty((len(labels), len(predictions)))
    for i, lab in enumerate(labels):
        for j, pred in enumerate(predictions):
            out[i, j] = adtw(lab, pred)
    return out


def match_tp_fn(labels, predictions, config: EvalConfig = EvalConfig(), cost=None) -> EvalReport:
    """One-to-one label/prediction matching minimising total adtw.

    Costs are capped at ``config.cap`` and pairs above the cap are dropped.
    ``cost`` may hold a precomputed ``adtw_matrix(labels, predictions)``.

    TP rate: matched predictions within ``sigma_eps`` over all predictions.
    FN rate: labels without a match within ``sigma_eps`` over all labels.
    Zero denominators report rate 1 (TP) or 0 (FN) and set a flag.
    """
    labels = list(labels)
    predictions = list(predictions)
    rep = EvalReport(n_labels=len(labels), n_predictions=len(predictions))
    rep.zero_predictions = not predictions
    rep.zero_labels = not labels
    if labels and predictions:
        cost = adtw_matrix(labels, predictions) if cost is None else np.asarray(cost, dtype=np.float64)
        if cost.shape != (len(labels), len(predictions)):
            raise ValueError("cost matrix shape does not match labels x predictions")
        rows, cols = linear_sum_assignment(np.minimum(cost, config.cap))
        keep = cost[rows, cols] <= config.cap
        rep.pairs = [(int(r), int(c)) for r, c in zip(rows[keep], cols[keep])]
        rep.delta = [float(cost[r, c]) for r, c in rep.pairs]
    good = sum(d <= config.sigma_eps for d in rep.delta)
    rep.n_tp = good
    rep.n_fn = len(labels) - good
    rep.tp_rate = good / len(predictions) if predictions else 1.0
    rep.fn_rate = rep.n_fn / len(labels) if labels else 0.0
    return rep


def tracking_integrity(identities) -> float:
    """Probability that two random time points carry the same identity."""
    ids = list(identities)
    if not ids:
        raise ValueError("identity series must be non-empty")
    counts = np.fromiter(Counter(ids).values(), dtype=np.float64)
    return float(np.sum(counts**2) / len(ids) ** 2)


def identity_series(scene, tracks, config: EvalConfig = EvalConfig(), frames=None) -> dict[int, list]:
    """Per ground-truth worm, the track id matched at each frame where it is visible.

    A frame matches the track entry whose present spline is closest in flip
    distance, if its RMS point distance is within ``sigma_eps``. Unmatched
    frames get a fresh negative sentinel so they never agree with anything.
    """
    from .detect import visible_mask

    by_frame: dict[int, tuple[list[int], list[np.ndarray]]] = {}
    for tr in tracks:
        for f, det in zip(tr.frames, tr.detections):
            ids, spl = by_frame.setdefault(f, ([], []))
            ids.append(tr.id)
            spl.append(det.present)
    if frames is None:
        # every frame with triplet context
        frames = range(1, scene.n_frames - 1)
    sentinel = -1
    series: dict[int, list] = {w.id: [] for w in scene.worms}
    if not scene.worms:
        return series
    k = scene.worms[0].splines.shape[1]
    for f in frames:
        truth = scene.frame_splines(f)
        vis = visible_mask(truth, scene.size)
        ids, spl = by_frame.get(f, ([], []))
        if spl:
            d2 = flip_distance_sq_many(truth[:, None], np.stack(spl)[None])
            best = d2.argmin(axis=1)
            ok = np.sqrt(d2[np.arange(len(truth)), best] / k) <= config.sigma_eps
        for i, w in enumerate(scene.worms):
            if not vis[i]:
                continue
            if spl and ok[i]:
                series[w.id].append(ids[best[i]])
            else:
                series[w.id].append(sentinel)
                sentinel -= 1
    return series


def scene_integrity(scene, tracks, config: EvalConfig = EvalConfig(), frames=None) -> tuple[dict[int, float], float]:
    """Per-worm integrity and its mean over worms visible at least once."""
    series = identity_series(scene, tracks, config, frames)
    per = {wid: tracking_integrity(s) for wid, s in series.items() if s}
    mean = float(np.mean(list(per.values()))) if per else 1.0
    return per, mean
