"""Micro-benchmarks for the hot paths, timing each kernel backend."""

from __future__ import annotations

import statistics
import time

import numpy as np

from . import _kernels

TARGETS = ("nms", "lap", "render", "adtw")
DEFAULT_N = {"nms": 10000, "lap": 500, "render": 200, "adtw": 20}
# engineering budgets in seconds for the default sizes
BUDGETS = {"nms": 0.1, "lap": 0.2, "render": 0.1, "adtw": 50e-6}


def _nms_case(n: int, rng: np.random.Generator):
    from .detect import Thresholds

    n_obj = max(1, n // 8)
    centres = rng.uniform(0.0, 512.0, size=(n_obj, 2))
    codes = rng.normal(0.0, 3.0, size=(n_obj, 8))
    owner = rng.integers(0, n_obj, size=n)
    offsets = np.ascontiguousarray(centres[owner] + rng.normal(0.0, 0.5, size=(n, 2)))
    latents = np.ascontiguousarray(codes[owner] + rng.normal(0.0, 0.1, size=(n, 8)))
    scores = rng.uniform(0.0, 1.0, size=n)
    return scores, offsets, latents, Thresholds()


def _render_case(n: int, rng: np.random.Generator):
    from .detect import simulator_shapes
    from .synth import RenderConfig, radius_profile

    shapes = simulator_shapes(n, seed=int(rng.integers(2**31))) if n else np.zeros((0, 49, 2))
    sp = np.ascontiguousarray(shapes + rng.uniform(0.0, 512.0, size=(n, 1, 2)))
    k = sp.shape[1]
    radii = np.ascontiguousarray(np.broadcast_to(radius_profile(np.linspace(0, 1, k), RenderConfig()), (n, k)))
    return sp, radii


def _lap_case(n: int, rng: np.random.Generator):
    from .detect import simulator_shapes
    from .track import Detection

    side = max(64.0, np.sqrt(n) * 40.0)
    shapes = simulator_shapes(max(n, 1), seed=int(rng.integers(2**31)))[:n]
    pos = rng.uniform(0.0, side, size=(n, 1, 2))
    frames = []
    for shift in (0.0, 1.0):
        trips = np.stack([shapes + pos + (shift + d) * np.array([1.0, 0.0]) for d in (-1.0, 0.0, 1.0)], axis=1)
        trips = trips + rng.normal(0.0, 0.3, size=trips.shape)
        frames.append([Detection(frame=int(shift), triplet=t) for t in trips])
    perm = rng.permutation(n)
    return frames[0], [frames[1][i] for i in perm]


def _adtw_case(n: int, rng: np.random.Generator):
    m = 49
    pred = np.ascontiguousarray(np.cumsum(rng.normal(0.0, 1.0, size=(m, 2)), axis=0))
    label = np.ascontiguousarray(pred[rng.integers(0, m, size=max(n, 1))] + rng.normal(0.0, 0.5, size=(max(n, 1), 2)))
    return label, pred


def _time(fn, repeat: int) -> list[float]:
    fn()  # warm-up
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def workload(target: str, n: int, kernels, seed: int = 0):
    """Zero-argument callable running ``target`` once on size ``n`` with ``kernels``."""
    rng = np.random.default_rng(seed)
    if target == "nms":
        scores, offsets, latents, th = _nms_case(n, rng)

        def go():
            # same steps as detect.nms_filter: threshold, stable sort, suppress
            keep = np.flatnonzero(scores >= th.tau_s)
            order = np.ascontiguousarray(keep[np.argsort(-scores[keep], kind="stable")], dtype=np.int64)
            return kernels.nms(order, offsets, latents, th.sigma_l, th.tau_o)
        return go
    if target == "render":
        sp, radii = _render_case(n, rng)
        return lambda: kernels.rasterize_coverage(np.zeros((512, 512)), sp, radii, 4)
    if target == "adtw":
        label, pred = _adtw_case(n, rng)
        return lambda: kernels.adtw(label, pred)
    if target == "lap":
        from .track import LinkConfig, link_frames

        a, b = _lap_case(n, rng)
        return lambda: link_frames(a, b, LinkConfig())
    raise ValueError(f"unknown benchmark target {target!r}")


def run(target: str, n: int | None = None, repeat: int = 5, seed: int = 0) -> dict:
    """Median wall time per backend; the LAP path has no compiled kernel."""
    if target not in TARGETS:
        raise ValueError(f"unknown benchmark target {target!r}")
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    n = DEFAULT_N[target] if n is None else n
    if n < 0:
        raise ValueError("n must be non-negative")
    backends = {"pure": _kernels.pure}
    if _kernels.compiled is not None:
        backends["compiled"] = _kernels.compiled
    if target == "lap":
        backends = {_kernels.BACKEND: _kernels}
    results = {}
    for name, mod in backends.items():
        times = _time(workload(target, n, mod, seed), repeat)
        med = statistics.median(times)
        results[name] = {
            "median_s": med,
            "min_s": min(times),
            "stdev_s": statistics.stdev(times) if len(times) > 1 else 0.0,
            "throughput_per_s": (n / med) if med > 0 else float("inf"),
            "times_s": times,
        }
    active = results.get(_kernels.BACKEND, next(iter(results.values())))
    report = {"target": target, "n": n, "repeat": repeat, "active_backend": _kernels.BACKEND,
              "backends": results, "median_s": active["median_s"]}
    if n == DEFAULT_N[target]:
        report["budget_s"] = BUDGETS[target]
        report["within_budget"] = active["median_s"] < BUDGETS[target]
    if "pure" in results and "compiled" in results and results["compiled"]["median_s"] > 0:
        report["speedup"] = results["pure"]["median_s"] / results["compiled"]["median_s"]
    return report
