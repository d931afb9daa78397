"""Simulation, latent-space filtering, tracking and metrics for dense overlapping slender bodies."""

from ._kernels import BACKEND
from .detect import OracleDetectorConfig, Thresholds, nms_filter, oracle_detect
from .evaluate import EvalConfig, adtw, match_tp_fn, scene_integrity, tracking_integrity
from .splines import fit_pca, flip_distance_sq, flip_eigenvalues, resample_equidistant
from .synth import NoiseConfig, RenderConfig, render_clip
from .track import Detection, LinkConfig, Track, build_tracks, fix_stubs, link_frames
from .wormsim import Scene, SimConfig, WormParams, populate_scene, rft_velocities, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Detection", "EvalConfig", "LinkConfig", "NoiseConfig", "OracleDetectorConfig", "RenderConfig",
    "Scene", "SimConfig", "Thresholds", "Track", "WormParams", "adtw", "build_tracks", "fit_pca",
    "fix_stubs", "flip_distance_sq", "flip_eigenvalues", "link_frames", "match_tp_fn", "nms_filter",
    "oracle_detect", "populate_scene", "render_clip", "resample_equidistant", "rft_velocities",
    "scene_integrity", "simulate", "tracking_integrity",
]
