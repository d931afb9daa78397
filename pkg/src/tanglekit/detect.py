"""Candidate scoring, latent same-object probability, latent-space NMS,
loss evaluables and a synthetic oracle detector.

Candidates are kept as a structure of arrays (:class:`Candidates`) because
detectors emit thousands per frame; :class:`Candidate` is the single-item view.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, fields

import numpy as np

from . import _kernels
from .splines import (
    K_DEFAULT,
    KAPPA_DEFAULT,
    PcaBasis,
    ShapeDescriptor,
    encode_many,
    fit_pca,
    flip_eigenvalues,
    triplet_distance_sq,
    triplet_distance_sq_many,
)

LATENT_DIM = 8
PROB_EPS = 1e-7


@dataclass(frozen=True)
class Thresholds:
    tau_s: float = 0.5
    tau_o: float = 0.5
    sigma_l: float = 48.0
    sigma_s: float = 5.0

    def __post_init__(self):
        if not (0 < self.tau_s < 1 and 0 < self.tau_o < 1):
            raise ValueError("tau_s and tau_o must lie in (0, 1)")
        if self.sigma_l <= 0 or self.sigma_s <= 0:
            raise ValueError("sigma_l and sigma_s must be positive")

    @property
    def r_l(self) -> float:
        """Latent exclusion radius equivalent to the ``tau_o`` probability test."""
        return float(np.sqrt(-np.log(self.tau_o)))

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        return cls(**_checked(cls, d))


@dataclass(frozen=True)
class OracleDetectorConfig:
    """Knobs of the synthetic detector standing in for a trained network.

    Each candidate gets its own noise scale ``sigma_pert * e`` with
    ``e ~ Exp(1)`` when ``quality_spread`` is on, so a few candidates per body
    are much better than average, as with a trained multi-candidate head.
    """

    candidates_per_worm: int = 8
    sigma_pert: float = 0.3
    quality_spread: bool = True
    score_noise: float = 0.02
    latent_spread: float = 0.25
    miss_prob: float = 0.0
    spurious_rate: float = 0.0
    spurious_score_max: float = 0.4
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.candidates_per_worm < 1:
            raise ValueError("candidates_per_worm must be >= 1")
        if min(self.sigma_pert, self.score_noise, self.latent_spread, self.spurious_rate) < 0:
            raise ValueError("noise levels and rates must be non-negative")
        for name in ("miss_prob", "flip_prob", "spurious_score_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "OracleDetectorConfig":
        return cls(**_checked(cls, d))


def _checked(cls, d: dict) -> dict:
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class Candidate:
    triplet: np.ndarray  # (3, k, 2)
    descriptors: tuple[ShapeDescriptor, ShapeDescriptor, ShapeDescriptor]
    score: float
    latent: np.ndarray

    @property
    def offset(self) -> np.ndarray:
        return self.descriptors[1].offset


@dataclass
class Candidates:
    """Structure of arrays for ``n`` candidates.

    ``eigenvalues`` is ``(n, 3, kappa)``, ``offsets`` ``(n, 3, 2)`` (past,
    present, future centroids).
    """

    triplets: np.ndarray
    eigenvalues: np.ndarray
    offsets: np.ndarray
    scores: np.ndarray
    latents: np.ndarray
    labels: np.ndarray | None = None  # generating worm index, -1 for spurious

    def __len__(self) -> int:
        return self.scores.shape[0]

    def __getitem__(self, idx) -> "Candidates | Candidate":
        if isinstance(idx, (int, np.integer)):
            desc = tuple(ShapeDescriptor(self.eigenvalues[idx, i], self.offsets[idx, i]) for i in range(3))
            return Candidate(self.triplets[idx], desc, float(self.scores[idx]), self.latents[idx])
        idx = np.asarray(idx)
        return Candidates(self.triplets[idx], self.eigenvalues[idx], self.offsets[idx], self.scores[idx],
                          self.latents[idx], None if self.labels is None else self.labels[idx])

    @property
    def present_offsets(self) -> np.ndarray:
        return self.offsets[:, 1]

    @classmethod
    def empty(cls, k: int = K_DEFAULT, kappa: int = KAPPA_DEFAULT, dim: int = LATENT_DIM) -> "Candidates":
        return cls(np.zeros((0, 3, k, 2)), np.zeros((0, 3, kappa)), np.zeros((0, 3, 2)),
                   np.zeros(0), np.zeros((0, dim)), np.zeros(0, dtype=int))

    @classmethod
    def from_list(cls, items: list[Candidate]) -> "Candidates":
        if not items:
            return cls.empty()
        return cls(
            triplets=np.stack([c.triplet for c in items]),
            eigenvalues=np.stack([[d.eigenvalues for d in c.descriptors] for c in items]),
            offsets=np.stack([[d.offset for d in c.descriptors] for c in items]),
            scores=np.array([c.score for c in items], dtype=np.float64),
            latents=np.stack([c.latent for c in items]),
        )

    @classmethod
    def concat(cls, parts: list["Candidates"]) -> "Candidates":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("triplets", "eigenvalues", "offsets", "scores", "latents")), labels=labels)


# ------------------------------------------------------------------ metrics

def true_score(z, z_label, sigma_s: float) -> float:
    if sigma_s <= 0:
        raise ValueError("sigma_s must be positive")
    return float(np.exp(-triplet_distance_sq(z, z_label) / sigma_s**2))


def same_object_probability(ci: Candidate, cj: Candidate, sigma_l: float) -> float:
    if np.linalg.norm(ci.offset - cj.offset) > sigma_l:
        return 0.0
    d = np.asarray(ci.latent) - np.asarray(cj.latent)
    return float(np.exp(-np.dot(d, d)))


def probability_matrix(latents: np.ndarray, offsets: np.ndarray, sigma_l: float) -> np.ndarray:
    """Pairwise same-object probabilities for ``n`` candidates (present offsets)."""
    dp = latents[:, None, :] - latents[None, :, :]
    dx = offsets[:, None, :] - offsets[None, :, :]
    near = np.sqrt(np.einsum("ijk,ijk->ij", dx, dx)) <= sigma_l
    return np.where(near, np.exp(-np.einsum("ijk,ijk->ij", dp, dp)), 0.0)


# ------------------------------------------------------------ latent stand-in

class LatentEncoder:
    """Deterministic flip-invariant embedding of candidate descriptors.

    Features are the three eigenvalue vectors, the present centroid and the
    past/future centroid displacements. With ``f`` and its flipped version
    ``f'``, the embedding is ``scale * [Ws (f + f')/2 ; |Wa (f - f')/2|]``:
    the first block is linear in the symmetric part, the second keeps the
    antisymmetric part up to sign, so head-tail reversal leaves it unchanged.
    """

    def __init__(self, basis: PcaBasis, seed: int = 0, dim: int = LATENT_DIM,
                 scale: float = 0.3, offset_weight: float = 5.0):
        if dim < 2:
            raise ValueError("latent dimension must be >= 2")
        self.basis = basis
        self.dim = dim
        self.scale = scale
        kappa = basis.kappa
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A7E47]))
        n_sym = (dim + 1) // 2
        n_feat = 3 * kappa + 6
        self.weights = np.ones(n_feat)
        self.weights[3 * kappa:] = offset_weight
        self.w_sym = rng.normal(0.0, 1.0 / np.sqrt(n_feat), size=(n_sym, n_feat))
        self.w_anti = rng.normal(0.0, 1.0 / np.sqrt(3 * kappa), size=(dim - n_sym, 3 * kappa))
        self.bias = rng.normal(0.0, 1.0, size=dim)

    def features(self, eigenvalues: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lam = np.asarray(eigenvalues, dtype=np.float64)
        off = np.asarray(offsets, dtype=np.float64)
        lam_f = flip_eigenvalues(lam, self.basis)
        lead = lam.shape[:-2]
        rel = np.concatenate([off[..., 1, :], off[..., 0, :] - off[..., 1, :], off[..., 2, :] - off[..., 1, :]], axis=-1)
        sym = np.concatenate([(lam + lam_f).reshape(*lead, -1) / 2.0, rel], axis=-1)
        anti = (lam - lam_f).reshape(*lead, -1) / 2.0
        return sym * self.weights, anti

    def __call__(self, eigenvalues, offsets) -> np.ndarray:
        sym, anti = self.features(eigenvalues, offsets)
        p = np.concatenate([sym @ self.w_sym.T, np.abs(anti @ self.w_anti.T)], axis=-1)
        return self.scale * p + self.bias


@functools.lru_cache(maxsize=8)
def default_basis(k: int = K_DEFAULT, kappa: int = KAPPA_DEFAULT, n_shapes: int = 5000, seed: int = 0) -> PcaBasis:
    """PCA basis fit on simulator shapes and their reversals.

    Including the reversed shapes makes the basis span closed under point
    reversal, so :func:`flip_eigenvalues` is an exact involution on it.
    """
    shapes = simulator_shapes(n_shapes, k=k, seed=seed)
    return fit_pca(np.concatenate([shapes, shapes[:, ::-1]]), kappa)


def simulator_shapes(n: int, k: int = K_DEFAULT, seed: int = 0, config=None) -> np.ndarray:
    """``n`` centred simulator shapes at random times and orientations."""
    from .wormsim import SimConfig, _as_columns, _shapes, sample_params

    config = config or SimConfig(k=k)
    rng = np.random.default_rng(seed)
    params = [sample_params(rng, config) for _ in range(n)]
    t = rng.uniform(0.0, 10.0, n)
    gamma = rng.uniform(0.0, 2.0 * np.pi, n)
    x = _shapes(_as_columns(params), t, gamma, k)
    return x - x.mean(axis=1, keepdims=True)


@functools.lru_cache(maxsize=8)
def default_encoder(seed: int = 0, k: int = K_DEFAULT, kappa: int = KAPPA_DEFAULT) -> LatentEncoder:
    return LatentEncoder(default_basis(k, kappa), seed=seed)


def latent_encode_standin(descriptors, basis: PcaBasis, seed: int = 0) -> np.ndarray:
    """Latent vector for three ShapeDescriptors (past, present, future)."""
    enc = _encoder_for(basis, seed)
    lam = np.stack([d.eigenvalues for d in descriptors])
    off = np.stack([d.offset for d in descriptors])
    return enc(lam, off)


_ENCODERS: dict = {}


def _encoder_for(basis: PcaBasis, seed: int) -> LatentEncoder:
    key = (id(basis), seed)
    enc = _ENCODERS.get(key)
    if enc is None or enc.basis is not basis:
        enc = _ENCODERS[key] = LatentEncoder(basis, seed=seed)
    return enc


# ---------------------------------------------------------------------- NMS

def nms_filter(candidates: Candidates | list[Candidate], thresholds: Thresholds = Thresholds()):
    """Latent-space non-max suppression.

    Drops candidates scoring below ``tau_s``, then repeatedly accepts the best
    remaining one and removes every candidate it claims with probability above
    ``tau_o``. Ties in score keep input order. Returns the accepted candidates
    in acceptance order, in the same container type as the input.
    """
    as_list = isinstance(candidates, list)
    cands = Candidates.from_list(candidates) if as_list else candidates
    if len(cands) == 0:
        return [] if as_list else cands
    keep = np.flatnonzero(cands.scores >= thresholds.tau_s)
    order = keep[np.argsort(-cands.scores[keep], kind="stable")]
    accepted = _kernels.nms(np.ascontiguousarray(order, dtype=np.int64),
                            np.ascontiguousarray(cands.present_offsets),
                            np.ascontiguousarray(cands.latents), thresholds.sigma_l, thresholds.tau_o)
    if as_list:
        return [candidates[i] for i in accepted]
    return cands[accepted]


# ------------------------------------------------------------------- losses

def loss_splines(predictions, labels, visible_mask=None) -> float:
    """Mean over visible labels of the best prediction's triplet distance."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] == 0:
        return 0.0
    mask = np.ones(len(labels), bool) if visible_mask is None else np.asarray(visible_mask, bool)
    if not mask.any():
        return 0.0
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape[0] == 0:
        raise ValueError("no predictions for visible labels")
    d = triplet_distance_sq_many(predictions[:, None], labels[None, mask])
    return float(d.min(axis=0).mean())


def target_scores(predictions, labels, sigma_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Score each prediction should have and the index of its nearest label."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] == 0:
        return np.zeros(len(predictions)), np.full(len(predictions), -1)
    d = triplet_distance_sq_many(predictions[:, None], labels[None])
    nearest = d.argmin(axis=1)
    return np.exp(-d[np.arange(len(predictions)), nearest] / sigma_s**2), nearest


def loss_score(predicted_scores, predictions, labels, sigma_s: float) -> float:
    s = np.asarray(predicted_scores, dtype=np.float64)
    if len(s) != len(predictions):
        raise ValueError("scores and predictions are not aligned")
    if len(s) == 0:
        return 0.0
    target, _ = target_scores(predictions, labels, sigma_s)
    return float(np.mean((target - s) ** 2))


def loss_latent(candidates: Candidates, labels, sigma_s: float, sigma_l: float) -> float:
    """Score-weighted binary cross-entropy on pairwise same-object probabilities.

    Returned as a negative log-likelihood (non-negative). Pairs are unordered
    ``i < j`` with present offsets within ``sigma_l``.
    """
    n = len(candidates)
    if n < 2:
        return 0.0
    s_hat, nearest = target_scores(candidates.triplets, labels, sigma_s)
    iu, ju = np.triu_indices(n, 1)
    off = candidates.present_offsets
    near = np.linalg.norm(off[iu] - off[ju], axis=1) <= sigma_l
    iu, ju = iu[near], ju[near]
    if iu.size == 0:
        return 0.0
    dp = candidates.latents[iu] - candidates.latents[ju]
    p = np.clip(np.exp(-np.einsum("ij,ij->i", dp, dp)), PROB_EPS, 1.0 - PROB_EPS)
    t = (nearest[iu] == nearest[ju]).astype(np.float64)
    w = s_hat[iu] * s_hat[ju]
    total = w.sum()
    if total <= 0:
        return 0.0
    return float(-(w * (t * np.log(p) + (1.0 - t) * np.log(1.0 - p))).sum() / total)


# ---------------------------------------------------------- oracle detector

def visible_mask(splines: np.ndarray, frame_size: tuple[int, int], mode: str = "any") -> np.ndarray:
    """Bodies inside the frame.

    ``mode="any"`` needs at least one spline point inside the frame,
    ``mode="mid"`` needs the midpoint inside.
    """
    h, w = frame_size
    if len(splines) == 0:
        return np.zeros(0, dtype=bool)
    pts = splines[:, splines.shape[1] // 2 : splines.shape[1] // 2 + 1] if mode == "mid" else splines
    inside = (pts[..., 0] >= -0.5) & (pts[..., 0] < w - 0.5) & (pts[..., 1] >= -0.5) & (pts[..., 1] < h - 0.5)
    return inside.any(axis=1)


def oracle_detect(scene, index: int, config: OracleDetectorConfig = OracleDetectorConfig(),
                  thresholds: Thresholds = Thresholds(), rng: np.random.Generator | None = None,
                  encoder: LatentEncoder | None = None) -> Candidates:
    """Perturbed copies of the true triplets of every visible worm at ``index``."""
    if index < 1 or index > scene.n_frames - 2:
        raise ValueError(f"frame {index} needs a previous and a next frame")
    rng = rng if rng is not None else np.random.default_rng()
    encoder = encoder or default_encoder()
    k = encoder.basis.k
    parts = []
    if scene.worms:
        truth = np.stack([w.splines[index - 1:index + 2] for w in scene.worms])  # (n, 3, k, 2)
        vis = np.flatnonzero(visible_mask(truth[:, 1], scene.size))
        kept = vis[rng.random(vis.size) >= config.miss_prob] if vis.size else vis
        if kept.size:
            parts.append(_perturbed(truth[kept], kept, config, thresholds, rng, encoder))
        n_spur = rng.poisson(config.spurious_rate * vis.size) if config.spurious_rate > 0 else 0
        if n_spur:
            parts.append(_spurious(n_spur, scene.size, k, config, rng, encoder))
    out = Candidates.concat(parts)
    return out if len(out) else Candidates.empty(k, encoder.basis.kappa, encoder.dim)


def _perturbed(truth, ids, config, thresholds, rng, encoder) -> Candidates:
    n, c = truth.shape[0], config.candidates_per_worm
    label = np.repeat(truth, c, axis=0)
    scale = np.full(n * c, config.sigma_pert)
    if config.quality_spread:
        scale = scale * rng.exponential(1.0, size=n * c)
    trip = label + rng.normal(size=label.shape) * scale[:, None, None, None]
    flip = rng.random(n * c) < config.flip_prob
    trip[flip] = trip[flip][:, :, ::-1]
    s_true = np.exp(-triplet_distance_sq_many(trip, label) / thresholds.sigma_s**2)
    scores = np.clip(s_true + rng.normal(0.0, config.score_noise, n * c), 0.0, 1.0) if config.score_noise else s_true
    lam, off = encode_many(trip, encoder.basis)
    lat = encoder(lam, off)
    if config.latent_spread:
        lat = lat + rng.normal(size=lat.shape) * (config.latent_spread * (1.0 - s_true))[:, None]
    return Candidates(trip, lam, off, scores, lat, labels=np.repeat(ids, c))


def _spurious(n, frame_size, k, config, rng, encoder) -> Candidates:
    h, w = frame_size
    shapes = simulator_shapes(n, k=k, seed=int(rng.integers(2**31)))
    pos = rng.uniform((0.0, 0.0), (w, h), size=(n, 2))
    jitter = rng.normal(0.0, 1.0, size=(n, 3, 1, 2))
    trip = shapes[:, None] + pos[:, None, None, :] + jitter
    scores = rng.uniform(0.0, config.spurious_score_max, size=n)
    lam, off = encode_many(trip, encoder.basis)
    lat = encoder(lam, off) + rng.normal(size=(n, encoder.dim)) * config.latent_spread
    return Candidates(trip, lam, off, scores, lat, labels=np.full(n, -1))
