"""Crawling-worm simulator: prescribed undulations plus resistive-force-theory
rigid-body motion.

Body shape comes from integrating the tangent angle along arc length; the
centre-of-mass velocity and rotation rate follow from zero net drag force and
torque. All lengths are pixels, times seconds.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels
from .splines import K_DEFAULT

TWO_PI = 2.0 * np.pi


class SingularMobilityError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Uniform sampling ranges for worm parameters, plus discretisation."""

    length: tuple[float, float] = (35.0, 55.0)
    amplitude: tuple[float, float] = (0.4, 1.1)
    period: tuple[float, float] = (0.8, 2.0)
    k_u: tuple[float, float] = (2.0, 5.0)
    k_s: tuple[float, float] = (4.0, 9.0)
    alpha: tuple[float, float] = (1.5, 10.0)
    alpha_t: float = 1.0
    k: int = K_DEFAULT
    px_per_mm: float = 40.0
    substeps: int = 4

    def __post_init__(self):
        for f in ("length", "amplitude", "period", "k_u", "k_s", "alpha"):
            lo, hi = getattr(self, f)
            if not lo <= hi:
                raise ValueError(f"{f}: min {lo} > max {hi}")
        if self.alpha[0] <= 1.0:
            raise ValueError("alpha range must lie above 1")
        if self.length[0] <= 0 or self.period[0] <= 0:
            raise ValueError("length and period must be positive")
        if self.alpha_t <= 0 or self.k < 2 or self.substeps < 1 or self.px_per_mm <= 0:
            raise ValueError("invalid discretisation settings")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class WormParams:
    length: float
    amplitude: float
    period: float
    k_u: float
    k_s: float
    rho1: float
    rho2: float
    rho3: float
    gamma0: float
    com0: tuple[float, float]
    alpha_t: float
    alpha: float

    def __post_init__(self):
        if self.length <= 0 or self.period <= 0:
            raise ValueError("length and period must be positive")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")


@dataclass(frozen=True)
class WormState:
    t: float
    com: np.ndarray
    gamma: float
    spline: np.ndarray


@dataclass(frozen=True)
class RftSolution:
    V: np.ndarray
    omega: float
    residual_force: np.ndarray
    residual_torque: float


@dataclass
class SceneWorm:
    id: int
    splines: np.ndarray  # (n_frames, k, 2)
    com: np.ndarray | None = None
    gamma: np.ndarray | None = None
    params: WormParams | None = None


@dataclass
class Scene:
    size: tuple[int, int]  # (H, W)
    dt: float
    mm_per_px: float
    worms: list[SceneWorm] = field(default_factory=list)
    density: float | None = None
    frame_count: int | None = None  # kept for scenes without worms

    @property
    def n_frames(self) -> int:
        if self.worms:
            return self.worms[0].splines.shape[0]
        return self.frame_count or 0

    def frame_splines(self, index: int) -> np.ndarray:
        if not self.worms:
            return np.zeros((0, K_DEFAULT, 2))
        return np.stack([w.splines[index] for w in self.worms])


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TANGLEKIT_THREADS", "1")))
    except ValueError:
        return 1


def sample_params(rng: np.random.Generator, config: SimConfig = SimConfig(),
                  frame_size: tuple[int, int] | None = None) -> WormParams:
    """Draw every parameter independently and uniformly from ``config``.

    The initial centre of mass is uniform over ``frame_size`` (H, W) when
    given, else the origin.
    """
    u = lambda r: float(rng.uniform(r[0], r[1])) if r[0] < r[1] else float(r[0])  # noqa: E731
    length = u(config.length)
    amplitude = u(config.amplitude)
    period = u(config.period)
    k_u = u(config.k_u)
    k_s = u(config.k_s)
    alpha = u(config.alpha)
    rho1, rho2, rho3, gamma0 = (float(v) for v in rng.uniform(0.0, TWO_PI, size=4))
    if frame_size is not None:
        h, w = frame_size
        com0 = (float(rng.uniform(0.0, w)), float(rng.uniform(0.0, h)))
    else:
        com0 = (0.0, 0.0)
    return WormParams(length, amplitude, period, k_u, k_s, rho1, rho2, rho3,
                      gamma0, com0, config.alpha_t, alpha)


# ---------------------------------------------------------------- vectorised core

def _as_columns(params: list[WormParams]) -> dict[str, np.ndarray]:
    cols = {f.name: np.array([getattr(p, f.name) for p in params], dtype=np.float64)
            for f in fields(WormParams) if f.name != "com0"}
    cols["com0"] = np.array([p.com0 for p in params], dtype=np.float64).reshape(-1, 2)
    return cols


def undulation_angle(params: WormParams, s, t) -> np.ndarray:
    """Body tangent angle at arc fraction ``s`` and time ``t`` (broadcasting)."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    A = params.amplitude
    omega_t = TWO_PI / params.period * t
    a_mod = 0.5 * (1.0 + np.abs(np.sin(TWO_PI * t))) * A
    psi_u = A * np.cos(omega_t + params.rho1) * np.cos(params.k_u * s + params.rho2)
    psi_s = a_mod * np.cos(omega_t + params.k_s * s + params.rho3)
    return psi_u + psi_s


_GAIT = ("amplitude", "period", "k_u", "k_s", "rho1", "rho2", "rho3")


def _shapes(cols: dict, t, gamma: np.ndarray, k: int) -> np.ndarray:
    """Head-anchored shapes for a batch; integrates on ``8 (k - 1) + 1`` fine nodes."""
    gait = np.ascontiguousarray(np.stack([cols[name] for name in _GAIT], axis=1))
    tt = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=np.float64), gamma.shape))
    return _kernels.worm_shapes(gait, cols["length"], np.ascontiguousarray(gamma), tt, k, 8 * (k - 1) + 1)


def body_coordinates(params: WormParams, t: float, gamma: float, k: int = K_DEFAULT) -> np.ndarray:
    """Centre-line at time ``t`` with orientation ``gamma``, head at the origin."""
    if k < 2:
        raise ValueError("k must be >= 2")
    cols = _as_columns([params])
    return _shapes(cols, t, np.array([gamma], dtype=np.float64), k)[0]


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Arc-length quadrature weights for point values on a polyline (..., k)."""
    seg = np.linalg.norm(np.diff(points, axis=-2), axis=-1)
    w = np.zeros(points.shape[:-1])
    w[..., :-1] += 0.5 * seg
    w[..., 1:] += 0.5 * seg
    return w


def mass_centre(points: np.ndarray) -> np.ndarray:
    w = trapezoid_weights(points)
    return np.einsum("...k,...kj->...j", w, points) / w.sum(axis=-1)[..., None]


def _rft_batch(x: np.ndarray, u: np.ndarray, alpha_t: np.ndarray, alpha: np.ndarray):
    """Solve zero force/torque for (V, Omega) over a batch ``x, u: (n, k, 2)``."""
    n = x.shape[0]
    w = trapezoid_weights(x)
    ell = w.sum(axis=-1)
    xc = np.einsum("nk,nkj->nj", w, x) / np.where(ell > 0, ell, 1.0)[:, None]
    r = x - xc[:, None, :]
    tang = np.gradient(x, axis=1)
    tn = np.linalg.norm(tang, axis=-1, keepdims=True)
    if np.any(ell <= 0) or np.any(tn <= 0):
        raise SingularMobilityError("singular mobility")
    tang = tang / tn
    nrm = np.stack([-tang[..., 1], tang[..., 0]], axis=-1)
    a_t = alpha_t[:, None, None, None]
    a_n = (alpha * alpha_t)[:, None, None, None]
    # local drag tensor M_i = a_t t t^T + a_n n n^T, shape (n, k, 2, 2)
    M = a_t * tang[..., :, None] * tang[..., None, :] + a_n * nrm[..., :, None] * nrm[..., None, :]
    rperp = np.stack([-r[..., 1], r[..., 0]], axis=-1)
    Mw = M * w[..., None, None]
    Mr = np.einsum("nkab,nkb->nka", Mw, rperp)
    Mu = np.einsum("nkab,nkb->nka", Mw, u)
    sys = np.empty((n, 3, 3))
    sys[:, :2, :2] = Mw.sum(axis=1)
    sys[:, :2, 2] = Mr.sum(axis=1)
    sys[:, 2, :2] = Mr.sum(axis=1)  # M is symmetric
    sys[:, 2, 2] = np.einsum("nka,nka->n", rperp, Mr)
    rhs = -np.concatenate([Mu.sum(axis=1), np.einsum("nka,nka->n", rperp, Mu)[:, None]], axis=1)
    # scale rows to O(1) before the conditioning check
    scale = np.maximum(np.abs(sys).max(axis=2), 1e-300)
    cond = np.linalg.cond(sys / scale[:, :, None])
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise SingularMobilityError("singular mobility")
    sol = np.linalg.solve(sys, rhs[..., None])[..., 0]
    V, omega = sol[:, :2], sol[:, 2]
    U = u + V[:, None, :] + omega[:, None, None] * rperp
    f = np.einsum("nkab,nkb->nka", M, U)
    F = np.einsum("nk,nka->na", w, f)
    tau = np.einsum("nk,nk->n", w, r[..., 0] * f[..., 1] - r[..., 1] * f[..., 0])
    # residuals in solver units: drag scale alpha_t * length * reference speed
    u_ref = np.abs(u).max(axis=(1, 2)) + np.linalg.norm(V, axis=1) + np.abs(omega) * ell
    u_ref = np.where(u_ref > 0, u_ref, 1.0)
    res_f = F / (alpha_t * ell * u_ref)[:, None]
    res_t = tau / (alpha_t * ell**2 * u_ref)
    return V, omega, res_f, res_t


def rft_velocities(spline, body_velocity, alpha_t: float, alpha: float) -> RftSolution:
    """Rigid-body velocity making total drag force and torque vanish.

    ``body_velocity`` is the shape-change velocity of each point. Residuals
    are reported relative to ``alpha_t * length * speed`` (force) and
    ``alpha_t * length**2 * speed`` (torque).
    """
    x = np.asarray(spline, dtype=np.float64)[None]
    u = np.asarray(body_velocity, dtype=np.float64)[None]
    if x.shape != u.shape or x.ndim != 3 or x.shape[2] != 2:
        raise ValueError("spline and body_velocity must both have shape (k, 2)")
    V, om, rf, rt = _rft_batch(x, u, np.array([alpha_t], float), np.array([alpha], float))
    return RftSolution(V=V[0], omega=float(om[0]), residual_force=rf[0], residual_torque=float(rt[0]))


def _simulate_cols(cols: dict, n_frames: int, dt: float, k: int, substeps: int):
    n = cols["length"].shape[0]
    h_fd = 1e-4 * cols["period"]
    com = cols["com0"].copy()
    gamma = cols["gamma0"].copy()
    splines = np.empty((n_frames, n, k, 2))
    coms = np.empty((n_frames, n, 2))
    gammas = np.empty((n_frames, n))
    h = dt / substeps
    t = 0.0
    for frame in range(n_frames):
        for sub in range(substeps):
            x0 = _shapes(cols, t, gamma, k)
            c0 = mass_centre(x0)
            xc = x0 - c0[:, None, :]
            if sub == 0:
                splines[frame] = xc + com[:, None, :]
                coms[frame] = com
                gammas[frame] = gamma
                if frame == n_frames - 1:
                    break
            xp = _shapes(cols, t + h_fd, gamma, k)
            xm = _shapes(cols, t - h_fd, gamma, k)
            u = ((xp - mass_centre(xp)[:, None]) - (xm - mass_centre(xm)[:, None])) / (2.0 * h_fd)[:, None, None]
            V, omega, _, _ = _rft_batch(xc + com[:, None, :], u, cols["alpha_t"], cols["alpha"])
            com = com + V * h
            gamma = gamma + omega * h
            t = (frame * substeps + sub + 1) * h
    return splines, coms, gammas


def simulate(params: WormParams, n_frames: int, dt: float, k: int = K_DEFAULT,
             substeps: int = 4) -> list[WormState]:
    """Explicit-Euler time stepping; one state per frame at ``t = i * dt``."""
    if n_frames < 1 or dt <= 0:
        raise ValueError("need n_frames >= 1 and dt > 0")
    sp, com, gam = _simulate_cols(_as_columns([params]), n_frames, dt, k, substeps)
    return [WormState(t=i * dt, com=com[i, 0], gamma=float(gam[i, 0]), spline=sp[i, 0])
            for i in range(n_frames)]


def simulate_many(params: list[WormParams], n_frames: int, dt: float, k: int = K_DEFAULT,
                  substeps: int = 4, threads: int | None = None):
    """Simulate independent worms; returns ``(splines, com, gamma)`` with worm axis 0.

    Worms are split into chunks across ``threads`` (default ``TANGLEKIT_THREADS``).
    Every operation is per-worm, so results do not depend on the chunking.
    """
    if n_frames < 1 or dt <= 0:
        raise ValueError("need n_frames >= 1 and dt > 0")
    n = len(params)
    if n == 0:
        return np.zeros((0, n_frames, k, 2)), np.zeros((0, n_frames, 2)), np.zeros((0, n_frames))
    threads = min(threads or _threads(), n)
    bounds = np.linspace(0, n, threads + 1).astype(int)

    def run(i):
        sp, com, gam = _simulate_cols(_as_columns(params[bounds[i]:bounds[i + 1]]), n_frames, dt, k, substeps)
        return sp.transpose(1, 0, 2, 3), com.transpose(1, 0, 2), gam.T

    if threads == 1:
        parts = [run(0)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(threads)))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def populate_scene(density: float, frame_size: tuple[int, int], n_frames: int, dt: float,
                   seed=0, config: SimConfig = SimConfig()) -> Scene:
    """Scatter ``round(density * area_mm2)`` independent worms over the frame.

    Each worm draws its parameters and start position from its own stream
    spawned from ``seed``, so the scene is identical however it is computed.
    """
    if density < 0:
        raise ValueError("density must be non-negative")
    h, w = frame_size
    area_mm2 = (h / config.px_per_mm) * (w / config.px_per_mm)
    n = int(np.floor(density * area_mm2 + 0.5))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    params = [sample_params(np.random.default_rng(s), config, frame_size) for s in root.spawn(n)]
    sp, com, gam = simulate_many(params, n_frames, dt, config.k, config.substeps)
    worms = [SceneWorm(id=i, splines=sp[i], com=com[i], gamma=gam[i], params=p)
             for i, p in enumerate(params)]
    return Scene(size=(h, w), dt=dt, mm_per_px=1.0 / config.px_per_mm, worms=worms, density=density,
                 frame_count=n_frames)


def _segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """Minimum distance between segment sets ``p0p1`` (m) and ``q0q1`` (n), ``(m, n)``."""
    p0, p1 = p0[:, None], p1[:, None]
    q0, q1 = q0[None], q1[None]

    def pt_seg(x, a, b):
        d = b - a
        den = np.sum(d * d, axis=-1)
        t = np.where(den > 0, np.sum((x - a) * d, axis=-1) / np.where(den > 0, den, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        return np.linalg.norm(a + t[..., None] * d - x, axis=-1)

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    d1, d2 = cross(q1 - q0, p0 - q0), cross(q1 - q0, p1 - q0)
    d3, d4 = cross(p1 - p0, q0 - p0), cross(p1 - p0, q1 - p0)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    best = np.minimum(np.minimum(pt_seg(p0, q0, q1), pt_seg(p1, q0, q1)),
                      np.minimum(pt_seg(q0, p0, p1), pt_seg(q1, p0, p1)))
    return np.where(hit, 0.0, best)


def polyline_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(_segment_distance(a[:-1], a[1:], b[:-1], b[1:]).min())


def count_overlaps(scene: Scene, index: int, radius: float = 1.0) -> float:
    """Average number of other bodies each worm touches at frame ``index``.

    Two worms overlap when their centre-lines come within ``2 * radius``.
    Returns ``2 * pairs / n_worms`` (0 for an empty scene).
    """
    n = len(scene.worms)
    if n == 0:
        return 0.0
    if not 0 <= index < scene.n_frames:
        raise IndexError(f"frame {index} out of range")
    sp = scene.frame_splines(index)
    lo, hi = sp.min(axis=1), sp.max(axis=1)
    reach = 2.0 * radius
    pairs = 0
    for i in range(n - 1):
        near = np.flatnonzero(np.all(lo[i + 1:] <= hi[i] + reach, axis=1)
                              & np.all(hi[i + 1:] >= lo[i] - reach, axis=1)) + i + 1
        for j in near:
            if polyline_distance(sp[i], sp[j]) <= reach:
                pairs += 1
    return 2.0 * pairs / n
