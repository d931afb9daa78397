"""Rendering scenes into grayscale frames, noise degradation and PGM I/O."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import _kernels

SUPERSAMPLE = 4


@dataclass(frozen=True)
class RenderConfig:
    max_radius: float = 1.0
    a: float = 2.0
    b: float = -1.0
    body_intensity: float = 1.0
    background: float = 0.0

    def __post_init__(self):
        if self.max_radius <= 0:
            raise ValueError("max_radius must be positive")
        if abs(self.b) > 1.0 or abs(self.a + self.b) > 1.0:
            raise ValueError("need |b| <= 1 and |a + b| <= 1 for the radius profile")

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        return cls(**_checked(cls, d))


@dataclass(frozen=True)
class NoiseConfig:
    gradient: float = 0.0
    blur: float = 0.0
    sigma: float = 0.0
    vignette: float = 0.0

    def __post_init__(self):
        if min(self.gradient, self.blur, self.sigma, self.vignette) < 0:
            raise ValueError("noise amplitudes must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**_checked(cls, d))


def _checked(cls, d: dict) -> dict:
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


def config_dict(cfg) -> dict:
    return asdict(cfg)


def radius_profile(s, config: RenderConfig = RenderConfig()) -> np.ndarray:
    """Body radius ``R |sin(arccos(a s + b))|`` at arc fraction ``s``."""
    arg = config.a * np.asarray(s, dtype=np.float64) + config.b
    if np.any(np.abs(arg) > 1.0 + 1e-12):
        raise ValueError("|a s + b| exceeds 1; radius profile undefined")
    return config.max_radius * np.abs(np.sin(np.arccos(np.clip(arg, -1.0, 1.0))))


def rasterize(splines, frame_size: tuple[int, int], config: RenderConfig = RenderConfig()) -> np.ndarray:
    """Anti-aliased (4x4 supersampled) bodies on a uniform background.

    Pixel ``(r, c)`` is centred on ``x = c, y = r``. Overlapping bodies combine
    by maximum coverage.
    """
    h, w = frame_size
    cover = np.zeros((h, w), dtype=np.float64)
    sp = np.ascontiguousarray(np.asarray(splines, dtype=np.float64).reshape(-1, *np.shape(splines)[-2:]))
    if sp.shape[0] and sp.shape[-1] == 2:
        k = sp.shape[1]
        radii = np.ascontiguousarray(np.broadcast_to(radius_profile(np.linspace(0.0, 1.0, k), config),
                                                     sp.shape[:2]))
        _kernels.rasterize_coverage(cover, sp, radii, SUPERSAMPLE)
    return config.background + (config.body_intensity - config.background) * cover


def degrade(frame, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Uneven background, vignette, Gaussian blur, white noise, then clamp to [0, 1]."""
    img = np.array(frame, dtype=np.float64)
    h, w = img.shape
    if noise.gradient > 0:
        corners = rng.uniform(-noise.gradient, noise.gradient, size=4)
        yy = np.linspace(0.0, 1.0, h)[:, None]
        xx = np.linspace(0.0, 1.0, w)[None, :]
        img += (corners[0] * (1 - yy) * (1 - xx) + corners[1] * (1 - yy) * xx
                + corners[2] * yy * (1 - xx) + corners[3] * yy * xx)
    if noise.vignette > 0:
        yy, xx = np.mgrid[0:h, 0:w]
        r2 = ((xx - (w - 1) / 2) / (w / 2)) ** 2 + ((yy - (h - 1) / 2) / (h / 2)) ** 2
        img -= noise.vignette * r2 / 2.0
    if noise.blur > 0:
        img = gaussian_filter(img, noise.blur, mode="nearest")
    if noise.sigma > 0:
        img += rng.normal(0.0, noise.sigma, size=img.shape)
    if noise.gradient or noise.vignette or noise.blur or noise.sigma:
        np.clip(img, 0.0, 1.0, out=img)
    return img


def normalize_percentile(frame, lo: float = 1.0, hi: float = 99.0) -> tuple[np.ndarray, bool]:
    """Map the ``lo`` and ``hi`` percentiles to 0 and 1, clamping outside.

    Returns ``(frame, degenerate)``; a frame whose percentiles coincide maps to
    all zeros with ``degenerate=True``.
    """
    img = np.asarray(frame, dtype=np.float64)
    p_lo, p_hi = np.percentile(img, [lo, hi])
    if not p_hi > p_lo:
        return np.zeros_like(img), True
    return np.clip((img - p_lo) / (p_hi - p_lo), 0.0, 1.0), False


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TANGLEKIT_THREADS", "1")))
    except ValueError:
        return 1


def render_clip(scene, render: RenderConfig = RenderConfig(), noise: NoiseConfig = NoiseConfig(),
                seed=0, normalize: bool = True) -> list[np.ndarray]:
    """Rasterize, degrade and normalize every frame of ``scene``.

    Each frame draws noise from its own stream spawned from ``seed``, so the
    frames can be rendered in any order or concurrently.
    """
    n = scene.n_frames
    if n < 1:
        raise ValueError("scene has no frames")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(n)

    def one(i):
        img = rasterize(scene.frame_splines(i), scene.size, render)
        img = degrade(img, noise, np.random.default_rng(streams[i]))
        return normalize_percentile(img)[0] if normalize else img

    threads = min(_threads(), n)
    if threads == 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, range(n)))


class PgmError(ValueError):
    pass


def quantize(frame) -> np.ndarray:
    """[0, 1] -> uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, frame) -> None:
    data = quantize(frame)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []

    def skip_space(p):
        while p < len(raw):
            if raw[p:p + 1] == b"#":
                while p < len(raw) and raw[p:p + 1] not in (b"\n", b"\r"):
                    p += 1
            elif raw[p:p + 1].isspace():
                p += 1
            else:
                break
        return p

    while len(tokens) < 4:
        pos = skip_space(pos)
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PgmError(f"truncated header at byte {start}")
        tokens.append((raw[start:pos], start))
    magic, (w_tok, w_at), (h_tok, h_at), (m_tok, m_at) = tokens[0][0], *tokens[1:]
    if magic != b"P5":
        raise PgmError(f"not a binary PGM (magic {magic!r}) at byte 0")
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise PgmError(f"malformed header field at byte {w_at}") from exc
    if w <= 0 or h <= 0:
        raise PgmError(f"invalid dimensions at byte {w_at}")
    if maxval != 255:
        raise PgmError(f"unsupported maxval {maxval} at byte {m_at}")
    pos += 1  # single whitespace after maxval
    need = w * h
    if len(raw) - pos < need:
        raise PgmError(f"truncated pixel data at byte {len(raw)}: expected {need} bytes from byte {pos}")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos).reshape(h, w)
    return data.astype(np.float64) / 255.0


def frame_name(index: int) -> str:
    return f"frame_{index:06d}.pgm"
