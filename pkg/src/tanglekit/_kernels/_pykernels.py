"""Pure-Python/numpy versions of the compiled kernels.

Used when the extension is not built or ``TANGLEKIT_PURE=1`` is set.
Results agree with ``_ckernels`` to floating-point round-off.
"""

import numpy as np


def _segment_distances(label, a, b):
    """Distance of every label point (N, 2) to every segment a[j]-b[j] -> (N, M)."""
    d = b - a
    den = np.einsum("ij,ij->i", d, d)
    rel = label[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("nmj,mj->nm", rel, d) / den
    t = np.where(den > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    e = a[None, :, :] + t[..., None] * d[None, :, :] - label[:, None, :]
    return np.sqrt(np.einsum("nmj,nmj->nm", e, e))


def _adtw_one(dist):
    row = np.minimum.accumulate(dist[0])
    for i in range(1, dist.shape[0]):
        row = np.minimum.accumulate(row + dist[i])
    return row[-1] / dist.shape[0]


def adtw(label, pred):
    label = np.asarray(label, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if label.shape[0] < 1 or pred.shape[0] < 2:
        raise ValueError("adtw needs at least one label point and one segment")
    dist = _segment_distances(label, pred[:-1], pred[1:])
    # reversed prediction: segment j becomes segment m-1-j
    return min(_adtw_one(dist), _adtw_one(dist[:, ::-1]))


def nms(order, offsets, latents, sigma_l, tau_o):
    order = np.asarray(order, dtype=np.int64)
    off = offsets[order]
    lat = latents[order]
    alive = np.ones(len(order), dtype=bool)
    accepted = []
    for a in range(len(order)):
        if not alive[a]:
            continue
        accepted.append(order[a])
        rest = np.flatnonzero(alive[a + 1:]) + a + 1
        if rest.size == 0:
            break
        dx = off[rest] - off[a]
        near = np.sqrt(dx[:, 0] ** 2 + dx[:, 1] ** 2) <= sigma_l
        dp = lat[rest] - lat[a]
        d2 = np.einsum("ij,ij->i", dp, dp)
        alive[rest[near & (np.exp(-d2) > tau_o)]] = False
    return np.asarray(accepted, dtype=np.int64)


def rasterize_coverage(cover, splines, radii, ss):
    h, w = cover.shape
    for pts, rad in zip(splines, radii):
        rmax = rad.max()
        c0 = max(int(np.floor(pts[:, 0].min() - rmax + 0.5)), 0)
        c1 = min(int(np.floor(pts[:, 0].max() + rmax + 0.5)), w - 1)
        r0 = max(int(np.floor(pts[:, 1].min() - rmax + 0.5)), 0)
        r1 = min(int(np.floor(pts[:, 1].max() + rmax + 0.5)), h - 1)
        if c1 < c0 or r1 < r0:
            continue
        bw, bh = (c1 - c0 + 1) * ss, (r1 - r0 + 1) * ss
        buf = np.zeros((bh, bw), dtype=bool)
        for j in range(len(pts) - 1):
            (ax, ay), (bx, by) = pts[j], pts[j + 1]
            ra, rb = rad[j], rad[j + 1]
            rr = max(ra, rb)
            if rr <= 0.0:
                continue
            sc0 = max(int(np.ceil((min(ax, bx) - rr - c0 + 0.5) * ss - 0.5)), 0)
            sc1 = min(int(np.floor((max(ax, bx) + rr - c0 + 0.5) * ss - 0.5)), bw - 1)
            sr0 = max(int(np.ceil((min(ay, by) - rr - r0 + 0.5) * ss - 0.5)), 0)
            sr1 = min(int(np.floor((max(ay, by) + rr - r0 + 0.5) * ss - 0.5)), bh - 1)
            if sc1 < sc0 or sr1 < sr0:
                continue
            qx = c0 - 0.5 + (np.arange(sc0, sc1 + 1) + 0.5) * (1.0 / ss)
            qy = r0 - 0.5 + (np.arange(sr0, sr1 + 1) + 0.5) * (1.0 / ss)
            qx, qy = np.meshgrid(qx, qy)
            dx, dy = bx - ax, by - ay
            den = dx * dx + dy * dy
            if den > 0.0:
                t = np.clip(((qx - ax) * dx + (qy - ay) * dy) / den, 0.0, 1.0)
            else:
                t = np.zeros_like(qx)
            ex = ax + t * dx - qx
            ey = ay + t * dy - qy
            r = ra + t * (rb - ra)
            buf[sr0:sr1 + 1, sc0:sc1 + 1] |= ex * ex + ey * ey <= r * r
        cov = buf.reshape(bh // ss, ss, bw // ss, ss).sum(axis=(1, 3)) / (ss * ss)
        view = cover[r0:r1 + 1, c0:c1 + 1]
        np.maximum(view, cov, out=view)


def worm_shapes(gait, length, gamma, t, k, nf):
    """Integrate the tangent angle on ``nf`` fine nodes and resample to ``k`` points.

    ``gait`` rows are (amplitude, period, k_u, k_s, rho1, rho2, rho3).
    """
    gait = np.asarray(gait, dtype=np.float64)
    n = gait.shape[0]
    A, T, ku, ks, r1, r2, r3 = (gait[:, i:i + 1] for i in range(7))
    tt = np.asarray(t, dtype=np.float64)[:, None]
    s = np.linspace(0.0, 1.0, nf)[None, :]
    wt = 2.0 * np.pi / T * tt
    amod = 0.5 * (1.0 + np.abs(np.sin(2.0 * np.pi * tt))) * A
    psi = A * np.cos(wt + r1) * np.cos(ku * s + r2) + amod * np.cos(wt + ks * s + r3)
    ang = psi + np.asarray(gamma, dtype=np.float64)[:, None]
    tang = np.stack([np.cos(ang), np.sin(ang)], axis=-1) * np.asarray(length, dtype=np.float64)[:, None, None]
    inc = 0.5 * (tang[:, 1:] + tang[:, :-1]) / (nf - 1)
    fine = np.concatenate([np.zeros((n, 1, 2)), np.cumsum(inc, axis=1)], axis=1)
    seg = np.linalg.norm(np.diff(fine, axis=1), axis=-1)
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(seg, axis=1)], axis=1)
    target = cum[:, -1:] * (np.arange(k) / (k - 1))[None, :]
    idx = np.stack([np.searchsorted(c, tg, side="right") for c, tg in zip(cum, target)]) - 1
    idx = np.clip(idx, 0, nf - 2)
    rows = np.arange(n)[:, None]
    s0 = seg[rows, idx]
    frac = np.clip(np.divide(target - cum[rows, idx], s0, out=np.zeros_like(s0), where=s0 > 0), 0.0, 1.0)
    out = fine[rows, idx] + frac[..., None] * (fine[rows, idx + 1] - fine[rows, idx])
    out[:, 0] = fine[:, 0]
    out[:, -1] = fine[:, -1]
    return out
