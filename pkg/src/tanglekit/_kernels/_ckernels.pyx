# cython: language_level=3
"""Compiled hot loops. Signatures mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, floor, ceil, fmin, fmax, fabs, sin, cos
from libc.stdlib cimport calloc, free

cnp.import_array()


cdef inline double _point_segment(double px, double py,
                                  double ax, double ay,
                                  double bx, double by) noexcept nogil:
    cdef double dx = bx - ax
    cdef double dy = by - ay
    cdef double den = dx * dx + dy * dy
    cdef double t = 0.0
    if den > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cdef double ex = ax + t * dx - px
    cdef double ey = ay + t * dy - py
    return sqrt(ex * ex + ey * ey)


cdef double _adtw_one(const double[:, ::1] label, const double[:, ::1] pred,
                      bint reverse, double* row) noexcept nogil:
    cdef Py_ssize_t n = label.shape[0]
    cdef Py_ssize_t m = pred.shape[0] - 1
    cdef Py_ssize_t i, j, a, b
    cdef double d, best
    for i in range(n):
        best = 1e300
        for j in range(m):
            if reverse:
                a = m - j
                b = m - j - 1
            else:
                a = j
                b = j + 1
            d = _point_segment(label[i, 0], label[i, 1],
                               pred[a, 0], pred[a, 1], pred[b, 0], pred[b, 1])
            if i > 0:
                d = row[j] + d
            if d < best:
                best = d
            row[j] = best
    return row[m - 1] / n


def adtw(const double[:, ::1] label, const double[:, ::1] pred):
    cdef Py_ssize_t m = pred.shape[0] - 1
    if label.shape[0] < 1 or m < 1:
        raise ValueError("adtw needs at least one label point and one segment")
    cdef double* row = <double*> calloc(m, sizeof(double))
    cdef double fwd, bwd
    if row == NULL:
        raise MemoryError()
    with nogil:
        fwd = _adtw_one(label, pred, False, row)
        bwd = _adtw_one(label, pred, True, row)
    free(row)
    return fmin(fwd, bwd)


def nms(const long long[::1] order, const double[:, ::1] offsets,
        const double[:, ::1] latents, double sigma_l, double tau_o):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t dim = latents.shape[1]
    cdef Py_ssize_t a, b, c, ia, ib
    cdef double dx, dy, d2, diff
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] acc = out
    cdef Py_ssize_t n_acc = 0
    cdef unsigned char* dead = <unsigned char*> calloc(n if n > 0 else 1, 1)
    if dead == NULL:
        raise MemoryError()
    with nogil:
        for a in range(n):
            if dead[a]:
                continue
            ia = order[a]
            acc[n_acc] = ia
            n_acc += 1
            for b in range(a + 1, n):
                if dead[b]:
                    continue
                ib = order[b]
                dx = offsets[ia, 0] - offsets[ib, 0]
                dy = offsets[ia, 1] - offsets[ib, 1]
                if sqrt(dx * dx + dy * dy) > sigma_l:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = latents[ia, c] - latents[ib, c]
                    d2 += diff * diff
                if exp(-d2) > tau_o:
                    dead[b] = 1
    free(dead)
    return out[:n_acc].copy()


def rasterize_coverage(double[:, ::1] cover, const double[:, :, ::1] splines,
                       const double[:, ::1] radii, int ss):
    """Max-composite per-body supersampled coverage into ``cover`` in place."""
    cdef Py_ssize_t h = cover.shape[0]
    cdef Py_ssize_t w = cover.shape[1]
    cdef Py_ssize_t nb = splines.shape[0]
    cdef Py_ssize_t k = splines.shape[1]
    cdef Py_ssize_t body, j, r, c, sr, sc
    cdef double xmin, xmax, ymin, ymax, rmax, ax, ay, bx, by, ra, rb
    cdef double dx, dy, den, t, qx, qy, ex, ey, rad
    cdef Py_ssize_t c0, c1, r0, r1, bw, bh, s_c0, s_c1, s_r0, s_r1, count
    cdef unsigned char* buf
    cdef double inv = 1.0 / ss
    cdef double norm = 1.0 / (ss * ss)
    with nogil:
        for body in range(nb):
            xmin = 1e300; ymin = 1e300; xmax = -1e300; ymax = -1e300; rmax = 0.0
            for j in range(k):
                xmin = fmin(xmin, splines[body, j, 0])
                xmax = fmax(xmax, splines[body, j, 0])
                ymin = fmin(ymin, splines[body, j, 1])
                ymax = fmax(ymax, splines[body, j, 1])
                rmax = fmax(rmax, radii[body, j])
            # pixel (r, c) spans [c - 0.5, c + 0.5) x [r - 0.5, r + 0.5)
            c0 = <Py_ssize_t> floor(xmin - rmax + 0.5)
            c1 = <Py_ssize_t> floor(xmax + rmax + 0.5)
            r0 = <Py_ssize_t> floor(ymin - rmax + 0.5)
            r1 = <Py_ssize_t> floor(ymax + rmax + 0.5)
            if c0 < 0:
                c0 = 0
            if r0 < 0:
                r0 = 0
            if c1 > w - 1:
                c1 = w - 1
            if r1 > h - 1:
                r1 = h - 1
            if c1 < c0 or r1 < r0:
                continue
            bw = (c1 - c0 + 1) * ss
            bh = (r1 - r0 + 1) * ss
            buf = <unsigned char*> calloc(bw * bh, 1)
            if buf == NULL:
                break
            for j in range(k - 1):
                ax = splines[body, j, 0]; ay = splines[body, j, 1]
                bx = splines[body, j + 1, 0]; by = splines[body, j + 1, 1]
                ra = radii[body, j]; rb = radii[body, j + 1]
                rad = fmax(ra, rb)
                if rad <= 0.0:
                    continue
                # subsample centre index s maps to x = c0 - 0.5 + (s + 0.5) / ss
                s_c0 = <Py_ssize_t> ceil((fmin(ax, bx) - rad - c0 + 0.5) * ss - 0.5)
                s_c1 = <Py_ssize_t> floor((fmax(ax, bx) + rad - c0 + 0.5) * ss - 0.5)
                s_r0 = <Py_ssize_t> ceil((fmin(ay, by) - rad - r0 + 0.5) * ss - 0.5)
                s_r1 = <Py_ssize_t> floor((fmax(ay, by) + rad - r0 + 0.5) * ss - 0.5)
                if s_c0 < 0:
                    s_c0 = 0
                if s_r0 < 0:
                    s_r0 = 0
                if s_c1 > bw - 1:
                    s_c1 = bw - 1
                if s_r1 > bh - 1:
                    s_r1 = bh - 1
                dx = bx - ax
                dy = by - ay
                den = dx * dx + dy * dy
                for sr in range(s_r0, s_r1 + 1):
                    qy = r0 - 0.5 + (sr + 0.5) * inv
                    for sc in range(s_c0, s_c1 + 1):
                        if buf[sr * bw + sc]:
                            continue
                        qx = c0 - 0.5 + (sc + 0.5) * inv
                        t = 0.0
                        if den > 0.0:
                            t = ((qx - ax) * dx + (qy - ay) * dy) / den
                            if t < 0.0:
                                t = 0.0
                            elif t > 1.0:
                                t = 1.0
                        ex = ax + t * dx - qx
                        ey = ay + t * dy - qy
                        rad = ra + t * (rb - ra)
                        if ex * ex + ey * ey <= rad * rad:
                            buf[sr * bw + sc] = 1
            for r in range(r1 - r0 + 1):
                for c in range(c1 - c0 + 1):
                    count = 0
                    for sr in range(r * ss, r * ss + ss):
                        for sc in range(c * ss, c * ss + ss):
                            count += buf[sr * bw + sc]
                    if count > 0:
                        cover[r0 + r, c0 + c] = fmax(cover[r0 + r, c0 + c], count * norm)
            free(buf)


def worm_shapes(const double[:, ::1] gait, const double[::1] length,
                const double[::1] gamma, const double[::1] t, int k, int nf):
    """Integrate the tangent angle on ``nf`` fine nodes and resample to ``k`` points.

    ``gait`` rows are (amplitude, period, k_u, k_s, rho1, rho2, rho3).
    """
    cdef Py_ssize_t n = gait.shape[0]
    out = np.empty((n, k, 2), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double* fx = <double*> calloc(nf, sizeof(double))
    cdef double* fy = <double*> calloc(nf, sizeof(double))
    cdef double* cum = <double*> calloc(nf, sizeof(double))
    if fx == NULL or fy == NULL or cum == NULL:
        free(fx); free(fy); free(cum)
        raise MemoryError()
    cdef Py_ssize_t w, i, j, seg
    cdef double A, T, ku, ks, r1, r2, r3, tt, wt, amod, psi, ds, ang
    cdef double cx, cy, px, py, dx, dy, total, target, frac, l, bend
    cdef double uc, us, ur_c, ur_s, wc, ws, wr_c, wr_s, tmp
    cdef double two_pi = 6.283185307179586
    ds = 1.0 / (nf - 1)
    with nogil:
        for w in range(n):
            A = gait[w, 0]; T = gait[w, 1]; ku = gait[w, 2]; ks = gait[w, 3]
            r1 = gait[w, 4]; r2 = gait[w, 5]; r3 = gait[w, 6]
            tt = t[w]
            l = length[w]
            wt = two_pi / T * tt
            amod = 0.5 * (1.0 + fabs(sin(two_pi * tt))) * A
            fx[0] = 0.0; fy[0] = 0.0; cum[0] = 0.0
            bend = A * cos(wt + r1)
            # cos(ku s + r2) and cos(wt + ks s + r3) advance by fixed rotations per node
            uc = cos(r2); us = sin(r2)
            ur_c = cos(ku * ds); ur_s = sin(ku * ds)
            wc = cos(wt + r3); ws = sin(wt + r3)
            wr_c = cos(ks * ds); wr_s = sin(ks * ds)
            for i in range(nf):
                psi = bend * uc + amod * wc
                tmp = uc * ur_c - us * ur_s
                us = us * ur_c + uc * ur_s
                uc = tmp
                tmp = wc * wr_c - ws * wr_s
                ws = ws * wr_c + wc * wr_s
                wc = tmp
                ang = psi + gamma[w]
                cx = cos(ang) * l
                cy = sin(ang) * l
                if i > 0:
                    fx[i] = fx[i - 1] + 0.5 * (px + cx) * ds
                    fy[i] = fy[i - 1] + 0.5 * (py + cy) * ds
                    dx = fx[i] - fx[i - 1]
                    dy = fy[i] - fy[i - 1]
                    cum[i] = cum[i - 1] + sqrt(dx * dx + dy * dy)
                px = cx
                py = cy
            total = cum[nf - 1]
            seg = 0
            for j in range(k):
                target = total * j / (k - 1)
                while seg < nf - 2 and cum[seg + 1] <= target:
                    seg += 1
                dx = cum[seg + 1] - cum[seg]
                frac = 0.0
                if dx > 0.0:
                    frac = (target - cum[seg]) / dx
                    if frac < 0.0:
                        frac = 0.0
                    elif frac > 1.0:
                        frac = 1.0
                o[w, j, 0] = fx[seg] + frac * (fx[seg + 1] - fx[seg])
                o[w, j, 1] = fy[seg] + frac * (fy[seg + 1] - fy[seg])
            o[w, 0, 0] = fx[0]; o[w, 0, 1] = fy[0]
            o[w, k - 1, 0] = fx[nf - 1]; o[w, k - 1, 1] = fy[nf - 1]
    free(fx); free(fy); free(cum)
    return out
