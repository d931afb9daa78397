import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tanglekit.splines import (
    DegenerateCurveError,
    ShapeDescriptor,
    align_triplet,
    arc_length,
    decode,
    encode,
    encode_many,
    fit_pca,
    flip_distance_sq,
    flip_distance_sq_many,
    flip_eigenvalues,
    resample_equidistant,
    reverse,
    spline_angle,
    triplet_distance_sq,
)

coords = st.floats(-100, 100, allow_nan=False, width=64)


def splines(k=6):
    return arrays(np.float64, (k, 2), elements=coords)


# ------------------------------------------------------------ resampling

def test_resample_straight_segment():
    out = resample_equidistant([(0, 0), (3, 0)], 4)
    np.testing.assert_allclose(out, [(0, 0), (1, 0), (2, 0), (3, 0)], atol=1e-12)


def test_resample_k2_keeps_endpoints(rng):
    poly = rng.normal(size=(9, 2))
    out = resample_equidistant(poly, 2)
    np.testing.assert_array_equal(out, poly[[0, -1]])


def test_resample_right_angle():
    out = resample_equidistant([(0, 0), (1, 0), (1, 1)], 3)
    np.testing.assert_allclose(out, [(0, 0), (1, 0), (1, 1)], atol=1e-12)


def test_resample_degenerate():
    with pytest.raises(DegenerateCurveError, match="degenerate curve"):
        resample_equidistant([(1, 1), (1, 1), (1, 1)], 5)


def _march(poly, k):
    """Independent reference: walk the polyline in small arc steps."""
    poly = np.asarray(poly, float)
    total = arc_length(poly)
    out = []
    for target in np.linspace(0, total, k):
        acc = 0.0
        for a, b in zip(poly[:-1], poly[1:]):
            seg = np.hypot(*(b - a))
            if acc + seg >= target - 1e-12 and seg > 0:
                out.append(a + (b - a) * min(max((target - acc) / seg, 0.0), 1.0))
                break
            acc += seg
        else:
            out.append(poly[-1])
    return np.array(out)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (7, 2), elements=st.floats(-50, 50, allow_nan=False)), st.integers(2, 30))
def test_resample_equidistant_properties(poly, k):
    if arc_length(poly) < 1e-3 or np.any(np.hypot(*np.diff(poly, axis=0).T) < 1e-6):
        return
    out = resample_equidistant(poly, k)
    np.testing.assert_allclose(out[[0, -1]], poly[[0, -1]])
    # spacing along the input polyline is uniform: compare against an arc-length march
    np.testing.assert_allclose(out, _march(poly, k), atol=1e-6 * max(1.0, arc_length(poly)))


# ------------------------------------------------------------- distances

def test_flip_distance_examples():
    a = np.array([(0, 0), (1, 0), (2, 0)], float)
    assert flip_distance_sq(a, a) == 0
    assert flip_distance_sq(a, reverse(a)) == 0
    b = np.array([(0, 1), (1, 1), (2, 1)], float)
    assert flip_distance_sq(a, b) == pytest.approx(3.0)


def test_flip_distance_k_mismatch():
    with pytest.raises(ValueError):
        flip_distance_sq(np.zeros((3, 2)), np.zeros((4, 2)))


@settings(max_examples=100, deadline=None)
@given(splines(), splines())
def test_flip_distance_symmetries(a, b):
    d = flip_distance_sq(a, b)
    scale = 1e-12 * max(1.0, d)
    assert abs(d - flip_distance_sq(b, a)) <= scale
    assert abs(d - flip_distance_sq(a, reverse(b))) <= scale
    assert flip_distance_sq(a, a) == 0 and flip_distance_sq(a, reverse(a)) == 0
    assert flip_distance_sq_many(a[None], b[None])[0] == pytest.approx(d, rel=1e-12, abs=1e-12)


def test_triplet_distance_examples(rng):
    z = rng.normal(size=(3, 5, 2))
    assert triplet_distance_sq(z, z) == 0
    z2 = z.copy()
    z2[1] += np.array([2.0, 0.0]) / np.sqrt(5)  # d^2 = 4 on the present spline
    assert triplet_distance_sq(z, z2) == pytest.approx(2.0)
    z3 = z + np.array([2.0, 0.0]) / np.sqrt(5)
    assert triplet_distance_sq(z, z3) == pytest.approx(4.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5, 2), elements=coords), arrays(np.float64, (3, 5, 2), elements=coords))
def test_triplet_distance_reversal_invariant(z, z2):
    d = triplet_distance_sq(z, z2)
    assert triplet_distance_sq(z, z2[:, ::-1]) == pytest.approx(d, rel=1e-12, abs=1e-9)


# ------------------------------------------------------------------- PCA

def test_pca_identical_shapes():
    s = np.tile(np.linspace(0, 1, 10)[:, None] * [1.0, 2.0], (20, 1, 1))
    basis = fit_pca(s, 3)
    np.testing.assert_allclose(basis.explained_variance, 0, atol=1e-20)
    np.testing.assert_allclose(encode(s[0], basis).eigenvalues, 0, atol=1e-12)
    np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(3), atol=1e-9)


def test_pca_rank_one(rng):
    k = 6
    base = rng.normal(size=(k, 2))
    base -= base.mean(axis=0)
    v = rng.normal(size=(k, 2))
    v -= v.mean(axis=0)
    v /= np.linalg.norm(v)
    shapes = base + rng.normal(size=(50, 1, 1)) * v
    basis = fit_pca(shapes, 1)
    assert abs(abs(basis.components[0] @ v.ravel()) - 1.0) < 1e-9


def test_pca_orthonormal_and_sorted(shapes):
    basis = fit_pca(shapes, 24)
    np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(24), atol=1e-9)
    assert np.all(np.diff(basis.explained_variance) <= 1e-9)


def test_pca_errors(rng):
    with pytest.raises(ValueError):
        fit_pca(rng.normal(size=(5, 4, 2)), 9)
    with pytest.raises(ValueError):
        fit_pca(rng.normal(size=(3, 4, 2)), 4)


def test_full_basis_round_trip(rng):
    k = 5
    shapes = rng.normal(size=(40, k, 2))
    basis = fit_pca(shapes, 2 * k)
    x = rng.normal(size=(k, 2)) * 3 + 7
    np.testing.assert_allclose(decode(encode(x, basis), basis), x, atol=1e-9)


def test_mean_shape_translated(rng):
    shapes = rng.normal(size=(40, 5, 2))
    basis = fit_pca(shapes, 4)
    x = basis.mean.reshape(-1, 2) + np.array([5.0, 7.0])
    d = encode(x, basis)
    np.testing.assert_allclose(d.eigenvalues, 0, atol=1e-12)
    np.testing.assert_allclose(d.offset, basis.mean.reshape(-1, 2).mean(axis=0) + [5, 7], atol=1e-12)


def test_encode_many_matches_single(shapes):
    basis = fit_pca(shapes, 24)
    lam, off = encode_many(shapes[:5] + 3.0, basis)
    for i in range(5):
        d = encode(shapes[i] + 3.0, basis)
        np.testing.assert_allclose(lam[i], d.eigenvalues, atol=1e-10)
        np.testing.assert_allclose(off[i], d.offset, atol=1e-12)


def test_decode_checks_dimension(shapes):
    basis = fit_pca(shapes, 4)
    with pytest.raises(ValueError):
        decode(ShapeDescriptor(np.zeros(5), np.zeros(2)), basis)
    with pytest.raises(ValueError):
        encode(np.zeros((7, 2)), basis)


def test_flip_full_basis_exact(rng):
    k = 5
    basis = fit_pca(rng.normal(size=(40, k, 2)), 2 * k)
    x = rng.normal(size=(k, 2))
    d = encode(x, basis)
    lam_f = flip_eigenvalues(d.eigenvalues, basis)
    np.testing.assert_allclose(decode(ShapeDescriptor(lam_f, d.offset), basis), reverse(x), atol=1e-9)


def test_flip_symmetric_mean_zero():
    # mean symmetric under reversal -> lambda = 0 maps to 0
    k = 5
    base = np.stack([np.linspace(-2, 2, k), np.zeros(k)], axis=1)
    rng = np.random.default_rng(0)
    shapes = np.concatenate([base + rng.normal(0, 0.1, (30, k, 2))])
    shapes = np.concatenate([shapes, shapes[:, ::-1]])
    basis = fit_pca(shapes, 4)
    np.testing.assert_allclose(flip_eigenvalues(np.zeros(4), basis), 0, atol=1e-12)


def test_flip_involution_symmetrised_basis(shapes, rng):
    basis = fit_pca(np.concatenate([shapes, shapes[:, ::-1]]), 24)
    lam = rng.normal(size=(20, 24)) * 5
    np.testing.assert_allclose(flip_eigenvalues(flip_eigenvalues(lam, basis), basis), lam, atol=1e-9)


# ------------------------------------------------------------- alignment

def test_align_triplet(shapes):
    z = np.stack([shapes[0], shapes[0] + 0.1, shapes[0] + 0.2])
    np.testing.assert_array_equal(align_triplet(z), z)
    zr = z.copy()
    zr[0] = zr[0][::-1]
    np.testing.assert_array_equal(align_triplet(zr), z)
    zb = z.copy()
    zb[0], zb[2] = zb[0][::-1], zb[2][::-1]
    out = align_triplet(zb)
    for i in (0, 2):
        assert np.sum((out[i] - out[1]) ** 2) == pytest.approx(flip_distance_sq(zb[i], zb[1]))
    np.testing.assert_array_equal(out[1], zb[1])


# ---------------------------------------------------------------- angles

def test_spline_angle_line():
    s = np.stack([np.linspace(-2, 2, 4), np.zeros(4)], axis=1)
    psi = spline_angle(s)
    np.testing.assert_allclose(psi, [np.pi, np.pi, 0, 0])


def test_spline_angle_up_and_centre():
    s = np.array([(0.0, -1.0), (0.0, 1.0)])
    np.testing.assert_allclose(spline_angle(s), [-np.pi / 2, np.pi / 2])
    with pytest.warns(RuntimeWarning):
        psi = spline_angle([(0.0, 0.0), (0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)])
    assert psi[0] == 0.0


def test_spline_angle_semicircle():
    th = np.linspace(0.0, np.pi, 41)
    psi = np.unwrap(spline_angle(np.stack([np.cos(th), np.sin(th)], axis=1)))
    # seen from the centroid (inside the arc) the angle ramps monotonically
    assert np.all(np.diff(psi) > 0)
    assert psi[-1] - psi[0] >= np.pi
