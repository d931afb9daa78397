import numpy as np
import pytest

from tanglekit.detect import (
    PROB_EPS,
    Candidate,
    Candidates,
    OracleDetectorConfig,
    Thresholds,
    default_basis,
    default_encoder,
    latent_encode_standin,
    loss_latent,
    loss_score,
    loss_splines,
    nms_filter,
    oracle_detect,
    probability_matrix,
    same_object_probability,
    true_score,
)
from tanglekit.splines import ShapeDescriptor, encode_many, flip_distance_sq, triplet_distance_sq
from tanglekit.wormsim import Scene, SceneWorm, populate_scene


def naive_nms(scores, offsets, latents, th):
    """Literal sequential rule: sort by score (ties by index), accept, suppress."""
    alive = [i for i in sorted(range(len(scores)), key=lambda i: (-scores[i], i)) if scores[i] >= th.tau_s]
    out = []
    while alive:
        top = alive.pop(0)
        out.append(top)
        keep = []
        for j in alive:
            near = np.linalg.norm(offsets[top] - offsets[j]) <= th.sigma_l
            p = np.exp(-np.sum((latents[top] - latents[j]) ** 2)) if near else 0.0
            if not p > th.tau_o:
                keep.append(j)
        alive = keep
    return out


def make_candidates(rng, n, dim=3, spread=1.0):
    trip = rng.normal(size=(n, 3, 5, 2))
    offsets = rng.uniform(0, 60, size=(n, 3, 2))
    return Candidates(trip, np.zeros((n, 3, 4)), offsets, rng.uniform(0, 1, n),
                      rng.normal(0, spread, size=(n, dim)))


# ----------------------------------------------------------------- scores

def test_true_score_examples(rng):
    z = rng.normal(size=(3, 5, 2))
    assert true_score(z, z, 5.0) == 1.0
    shift = z + np.array([1.0, 0.0]) * 2.0 / np.sqrt(5)  # d_s^2 = 4 -> d_s = 2
    assert true_score(z, shift, 2.0) == pytest.approx(np.exp(-1))
    assert true_score(z, shift, 2.0 / 3) == pytest.approx(np.exp(-9))
    with pytest.raises(ValueError):
        true_score(z, z, 0.0)


def _cand(latent, offset):
    d = ShapeDescriptor(np.zeros(2), np.asarray(offset, float))
    return Candidate(np.zeros((3, 2, 2)), (d, d, d), 1.0, np.asarray(latent, float))


def test_same_object_probability_examples():
    assert same_object_probability(_cand([1, 2], [0, 0]), _cand([1, 2], [0, 0]), 48) == 1.0
    assert same_object_probability(_cand([1, 2], [0, 0]), _cand([1, 2], [49, 0]), 48) == 0.0
    p = same_object_probability(_cand([0, 0], [0, 0]), _cand([np.sqrt(np.log(2)), 0], [3, 4]), 48)
    assert p == pytest.approx(0.5)


def test_probability_matrix_matches_pairwise(rng):
    c = make_candidates(rng, 6)
    P = probability_matrix(c.latents, c.present_offsets, 30.0)
    for i in range(6):
        for j in range(6):
            assert P[i, j] == pytest.approx(same_object_probability(c[i], c[j], 30.0))


def test_thresholds():
    assert Thresholds(tau_o=0.5).r_l == pytest.approx(np.sqrt(np.log(2)))
    with pytest.raises(ValueError):
        Thresholds(tau_s=1.0)
    with pytest.raises(ValueError):
        Thresholds.from_dict({"tau": 0.3})


# ------------------------------------------------------------ latent map

def test_latent_flip_invariant(rng):
    basis = default_basis()
    shapes = populate_scene(1.0, (128, 128), 3, 0.05, seed=2).worms[0].splines
    lam, off = encode_many(shapes, basis)
    desc = [ShapeDescriptor(lam[i], off[i]) for i in range(3)]
    lam_r, off_r = encode_many(shapes[:, ::-1], basis)
    desc_r = [ShapeDescriptor(lam_r[i], off_r[i]) for i in range(3)]
    a = latent_encode_standin(desc, basis, seed=3)
    b = latent_encode_standin(desc_r, basis, seed=3)
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_array_equal(a, latent_encode_standin(desc, basis, seed=3))
    assert not np.allclose(a, latent_encode_standin(desc, basis, seed=4))


def test_latent_distance_grows_with_offset():
    enc = default_encoder()
    shapes = populate_scene(1.0, (128, 128), 3, 0.05, seed=2).worms[0].splines
    lam, off = encode_many(shapes, enc.basis)
    base = enc(lam, off)
    dists = [np.linalg.norm(enc(lam, off + [d, 0.0]) - base) for d in np.linspace(0, 48, 25)]
    assert np.all(np.diff(dists) > 0)


# ------------------------------------------------------------------- NMS

def test_nms_trivial(rng):
    th = Thresholds()
    c = make_candidates(rng, 5)
    c.scores[:] = 0.1
    assert len(nms_filter(c, th)) == 0
    one = make_candidates(rng, 1)
    one.scores[:] = 0.9
    assert len(nms_filter(one, th)) == 1
    assert nms_filter([], th) == []


@pytest.mark.parametrize("seed", range(50))
def test_nms_matches_naive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    c = make_candidates(rng, n, spread=0.6)
    th = Thresholds(tau_s=float(rng.uniform(0.05, 0.6)), tau_o=float(rng.uniform(0.1, 0.9)), sigma_l=30.0)
    got = nms_filter(c, th)
    ref = naive_nms(c.scores, c.present_offsets, c.latents, th)
    np.testing.assert_array_equal(got.scores, c.scores[ref])
    P = probability_matrix(got.latents, got.present_offsets, th.sigma_l)
    assert np.all(P[~np.eye(len(got), dtype=bool)] <= th.tau_o)


def test_nms_list_input(rng):
    c = make_candidates(rng, 8, spread=0.5)
    th = Thresholds(tau_s=0.2)
    as_list = nms_filter([c[i] for i in range(len(c))], th)
    arr = nms_filter(c, th)
    assert [x.score for x in as_list] == list(arr.scores)


def test_nms_permutation_invariant(rng):
    c = make_candidates(rng, 12, spread=0.4)
    th = Thresholds(tau_s=0.1)
    perm = rng.permutation(12)
    a = nms_filter(c, th)
    b = nms_filter(c[perm], th)
    np.testing.assert_array_equal(np.sort(a.scores), np.sort(b.scores))


# ---------------------------------------------------------------- losses

def test_loss_splines(rng):
    labels = rng.normal(size=(4, 3, 5, 2))
    assert loss_splines(labels[::-1], labels) == 0
    lab = labels[:1]
    p1 = lab + np.array([1.0, 0]) / np.sqrt(5)
    p2 = lab + np.array([2.0, 0]) / np.sqrt(5)
    assert loss_splines(np.concatenate([p1, p2]), lab) == pytest.approx(1.0)
    assert loss_splines(labels, labels, visible_mask=np.zeros(4, bool)) == 0
    preds = rng.normal(size=(6, 3, 5, 2))
    ref = np.mean([min(triplet_distance_sq(p, l) for p in preds) for l in labels])
    assert loss_splines(preds, labels) == pytest.approx(ref, abs=1e-12)


def test_loss_score(rng):
    labels = rng.normal(size=(3, 3, 5, 2))
    preds = labels + rng.normal(0, 0.5, size=labels.shape)
    target = [max(true_score(p, l, 5.0) for l in labels) for p in preds]
    assert loss_score(target, preds, labels, 5.0) == pytest.approx(0, abs=1e-15)
    assert loss_score([0.0], labels[:1], labels[:1], 5.0) == 1.0
    s = rng.uniform(size=3)
    assert loss_score(s, preds, labels, 5.0) == pytest.approx(np.mean((np.array(target) - s) ** 2), abs=1e-12)
    assert loss_score([0.3], preds[:1], np.zeros((0, 3, 5, 2)), 5.0) == pytest.approx(0.09)


def _lat_cands(trips, latents):
    n = len(trips)
    offsets = np.asarray(trips).mean(axis=2)
    return Candidates(np.asarray(trips, float), np.zeros((n, 3, 2)), offsets, np.ones(n),
                      np.asarray(latents, float))


def test_loss_latent_examples(rng):
    lab = rng.normal(size=(2, 3, 5, 2)) + np.array([[[[0, 0]]], [[[10, 0]]]])
    same = _lat_cands([lab[0], lab[0]], [[0, 0], [0, 0]])
    assert loss_latent(same, lab, 5.0, 48.0) == pytest.approx(0.0, abs=1e-6)
    diff = _lat_cands([lab[0], lab[1]], [[0, 0], [0, 0]])
    assert loss_latent(diff, lab, 5.0, 48.0) == pytest.approx(-np.log(PROB_EPS), rel=1e-6)


def test_loss_latent_reference(rng):
    lab = rng.normal(size=(3, 3, 5, 2)) * 3 + rng.uniform(0, 40, size=(3, 1, 1, 2))
    trips = lab[rng.integers(0, 3, 7)] + rng.normal(0, 0.8, size=(7, 3, 5, 2))
    c = _lat_cands(trips, rng.normal(size=(7, 4)))
    num = den = 0.0
    for i in range(7):
        for j in range(i + 1, 7):
            if np.linalg.norm(c.offsets[i, 1] - c.offsets[j, 1]) > 20.0:
                continue
            di = [triplet_distance_sq(c.triplets[i], l) for l in lab]
            dj = [triplet_distance_sq(c.triplets[j], l) for l in lab]
            si, sj = np.exp(-min(di) / 25), np.exp(-min(dj) / 25)
            t = float(np.argmin(di) == np.argmin(dj))
            p = np.clip(np.exp(-np.sum((c.latents[i] - c.latents[j]) ** 2)), PROB_EPS, 1 - PROB_EPS)
            num += si * sj * (t * np.log(p) + (1 - t) * np.log(1 - p))
            den += si * sj
    assert loss_latent(c, lab, 5.0, 20.0) == pytest.approx(-num / den, rel=1e-10)
    assert loss_latent(c, lab, 5.0, 20.0) >= 0


# ---------------------------------------------------------------- oracle

@pytest.fixture(scope="module")
def scene():
    return populate_scene(0.5, (256, 256), 5, 0.05, seed=11)


def test_oracle_perfect(scene):
    cfg = OracleDetectorConfig(sigma_pert=0.0, score_noise=0.0, latent_spread=0.0)
    c = oracle_detect(scene, 2, cfg, rng=np.random.default_rng(0))
    n = len(scene.worms)
    assert len(c) == n * cfg.candidates_per_worm
    assert np.all(c.scores == 1.0)
    truth = np.stack([w.splines[1:4] for w in scene.worms])
    for j in range(len(c)):
        assert triplet_distance_sq(c.triplets[j], truth[c.labels[j]]) == 0.0


def test_oracle_perfect_nms_one_per_worm():
    # well separated worms
    line = np.stack([np.linspace(0, 40, 49), np.zeros(49)], 1)
    worms = [SceneWorm(i, np.stack([line + [20 + 80 * (i % 3), 30 + 80 * (i // 3)]] * 3)) for i in range(6)]
    sc = Scene(size=(256, 256), dt=0.05, mm_per_px=0.025, worms=worms)
    cfg = OracleDetectorConfig(sigma_pert=0.0, score_noise=0.0, latent_spread=0.0)
    acc = nms_filter(oracle_detect(sc, 1, cfg, rng=np.random.default_rng(0)), Thresholds())
    assert len(acc) == 6
    for j in range(6):
        assert min(flip_distance_sq(acc.triplets[j, 1], w.splines[1]) for w in worms) == 0.0


def test_oracle_miss_all_and_spurious(scene):
    cfg = OracleDetectorConfig(miss_prob=1.0, spurious_rate=2.0)
    c = oracle_detect(scene, 2, cfg, rng=np.random.default_rng(1))
    assert len(c) > 0 and np.all(c.labels == -1)
    assert np.all(c.scores <= cfg.spurious_score_max)


def test_oracle_errors_and_determinism(scene):
    with pytest.raises(ValueError):
        oracle_detect(scene, 0)
    with pytest.raises(ValueError):
        oracle_detect(scene, scene.n_frames - 1)
    a = oracle_detect(scene, 2, rng=np.random.default_rng(3))
    b = oracle_detect(scene, 2, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a.triplets, b.triplets)
    np.testing.assert_array_equal(a.latents, b.latents)
    with pytest.raises(ValueError):
        OracleDetectorConfig(miss_prob=1.5)
