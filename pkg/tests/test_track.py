import numpy as np
import pytest

from tanglekit.track import (
    Detection,
    LinkConfig,
    Track,
    Tracker,
    build_tracks,
    com_speed,
    directed_cost,
    fix_stubs,
    gated_costs,
    link_frames,
    plain_cost,
    solve_gated,
)

K = 9


def worm(x, y, theta=0.0, length=20.0):
    s = np.linspace(-length / 2, length / 2, K)
    return np.stack([x + s * np.cos(theta), y + s * np.sin(theta)], axis=1)


def det(frame, x, y, vx=0.0, vy=0.0, theta=0.0):
    trip = np.stack([worm(x - vx, y - vy, theta), worm(x, y, theta), worm(x + vx, y + vy, theta)])
    return Detection(frame, trip)


def brute_force(n, m, cost, slack):
    """Minimum over every partial injection rows -> cols, by DP over used-column masks."""
    best = {0: 0.0}
    for i in range(n):
        nxt = {}
        for mask, c in best.items():
            cand = [(mask, c + slack)]  # row i dies
            for j in range(m):
                if not mask >> j & 1 and np.isfinite(cost[i, j]):
                    cand.append((mask | 1 << j, c + cost[i, j]))
            for mk, v in cand:
                if v < nxt.get(mk, np.inf):
                    nxt[mk] = v
        best = nxt
    return min(c + slack * (m - bin(mask).count("1")) for mask, c in best.items())


# ------------------------------------------------------------------ costs

def test_directed_cost_stationary_zero():
    a, b = det(0, 10, 10), det(1, 10, 10)
    assert directed_cost(a, b) == 0.0


def test_directed_cost_flip_invariant(rng):
    a = Detection(0, rng.normal(size=(3, K, 2)))
    b = Detection(1, rng.normal(size=(3, K, 2)))
    ar = Detection(0, a.triplet[:, ::-1])
    assert directed_cost(ar, b) == pytest.approx(directed_cost(a, b))
    assert directed_cost(a, Detection(1, b.triplet[:, ::-1])) == pytest.approx(directed_cost(a, b))


def test_directed_cost_k_mismatch():
    with pytest.raises(ValueError):
        directed_cost(Detection(0, np.zeros((3, 5, 2))), Detection(1, np.zeros((3, 6, 2))))


def crossing_fixture():
    """Two worms meet at t+1: identical present splines, different past splines."""
    meet = worm(20, 20, np.pi / 4)
    pa, pb = worm(16, 20, np.pi / 4), worm(24, 20, np.pi / 4)
    a = Detection(0, np.stack([worm(12, 20, np.pi / 4), pa, meet]))
    b = Detection(0, np.stack([worm(28, 20, np.pi / 4), pb, meet]))
    a1 = Detection(1, np.stack([pa, meet, worm(24, 20, np.pi / 4)]))
    b1 = Detection(1, np.stack([pb, meet, worm(16, 20, np.pi / 4)]))
    return [a, b], [b1, a1]  # next frame listed in swapped order


def test_crossing_directed_vs_plain():
    prev, nxt = crossing_fixture()
    # plain distance cannot tell the two assignments apart
    straight = plain_cost(prev[0], nxt[1]) + plain_cost(prev[1], nxt[0])
    swapped = plain_cost(prev[0], nxt[0]) + plain_cost(prev[1], nxt[1])
    assert straight == pytest.approx(swapped)
    res = link_frames(prev, nxt, LinkConfig())
    assert res.matches == [(0, 1), (1, 0)]
    assert res.total_cost == pytest.approx(0.0)
    # brute force over both assignments confirms the directed choice
    d_ok = directed_cost(prev[0], nxt[1]) + directed_cost(prev[1], nxt[0])
    d_bad = directed_cost(prev[0], nxt[0]) + directed_cost(prev[1], nxt[1])
    assert d_ok < d_bad


# --------------------------------------------------------------- linking

def test_link_identity_zero_motion():
    dets = [det(0, 20 * i, 5) for i in range(5)]
    nxt = [det(1, 20 * i, 5) for i in range(5)]
    res = link_frames(dets, nxt)
    assert res.matches == [(i, i) for i in range(5)] and res.total_cost == 0
    assert res.births == [] and res.deaths == []


def test_link_gated_single():
    res = link_frames([det(0, 0, 0)], [det(1, 100, 0)])
    assert res.matches == [] and res.deaths == [0] and res.births == [0]
    assert link_frames([], []).total_cost == 0
    empty = link_frames([det(0, 0, 0)], [])
    assert empty.deaths == [0]


@pytest.mark.parametrize("seed", range(60))
def test_lap_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(0, 8, size=2)
    slack = float(rng.uniform(0.5, 3.0))
    cost = rng.uniform(0, 4, size=(n, m))
    cost[rng.random((n, m)) < 0.3] = np.inf
    rows, cols = np.nonzero(np.isfinite(cost))
    res = solve_gated(n, m, rows, cols, cost[rows, cols], slack)
    assert res.total_cost == pytest.approx(brute_force(n, m, cost, slack), abs=1e-9)
    assert len({j for _, j in res.matches}) == len(res.matches)
    assert all(np.isfinite(cost[i, j]) for i, j in res.matches)


def test_link_gating_soundness(rng):
    a = [det(0, *rng.uniform(0, 60, 2)) for _ in range(7)]
    b = [det(1, *rng.uniform(0, 60, 2)) for _ in range(7)]
    cfg = LinkConfig(gate_radius=10.0)
    res = link_frames(a, b, cfg)
    for i, j in res.matches:
        assert np.linalg.norm(a[i].midpoint - b[j].midpoint) <= cfg.gate_radius
    rows, cols, costs = gated_costs(np.stack([d.triplet for d in a]), np.stack([d.triplet for d in b]), cfg)
    full = np.full((7, 7), np.inf)
    full[rows, cols] = costs
    assert res.total_cost == pytest.approx(brute_force(7, 7, full, cfg.slack))


def test_link_config_validation():
    with pytest.raises(ValueError):
        LinkConfig(gate_radius=0)
    with pytest.raises(ValueError):
        LinkConfig(birth_death_cost=-1)
    with pytest.raises(ValueError):
        LinkConfig(metric="euclid")
    assert LinkConfig().slack == 225.0


# ---------------------------------------------------------------- tracks

def test_build_one_worm():
    frames = {t: [det(t, 10 + t, 10, vx=1.0)] for t in range(12)}
    tracks = build_tracks(frames)
    assert len(tracks) == 1 and tracks[0].frames == list(range(12))


def test_build_gap_gives_two_tracks():
    frames = {t: ([det(t, 10, 10)] if t != 5 else []) for t in range(10)}
    tracks = build_tracks(frames)
    assert len(tracks) == 2
    assert tracks[0].frames == [0, 1, 2, 3, 4] and tracks[1].frames == [6, 7, 8, 9]


def test_build_separated_worms():
    frames = {t: [det(t, 40 * i, 10) for i in range(6)] for t in range(8)}
    tracks = build_tracks(frames)
    assert len(tracks) == 6
    for tr in tracks:
        assert len({d.midpoint.tobytes() for d in tr.detections}) == 1


def test_tracker_streaming_order():
    tr = Tracker()
    tr.update(0, [det(0, 0, 0)])
    with pytest.raises(ValueError):
        tr.update(0, [])
    with pytest.raises(ValueError):
        Track(0, [1], [det(1, 0, 0)]).append(det(3, 0, 0))


def test_fix_stubs_unchanged_and_removed():
    long = [det(t, 10, 10) for t in range(8)]
    tracks = build_tracks({t: [long[t]] for t in range(8)})
    out = fix_stubs(tracks, LinkConfig(min_track_length=3))
    assert len(out) == 1 and out[0].frames == tracks[0].frames
    frames = {t: [det(t, 10, 10)] + ([det(t, 200, 200)] if t == 3 else []) for t in range(8)}
    out = fix_stubs(build_tracks(frames), LinkConfig(min_track_length=3))
    assert len(out) == 1 and len(out[0]) == 8


def test_fix_stubs_merges_split_link():
    dets = [det(t, 10 + t, 10, vx=1.0) for t in range(10)]
    a = Track(0)
    b = Track(1)
    for d in dets[:5]:
        a.append(d)
    for d in dets[5:]:
        b.append(d)
    out = fix_stubs([a, b], LinkConfig(min_track_length=3))
    assert len(out) == 1 and out[0].frames == list(range(10))


def test_fix_stubs_bridges_one_missed_frame():
    frames = {t: ([det(t, 10 + t, 10, vx=1.0)] if t != 6 else []) for t in range(12)}
    out = fix_stubs(build_tracks(frames), LinkConfig(min_track_length=3))
    assert len(out) == 1 and out[0].frames == list(range(12))
    filled = out[0].detections[6]
    assert filled.interpolated and filled.score == 0.0
    np.testing.assert_allclose(filled.present, worm(16, 10), atol=1e-12)
    strict = fix_stubs(build_tracks(frames), LinkConfig(min_track_length=3, max_gap=1))
    assert [t.frames for t in strict] == [list(range(6)), list(range(7, 12))]
    with pytest.raises(ValueError):
        LinkConfig(max_gap=3)


def test_fix_stubs_ambiguous_not_merged():
    # two fragments could continue the same ending track: leave them apart
    a = Track(0)
    for t in range(5):
        a.append(det(t, 10, 10))
    b, c = Track(1), Track(2)
    for t in range(5, 10):
        b.append(det(t, 10, 10))
        c.append(det(t, 11, 10))
    out = fix_stubs([a, b, c], LinkConfig(min_track_length=3))
    assert len(out) == 3


# ----------------------------------------------------------------- speed

def test_com_speed():
    still = build_tracks({t: [det(t, 5, 5)] for t in range(5)})[0]
    np.testing.assert_array_equal(com_speed(still, 0.1, 0.025), 0.0)
    moving = build_tracks({t: [det(t, 5 + 3 * t, 5 + 4 * t, vx=3, vy=4)] for t in range(5)})[0]
    np.testing.assert_allclose(com_speed(moving, 0.1, 0.025), 5 / 0.1 * 0.025)
    with pytest.raises(ValueError):
        com_speed(Track(0, [0], [det(0, 0, 0)]), 0.1, 0.025)


def test_speed_standard_error_scaling():
    rng = np.random.default_rng(0)
    sizes = np.array([4, 8, 16, 32, 64, 128, 256])
    se = []
    for n in sizes:
        reps = []
        for _ in range(40):
            means = []
            for _ in range(n):
                v = rng.uniform(0.5, 2.0)
                theta = rng.uniform(0, 2 * np.pi)
                pts = np.cumsum(np.tile([v * np.cos(theta), v * np.sin(theta)], (6, 1)), axis=0)
                pts += rng.normal(0, 0.2, pts.shape)
                tr = Track(0)
                for t, p in enumerate(pts):
                    tr.append(det(t, *p))
                means.append(com_speed(tr, 0.05, 0.025).mean())
            reps.append(np.std(means, ddof=1) / np.sqrt(n))
        se.append(np.mean(reps))
    slope = np.polyfit(np.log(sizes), np.log(se), 1)[0]
    assert abs(slope + 0.5) < 0.1
