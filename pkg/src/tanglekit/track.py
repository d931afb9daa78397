"""Frame-to-frame identity linking with the directed past/future spline cost.

Linking between consecutive frames is a gated rectangular assignment problem
with birth/death slack; tracks are chained from it and then repaired.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .splines import centroid, flip_distance_sq, flip_distance_sq_many, reverse

METRICS = ("directed", "plain")


@dataclass
class Detection:
    frame: int
    triplet: np.ndarray  # (3, k, 2)
    score: float = 1.0
    identity: int | None = None
    interpolated: bool = False

    @property
    def past(self) -> np.ndarray:
        return self.triplet[0]

    @property
    def present(self) -> np.ndarray:
        return self.triplet[1]

    @property
    def future(self) -> np.ndarray:
        return self.triplet[2]

    @property
    def midpoint(self) -> np.ndarray:
        return self.triplet[1, self.triplet.shape[1] // 2]


@dataclass(frozen=True)
class LinkConfig:
    gate_radius: float = 15.0
    birth_death_cost: float | None = None  # defaults to gate_radius ** 2
    min_track_length: int = 5
    metric: str = "directed"
    max_gap: int = 2  # fix_stubs joins across 1 (adjacent) or 2 (one missed frame)

    def __post_init__(self):
        if self.gate_radius <= 0:
            raise ValueError("gate_radius must be positive")
        if self.birth_death_cost is not None and self.birth_death_cost <= 0:
            raise ValueError("birth_death_cost must be positive")
        if self.max_gap not in (1, 2):
            raise ValueError("max_gap must be 1 or 2")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    @property
    def slack(self) -> float:
        return self.gate_radius**2 if self.birth_death_cost is None else self.birth_death_cost

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown LinkConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Track:
    id: int
    frames: list[int] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def start(self) -> int:
        return self.frames[0]

    @property
    def end(self) -> int:
        return self.frames[-1]

    def append(self, det: Detection) -> None:
        if self.frames and det.frame != self.frames[-1] + 1:
            raise ValueError("track frames must increase by exactly one")
        det.identity = self.id
        self.frames.append(det.frame)
        self.detections.append(det)


@dataclass
class LinkResult:
    matches: list[tuple[int, int]]
    deaths: list[int]
    births: list[int]
    total_cost: float


def directed_cost(d_t: Detection, d_next: Detection) -> float:
    """Present-vs-past plus future-vs-present flip distance across one frame step."""
    return flip_distance_sq(d_t.present, d_next.past) + flip_distance_sq(d_t.future, d_next.present)


def plain_cost(d_t: Detection, d_next: Detection) -> float:
    return flip_distance_sq(d_t.present, d_next.present)


def _pair_costs(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Costs for aligned triplet arrays ``a[i] -> b[i]`` (both ``(n, 3, k, 2)``)."""
    if metric == "directed":
        return flip_distance_sq_many(a[:, 1], b[:, 0]) + flip_distance_sq_many(a[:, 2], b[:, 1])
    return flip_distance_sq_many(a[:, 1], b[:, 1])


def _stack(dets: list[Detection]) -> np.ndarray:
    return np.stack([d.triplet for d in dets]) if dets else np.zeros((0, 3, 2, 2))


def gated_costs(trip_t: np.ndarray, trip_next: np.ndarray, config: LinkConfig):
    """Sparse cost entries ``(rows, cols, costs)`` for pairs inside the midpoint gate."""
    if len(trip_t) == 0 or len(trip_next) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    mid = trip_t.shape[2] // 2
    ma, mb = trip_t[:, 1, mid], trip_next[:, 1, mid]
    d = np.linalg.norm(ma[:, None, :] - mb[None, :, :], axis=-1)
    rows, cols = np.nonzero(d <= config.gate_radius)
    return rows, cols, _pair_costs(trip_t[rows], trip_next[cols], config.metric)


def solve_gated(n: int, m: int, rows, cols, costs, slack: float) -> LinkResult:
    """Minimum-cost partial matching with per-node birth/death slack.

    The gating graph is split into connected components, each solved exactly
    as an augmented square assignment problem.
    """
    if n == 0 or m == 0 or len(rows) == 0:
        return LinkResult([], list(range(n)), list(range(m)), slack * (n + m))
    graph = coo_matrix((np.ones(len(rows)), (rows, cols + n)), shape=(n + m, n + m))
    n_comp, label = connected_components(graph, directed=False)
    matches = []
    edge_comp = label[rows]
    order = np.argsort(edge_comp, kind="stable")
    bounds = np.searchsorted(edge_comp[order], np.arange(n_comp + 1))
    for c in range(n_comp):
        sel = order[bounds[c]:bounds[c + 1]]
        if sel.size == 0:
            continue
        r_nodes = np.unique(rows[sel])
        c_nodes = np.unique(cols[sel])
        if r_nodes.size == 1 and c_nodes.size == 1:
            if costs[sel[0]] < 2.0 * slack:
                matches.append((int(r_nodes[0]), int(c_nodes[0])))
            continue
        a, b = r_nodes.size, c_nodes.size
        big = np.full((a + b, b + a), np.inf)
        big[np.searchsorted(r_nodes, rows[sel]), np.searchsorted(c_nodes, cols[sel])] = costs[sel]
        big[np.arange(a), b + np.arange(a)] = slack  # death
        big[a + np.arange(b), np.arange(b)] = slack  # birth
        big[a:, b:] = 0.0
        ri, ci = linear_sum_assignment(big)
        for i, j in zip(ri, ci):
            if i < a and j < b:
                matches.append((int(r_nodes[i]), int(c_nodes[j])))
    matches.sort()
    cost_of = {(int(r), int(c)): float(v) for r, c, v in zip(rows, cols, costs)}
    mr = {i for i, _ in matches}
    mc = {j for _, j in matches}
    deaths = [i for i in range(n) if i not in mr]
    births = [j for j in range(m) if j not in mc]
    total = sum(cost_of[p] for p in matches) + slack * (len(deaths) + len(births))
    return LinkResult(matches, deaths, births, total)


def link_frames(dets_t: list[Detection], dets_next: list[Detection], config: LinkConfig = LinkConfig()) -> LinkResult:
    """Optimal gated assignment between detections of consecutive frames."""
    rows, cols, costs = gated_costs(_stack(dets_t), _stack(dets_next), config)
    return solve_gated(len(dets_t), len(dets_next), rows, cols, costs, config.slack)


class Tracker:
    """Incremental linker; feed frames in order with :meth:`update`.

    A skipped frame index closes every open track.
    """

    def __init__(self, config: LinkConfig = LinkConfig()):
        self.config = config
        self.tracks: list[Track] = []
        self._open: list[Track] = []
        self._last_frame: int | None = None

    def _new(self, det: Detection) -> Track:
        tr = Track(id=len(self.tracks))
        tr.append(det)
        self.tracks.append(tr)
        return tr

    def update(self, frame: int, detections: list[Detection]) -> LinkResult | None:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError("frames must be fed in increasing order")
        for d in detections:
            d.frame = frame
        result = None
        if self._last_frame is None or frame != self._last_frame + 1 or not self._open:
            opened = [self._new(d) for d in detections]
        else:
            prev = [tr.detections[-1] for tr in self._open]
            result = link_frames(prev, detections, self.config)
            opened = [None] * len(detections)
            for i, j in result.matches:
                self._open[i].append(detections[j])
                opened[j] = self._open[i]
            for j in result.births:
                opened[j] = self._new(detections[j])
        self._open = opened
        self._last_frame = frame
        return result


def build_tracks(frames, config: LinkConfig = LinkConfig()) -> list[Track]:
    """Chain ``link_frames`` over ``frames``: a mapping or sequence of ``(index, detections)``."""
    items = sorted(frames.items()) if isinstance(frames, dict) else list(frames)
    tracker = Tracker(config)
    for index, dets in items:
        tracker.update(index, dets)
    return tracker.tracks


def _join_cost(a: Detection, b: Detection, gap: int, metric: str) -> float:
    if gap == 1:
        return directed_cost(a, b) if metric == "directed" else plain_cost(a, b)
    # one missing frame: both ends predict the skipped frame
    if metric == "directed":
        return 2.0 * flip_distance_sq(a.future, b.past)
    return flip_distance_sq(a.present, b.present)


def _oriented(ref: np.ndarray, x: np.ndarray) -> np.ndarray:
    r = reverse(x)
    return r if np.sum((r - ref) ** 2) < np.sum((x - ref) ** 2) else x


def gap_filler(a: Detection, b: Detection) -> Detection:
    """Stand-in detection for the frame between ``a`` and ``b`` (two frames apart).

    Its present spline averages the two predictions of that frame
    (``a.future`` and ``b.past``); it is flagged as interpolated with score 0.
    """
    mid = 0.5 * (a.future + _oriented(a.future, b.past))
    trip = np.stack([_oriented(mid, a.present), mid, _oriented(mid, b.present)])
    return Detection(frame=a.frame + 1, triplet=trip, score=0.0, interpolated=True)


def fix_stubs(tracks: list[Track], config: LinkConfig = LinkConfig()) -> list[Track]:
    """Merge unambiguous fragments, then drop tracks shorter than ``min_track_length``.

    A track ending at frame ``t`` is joined to a track starting at ``t + 1``
    (a dropped link) or, with ``max_gap = 2``, ``t + 2`` (one missed
    detection, filled by :func:`gap_filler`) when that pair is the only admissible partner for both
    ends. Admissible means the midpoints are within the gate (doubled across a
    gap) and the join cost is below the cost of a birth plus a death.
    """
    tracks = [Track(t.id, list(t.frames), list(t.detections)) for t in tracks if len(t)]
    limit = 2.0 * config.slack
    starts: dict[int, list[Track]] = {}
    for tr in tracks:
        starts.setdefault(tr.start, []).append(tr)
    partners: dict[int, list[tuple[Track, int]]] = {}
    claimed: dict[int, int] = {}
    for tr in tracks:
        last = tr.detections[-1]
        for gap in range(1, config.max_gap + 1):
            for cand in starts.get(tr.end + gap, []):
                first = cand.detections[0]
                if np.linalg.norm(last.midpoint - first.midpoint) > gap * config.gate_radius:
                    continue
                if _join_cost(last, first, gap, config.metric) < limit:
                    partners.setdefault(tr.id, []).append((cand, gap))
                    claimed[cand.id] = claimed.get(cand.id, 0) + 1
    by_id = {tr.id: tr for tr in tracks}
    merged_into: dict[int, int] = {}
    for tr in sorted(tracks, key=lambda t: t.start):
        cands = partners.get(tr.id, [])
        if len(cands) != 1 or claimed[cands[0][0].id] != 1:
            continue
        nxt, gap = cands[0]
        head = by_id[merged_into.get(tr.id, tr.id)]
        if gap == 2:
            fill = gap_filler(head.detections[-1], nxt.detections[0])
            head.frames.append(fill.frame)
            head.detections.append(fill)
        head.frames.extend(nxt.frames)
        head.detections.extend(nxt.detections)
        merged_into[nxt.id] = head.id
    out = []
    for tr in tracks:
        if tr.id in merged_into:
            continue
        if len(tr) >= config.min_track_length:
            for d in tr.detections:
                d.identity = tr.id
            out.append(tr)
    return out


def com_speed(track: Track, dt: float, mm_per_px: float) -> np.ndarray:
    """Centre-of-mass speed (mm/s) between consecutive track entries."""
    if len(track) < 2:
        raise ValueError("track needs at least two entries")
    c = np.stack([centroid(d.present) for d in track.detections])
    steps = np.diff(np.asarray(track.frames))
    return np.linalg.norm(np.diff(c, axis=0), axis=1) / (steps * dt) * mm_per_px
