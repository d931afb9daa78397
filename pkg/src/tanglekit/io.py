"""JSON run configuration and the scene / detection / track file formats."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detect import Candidates, OracleDetectorConfig, Thresholds
from .evaluate import EvalConfig
from .synth import NoiseConfig, RenderConfig
from .track import Detection, LinkConfig, Track
from .wormsim import Scene, SceneWorm, SimConfig


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    oracle: OracleDetectorConfig = field(default_factory=OracleDetectorConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    link: LinkConfig = field(default_factory=LinkConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mm_per_px: float | None = None  # overrides sim.px_per_mm when set

    _SECTIONS = {"sim": SimConfig, "render": RenderConfig, "noise": NoiseConfig,
                 "oracle": OracleDetectorConfig, "thresholds": Thresholds, "link": LinkConfig,
                 "eval": EvalConfig}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise FormatError("config must be a JSON object")
        unknown = set(d) - set(cls._SECTIONS) - {"seed", "mm_per_px"}
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, typ in cls._SECTIONS.items():
            if name in d:
                if not isinstance(d[name], dict):
                    raise FormatError(f"config section {name!r} must be an object")
                kw[name] = typ.from_dict(d[name])
        if "seed" in d:
            if not isinstance(d["seed"], int) or d["seed"] < 0:
                raise FormatError("seed must be a non-negative integer")
            kw["seed"] = d["seed"]
        if d.get("mm_per_px") is not None:
            mpp = float(d["mm_per_px"])
            if mpp <= 0:
                raise FormatError("mm_per_px must be positive")
            kw["mm_per_px"] = mpp
            sim = kw.get("sim", SimConfig())
            kw["sim"] = SimConfig.from_dict({**sim.to_dict(), "px_per_mm": 1.0 / mpp})
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "mm_per_px": self.mm_per_px, "sim": self.sim.to_dict()}
        for name in self._SECTIONS:
            if name != "sim":
                out[name] = asdict(getattr(self, name))
        return out


def load_json(path) -> object:
    """Parse a JSON file; parse errors carry line and column."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def load_config(path) -> RunConfig:
    return RunConfig() if path is None else RunConfig.from_dict(load_json(path))


def dump_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_text(path, text: str) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise OSError(f"directory {p.parent} does not exist")
    p.write_text(text)


def _points(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def _array(obj, where: str, shape_tail=(2,)) -> np.ndarray:
    try:
        a = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: expected numeric array") from exc
    if a.ndim != 1 + len(shape_tail) or a.shape[1:] != shape_tail or not np.all(np.isfinite(a)):
        raise FormatError(f"{where}: expected finite array of shape (n, {', '.join(map(str, shape_tail))})")
    return a


def _get(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"{where}: missing field {key!r}")
    return d[key]


# ------------------------------------------------------------------- scene

def scene_to_dict(scene: Scene) -> dict:
    return {
        "size": [int(scene.size[0]), int(scene.size[1])],
        "dt": float(scene.dt),
        "mm_per_px": float(scene.mm_per_px),
        "n_frames": int(scene.n_frames),
        "worms": [
            {"id": int(w.id),
             "frames": [{"t": float(i * scene.dt), "points": _points(w.splines[i])}
                        for i in range(w.splines.shape[0])]}
            for w in scene.worms
        ],
    }


def scene_from_dict(d) -> Scene:
    size = _get(d, "size", "scene")
    if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) and v > 0 for v in size)):
        raise FormatError("scene.size: expected [H, W] positive integers")
    dt = float(_get(d, "dt", "scene"))
    mpp = float(_get(d, "mm_per_px", "scene"))
    if dt <= 0 or mpp <= 0:
        raise FormatError("scene: dt and mm_per_px must be positive")
    worms = []
    n_frames = None
    ids = set()
    for wi, w in enumerate(_get(d, "worms", "scene")):
        where = f"scene.worms[{wi}]"
        wid = _get(w, "id", where)
        if not isinstance(wid, int) or wid in ids:
            raise FormatError(f"{where}.id: expected a unique integer")
        ids.add(wid)
        frames = _get(w, "frames", where)
        sp = np.stack([_array(_get(f, "points", f"{where}.frames[{i}]"), f"{where}.frames[{i}].points")
                       for i, f in enumerate(frames)]) if frames else np.zeros((0, 2, 2))
        if n_frames is None:
            n_frames = sp.shape[0]
        if sp.shape[0] != n_frames or (worms and sp.shape[1] != worms[0].splines.shape[1]):
            raise FormatError(f"{where}: frame count or point count differs from other worms")
        worms.append(SceneWorm(id=wid, splines=sp))
    count = d.get("n_frames")
    if count is not None and (not isinstance(count, int) or count < 0 or (worms and count != n_frames)):
        raise FormatError("scene.n_frames: inconsistent with the worm frames")
    return Scene(size=(size[0], size[1]), dt=dt, mm_per_px=mpp, worms=worms,
                 frame_count=n_frames if worms else count)


# -------------------------------------------------------------- detections

def detections_to_dict(accepted: dict[int, Candidates]) -> dict:
    frames = []
    for index in sorted(accepted):
        c = accepted[index]
        frames.append({"index": int(index), "accepted": [
            {"score": float(c.scores[j]), "x0": _points(c.offsets[j, 1]),
             "past": _points(c.triplets[j, 0]), "present": _points(c.triplets[j, 1]),
             "future": _points(c.triplets[j, 2]), "latent": _points(c.latents[j])}
            for j in range(len(c))]})
    return {"frames": frames}


def detections_from_dict(d) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    for fi, fr in enumerate(_get(d, "frames", "detections")):
        where = f"detections.frames[{fi}]"
        index = _get(fr, "index", where)
        if not isinstance(index, int) or index in out:
            raise FormatError(f"{where}.index: expected a unique integer")
        dets = []
        for ai, a in enumerate(_get(fr, "accepted", where)):
            w = f"{where}.accepted[{ai}]"
            parts = [_array(_get(a, key, w), f"{w}.{key}") for key in ("past", "present", "future")]
            if len({p.shape for p in parts}) != 1:
                raise FormatError(f"{w}: past, present and future differ in point count")
            trip = np.stack(parts)
            dets.append(Detection(frame=index, triplet=trip, score=float(_get(a, "score", w))))
        out[index] = dets
    return out


# ------------------------------------------------------------------ tracks

def tracks_to_dict(tracks: list[Track]) -> dict:
    return {"tracks": [{"id": int(t.id), "frames": [int(f) for f in t.frames],
                        "splines": [_points(d.present) for d in t.detections]} for t in tracks]}


def tracks_from_dict(d) -> list[Track]:
    out = []
    for ti, t in enumerate(_get(d, "tracks", "tracks")):
        where = f"tracks[{ti}]"
        frames = _get(t, "frames", where)
        splines = _get(t, "splines", where)
        if len(frames) != len(splines):
            raise FormatError(f"{where}: frames and splines differ in length")
        if any(b != a + 1 for a, b in zip(frames, frames[1:])):
            raise FormatError(f"{where}.frames: must increase by one")
        dets = []
        for i, (f, s) in enumerate(zip(frames, splines)):
            sp = _array(s, f"{where}.splines[{i}]")
            dets.append(Detection(frame=int(f), triplet=np.stack([sp, sp, sp]), identity=int(t["id"])))
        out.append(Track(id=int(_get(t, "id", where)), frames=[int(f) for f in frames], detections=dets))
    return out
