"""Item streams (guillotine-cut and real-world-like), dataset files and trajectory logs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ems import GripperSpec, Pick
from .env import EnvConfig, EpisodeResult, Transition
from .geometry import ItemSpec, Pose
from .stability import PhysicsParams

CUT_DENSITY = 1.5e-4  # kg per cm^3
LOG_FORMAT = "stablepack-tlog"
LOG_VERSION = 1
DATASET_VERSION = 1


class UnsatisfiableBounds(ValueError):
    pass


class LogError(Exception):
    pass


class IoFailure(LogError):
    pass


class VersionMismatch(LogError):
    pass


class CorruptRecord(LogError):
    def __init__(self, path, lineno: int, why: str):
        super().__init__(f"{path}:{lineno}: {why}")
        self.lineno = lineno


# --- guillotine-cut streams ----------------------------------------------------

def _splittable(length: int, lo: int, hi: int) -> bool:
    """Can `length` be written as a sum of integer parts each in [lo, hi]?"""
    k_min = -(-length // hi)
    return k_min * lo <= length


def _split_points(length: int, lo: int, hi: int) -> list[int]:
    return [s for s in range(lo, length - lo + 1) if _splittable(s, lo, hi) and _splittable(length - s, lo, hi)]


@dataclass(frozen=True)
class CutPiece:
    item: ItemSpec
    pose: Pose


def gen_cut_dataset(container: Sequence[int], min_side: int, max_side: int, seed=None) -> list[CutPiece]:
    """Guillotine-cut `container` into pieces with every side in [min_side, max_side].

    Axis and cut point are uniform over the cuts that keep both halves
    completable. Pieces come out ordered by (z, y, x) of their ground-truth
    position, so replaying them in order never places an item before its
    supports.
    """
    if min_side > max_side:
        raise ValueError("min_side must not exceed max_side")
    dims = [int(d) for d in container]
    if any(not _splittable(d, min_side, max_side) for d in dims):
        raise UnsatisfiableBounds(f"container {dims} cannot be cut into sides within [{min_side}, {max_side}]")
    rng = np.random.default_rng(seed)
    todo = [((0, 0, 0), tuple(dims))]
    done = []
    while todo:
        pos, size = todo.pop()
        if all(min_side <= s <= max_side for s in size):
            done.append((pos, size))
            continue
        options = [(a, p) for a in range(3) for p in _split_points(size[a], min_side, max_side)]
        axes = sorted({a for a, _ in options})
        axis = axes[int(rng.integers(len(axes)))]
        points = [p for a, p in options if a == axis]
        cut = points[int(rng.integers(len(points)))]
        lo_size = list(size)
        lo_size[axis] = cut
        hi_size = list(size)
        hi_size[axis] = size[axis] - cut
        hi_pos = list(pos)
        hi_pos[axis] += cut
        todo.append((tuple(hi_pos), tuple(hi_size)))
        todo.append((pos, tuple(lo_size)))
    done.sort(key=lambda ps: (ps[0][2], ps[0][1], ps[0][0]))
    out = []
    for k, (pos, size) in enumerate(done):
        vol = size[0] * size[1] * size[2]
        item = ItemSpec(float(size[0]), float(size[1]), float(size[2]), round(vol * CUT_DENSITY, 4), k)
        out.append(CutPiece(item, Pose(float(pos[0]), float(pos[1]), float(pos[2]))))
    return out


@dataclass(frozen=True)
class CutDataset:
    """Fresh guillotine-cut stream per episode seed."""

    container: tuple[int, int, int] = (50, 50, 50)
    min_side: int = 10
    max_side: int = 25
    name: str = "cut"

    def episode_items(self, seed) -> list[ItemSpec]:
        return [p.item for p in gen_cut_dataset(self.container, self.min_side, self.max_side, seed)]


# --- real-world-like streams -----------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "realworld"
    container: tuple[float, float, float] = (80.0, 60.0, 60.0)
    min_side: float = 5.0
    max_side: float = 40.0
    max_weight: float = 10.0
    count: int = 200
    seed: int = 0
    median_side: float = 18.0
    side_sigma: float = 0.5
    density: float = CUT_DENSITY
    density_jitter: float = 0.5


def gen_realworld_like(spec: DatasetSpec, seed=None) -> list[ItemSpec]:
    """Log-normal sides clipped to [min_side, max_side] (whole cm) and volume-driven weights.

    A stand-in for an unpublished joint size/weight distribution.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sides = rng.lognormal(np.log(spec.median_side), spec.side_sigma, size=(spec.count, 3))
    sides = np.clip(np.round(sides), spec.min_side, spec.max_side)
    jitter = rng.lognormal(0.0, spec.density_jitter, size=spec.count)
    mass = np.clip(sides.prod(axis=1) * spec.density * jitter, 0.01, spec.max_weight)
    return [ItemSpec(float(a), float(b), float(c), round(float(m), 4), k)
            for k, ((a, b, c), m) in enumerate(zip(sides, mass))]


@dataclass(frozen=True)
class RealworldDataset:
    spec: DatasetSpec = DatasetSpec()
    name: str = "realworld"

    def episode_items(self, seed) -> list[ItemSpec]:
        return gen_realworld_like(self.spec, seed)


@dataclass(frozen=True)
class FileDataset:
    """Items read from a dataset file; episode k uses stream group k mod n."""

    groups: tuple[tuple[ItemSpec, ...], ...]
    header: dict
    name: str = "file"

    @property
    def items(self) -> tuple[ItemSpec, ...]:
        return tuple(it for g in self.groups for it in g)

    def episode_items(self, seed) -> list[ItemSpec]:
        return list(self.groups[int(seed) % len(self.groups)])


# --- dataset and pick files --------------------------------------------------------

def write_dataset(path, groups: Sequence[Sequence[ItemSpec]], kind: str, container, seed) -> None:
    """Header line, then `id,sx,sy,sz,mass` per item; `# episode k` opens each stream."""
    dims = ",".join(f"{d:g}" for d in container)
    count = sum(len(g) for g in groups)
    lines = [f"# kind={kind} container={dims} count={count} seed={seed} version={DATASET_VERSION}"]
    for k, group in enumerate(groups):
        lines.append(f"# episode {k}")
        lines += [f"{it.id},{it.sx!r},{it.sy!r},{it.sz!r},{it.mass!r}" for it in group]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> FileDataset:
    header: dict = {}
    groups: list[list[ItemSpec]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].split()
            if body[:1] == ["episode"]:
                groups.append([])
                continue
            for tok in body:
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
            continue
        try:
            ident, sx, sy, sz, mass = line.split(",")
            item = ItemSpec(float(sx), float(sy), float(sz), float(mass), _ident(ident))
        except ValueError as exc:
            raise CorruptRecord(path, lineno, f"bad item record {line!r}") from exc
        if not groups:
            groups.append([])
        groups[-1].append(item)
    if "container" in header:
        header["container"] = tuple(float(v) for v in header["container"].split(","))
    groups = [g for g in groups if g]
    if not groups:
        raise CorruptRecord(path, 1, "dataset holds no items")
    return FileDataset(tuple(tuple(g) for g in groups), header, Path(path).stem)


def _ident(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def read_picks(path) -> tuple[Pick, ...]:
    """One suction point per line: `dx,dy` in cm from the item's top-face centre."""
    picks = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            dx, dy = (float(v) for v in line.split(","))
        except ValueError as exc:
            raise CorruptRecord(path, lineno, f"bad pick record {line!r}") from exc
        picks.append(Pick(dx, dy))
    return tuple(picks)


# --- trajectory logs ------------------------------------------------------------------

def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _item_json(it: ItemSpec) -> dict:
    return {"id": it.id, "sx": it.sx, "sy": it.sy, "sz": it.sz, "mass": it.mass}


def _item_from(d) -> ItemSpec:
    return ItemSpec(d["sx"], d["sy"], d["sz"], d["mass"], d["id"])


def transition_to_json(tr: Transition) -> dict:
    return {
        "t": tr.t,
        "item": _item_json(tr.item),
        "action_index": tr.action_index,
        "pose": [tr.pose.px, tr.pose.py, tr.pose.pz, tr.pose.tilt],
        "reward": tr.reward,
        "done": tr.done,
        "success": tr.success,
        "reason": tr.reason,
        "behavior_logp": tr.behavior_logp,
        "params": {**asdict(tr.params), "mass_center_offset": list(tr.params.mass_center_offset)},
        "candidate_poses": _arr(tr.candidate_poses),
        "state_vec": _arr(tr.state_vec),
        "features": _arr(tr.features),
        "collapsed_ids": list(tr.collapsed_ids),
        "cf_state_vec": _arr(tr.cf_state_vec),
        "cf_features": _arr(tr.cf_features),
    }


def _np(v, shape_cols=None):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if shape_cols and a.size == 0:
        a = a.reshape(0, shape_cols)
    return a


def transition_from_json(d: dict) -> Transition:
    p = d["params"]
    params = PhysicsParams(p["mu_static"], p["mu_dynamic"], tuple(p["mass_center_offset"]),
                           p["drop_height"], p["restitution"])
    return Transition(
        t=d["t"],
        item=_item_from(d["item"]),
        action_index=d["action_index"],
        pose=Pose(*d["pose"]),
        reward=d["reward"],
        done=d["done"],
        success=d["success"],
        reason=d["reason"],
        behavior_logp=d["behavior_logp"],
        params=params,
        candidate_poses=_np(d["candidate_poses"], 3),
        state_vec=_np(d["state_vec"]),
        features=_np(d["features"], 7),
        collapsed_ids=tuple(d["collapsed_ids"]),
        cf_state_vec=_np(d["cf_state_vec"]),
        cf_features=_np(d["cf_features"], 7),
    )


@dataclass
class TrajectoryLog:
    header: dict
    transitions: list[Transition]
    summary: dict

    def __eq__(self, other):
        if not isinstance(other, TrajectoryLog):
            return NotImplemented
        return (self.header == other.header and self.summary == other.summary
                and [transition_to_json(t) for t in self.transitions]
                == [transition_to_json(t) for t in other.transitions])


def episode_log(result: EpisodeResult, header: dict) -> TrajectoryLog:
    summary = {
        "su": result.su,
        "terminated_by_collapse": result.terminated_by_collapse,
        "items_placed": result.items_placed,
        "collapse_item_count": result.collapse_item_count,
        "reason": result.reason,
        "return": result.undiscounted_return,
    }
    return TrajectoryLog({**header, "seed": result.seed}, list(result.trajectory), summary)


def write_log(log: TrajectoryLog, path) -> None:
    lines = [json.dumps({"record": "header", "format": LOG_FORMAT, "version": LOG_VERSION, **log.header})]
    lines += [json.dumps({"record": "step", **transition_to_json(t)}) for t in log.transitions]
    lines.append(json.dumps({"record": "summary", **log.summary}))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_log(path) -> TrajectoryLog:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    header, steps, summary = None, [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec.pop("record")
        except (json.JSONDecodeError, KeyError, AttributeError) as exc:
            raise CorruptRecord(path, lineno, "unparseable record") from exc
        if kind == "header":
            if rec.pop("format", None) != LOG_FORMAT:
                raise CorruptRecord(path, lineno, "not a trajectory log")
            version = rec.pop("version", None)
            if version != LOG_VERSION:
                raise VersionMismatch(f"log version {version}, supported {LOG_VERSION}")
            header = rec
        elif header is None:
            raise CorruptRecord(path, lineno, "record before header")
        elif kind == "step":
            try:
                steps.append(transition_from_json(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(path, lineno, f"bad step record: {exc}") from exc
        elif kind == "summary":
            summary = rec
        else:
            raise CorruptRecord(path, lineno, f"unknown record type {kind!r}")
    if header is None:
        raise CorruptRecord(path, 1, "missing header")
    if summary is None:
        raise CorruptRecord(path, len(text.splitlines()) + 1, "missing summary (truncated log)")
    return TrajectoryLog(header, steps, summary)


def config_to_json(config: EnvConfig) -> dict:
    g = config.gripper
    return {
        "container": list(config.container),
        "cell_size": config.cell_size,
        "physics": config.physics,
        "randomize": config.randomize,
        "max_displacement": config.thresholds.max_displacement,
        "max_tilt": config.thresholds.max_tilt,
        "k1": config.impact.k1,
        "k2": config.impact.k2,
        "gripper_margin": g.margin,
        "approach_height": g.approach_height,
        "pad_size": list(g.pad_size),
        "picks": None if g.picks is None else [[p.dx, p.dy] for p in g.picks],
        "anchors": config.anchors,
        "candidate_cap": config.candidate_cap,
        "support_ratio": config.support_ratio,
        "static_gate": config.static_gate,
        "normalize_reward": config.normalize_reward,
        "continue_after_collapse": config.continue_after_collapse,
        "record_features": config.record_features,
    }


def config_from_json(d: dict) -> EnvConfig:
    from .stability import CollapseThresholds, ImpactModel

    picks = d.get("picks")
    return EnvConfig(
        container=tuple(d["container"]),
        cell_size=d["cell_size"],
        physics=d["physics"],
        randomize=d["randomize"],
        thresholds=CollapseThresholds(d["max_displacement"], d["max_tilt"]),
        impact=ImpactModel(d["k1"], d["k2"]),
        gripper=GripperSpec(d["gripper_margin"], d["approach_height"], tuple(d["pad_size"]),
                            None if picks is None else tuple(Pick(*p) for p in picks)),
        anchors=d["anchors"],
        candidate_cap=d["candidate_cap"],
        support_ratio=d["support_ratio"],
        static_gate=d.get("static_gate", False),
        normalize_reward=d["normalize_reward"],
        continue_after_collapse=d["continue_after_collapse"],
        record_features=d["record_features"],
    )
