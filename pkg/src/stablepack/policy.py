"""Placement policies: heuristic baselines and a linear-softmax policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ems import ActionCandidate
from .geometry import ContainerState, to_units
from .stability import CONTACT_TOL_U, hull_area, hull_contains

FEATURE_NAMES = (
    "max_height",
    "contact_ratio",
    "origin_distance",
    "ems_waste",
    "static_stable",
    "support_hull_ratio",
    "top_flushness",
)
N_FEATURES = len(FEATURE_NAMES)
CHECKPOINT_VERSION = 1


class NoCandidates(ValueError):
    pass


def contact_patches(container: ContainerState, cand: ActionCandidate) -> list[tuple[float, float, float, float]]:
    """Support rectangles (cm) under the candidate's bottom face."""
    x, y, z = cand.pose.pos_u
    sx, sy, _ = cand.item.size_u
    if z <= CONTACT_TOL_U:
        return [(cand.pose.px, cand.pose.py, cand.pose.px + cand.item.sx, cand.pose.py + cand.item.sy)]
    b = container.boxes
    if len(b) == 0:
        return []
    x0 = np.maximum(b[:, 0], x)
    y0 = np.maximum(b[:, 1], y)
    x1 = np.minimum(b[:, 3], x + sx)
    y1 = np.minimum(b[:, 4], y + sy)
    m = (np.abs(b[:, 5] - z) <= CONTACT_TOL_U) & (x1 > x0) & (y1 > y0)
    return [(a / 10, c / 10, d / 10, e / 10) for a, c, d, e in zip(x0[m], y0[m], x1[m], y1[m])]


def _contact_ratio(patches, cand) -> float:
    area = sum((r[2] - r[0]) * (r[3] - r[1]) for r in patches)
    return min(1.0, area / (cand.item.sx * cand.item.sy))


def _flushness(container: ContainerState, cand: ActionCandidate) -> float:
    cell = to_units(container.cell_size)
    x, y, z = cand.pose.pos_u
    sx, sy, sz = cand.item.size_u
    top = z + sz
    nx, ny = container.grid_shape
    i0, i1 = x // cell, -(-(x + sx) // cell)
    j0, j1 = y // cell, -(-(y + sy) // cell)
    hm = container.height_map
    ring = []
    if i0 > 0:
        ring.append(hm[i0 - 1, j0:j1])
    if i1 < nx:
        ring.append(hm[i1, j0:j1])
    if j0 > 0:
        ring.append(hm[i0:i1, j0 - 1])
    if j1 < ny:
        ring.append(hm[i0:i1, j1])
    if not ring:
        return 1.0
    cells = np.concatenate(ring)
    return float(np.mean(np.abs(cells - top) <= CONTACT_TOL_U))


def featurize(state, cand: ActionCandidate, support_ratio: float = 0.5) -> np.ndarray:
    """Seven placement features, each in [0, 1]."""
    c: ContainerState = state.container
    item, pose = cand.item, cand.pose
    patches = contact_patches(c, cand)
    contact = _contact_ratio(patches, cand)
    com = (pose.px + item.sx / 2, pose.py + item.sy / 2)
    stable = bool(patches) and contact >= support_ratio - 1e-9 and hull_contains(patches, com)
    hull = min(1.0, hull_area(patches) / (item.sx * item.sy)) if patches else 0.0
    box = cand.source_ems
    waste_u = box.volume_u - item.size_u[0] * item.size_u[1] * item.size_u[2]
    cvol = c.size_u[0] * c.size_u[1] * c.size_u[2]
    return np.array([
        min(1.0, max(c.max_height(), pose.pz + item.sz) / c.Sz),
        contact,
        math.sqrt((pose.px / c.Sx) ** 2 + (pose.py / c.Sy) ** 2 + (pose.pz / c.Sz) ** 2) / math.sqrt(3),
        max(0.0, waste_u / cvol),
        float(stable),
        hull,
        _flushness(c, cand),
    ])


def featurize_all(state, candidates: Sequence[ActionCandidate], support_ratio: float = 0.5) -> np.ndarray:
    if not candidates:
        return np.zeros((0, N_FEATURES))
    return np.stack([featurize(state, c, support_ratio) for c in candidates])


def dblf_key(cand: ActionCandidate):
    return cand.pose.pos_u[2], cand.pose.pos_u[1], cand.pose.pos_u[0]


def _require(candidates):
    if not candidates:
        raise NoCandidates("no placement candidates")


def heuristic_dblf(state, candidates: Sequence[ActionCandidate]) -> ActionCandidate:
    """Deepest-bottom-left: lowest z, then y, then x; first enumerated wins ties."""
    _require(candidates)
    return min(candidates, key=dblf_key)


def heuristic_best_fit(state, candidates: Sequence[ActionCandidate]) -> ActionCandidate:
    _require(candidates)

    def waste(c):
        s = c.item.size_u
        return c.source_ems.volume_u - s[0] * s[1] * s[2]

    return min(candidates, key=lambda c: (waste(c), dblf_key(c)))


def heuristic_max_contact(state, candidates: Sequence[ActionCandidate]) -> ActionCandidate:
    _require(candidates)
    ratio = [_contact_ratio(contact_patches(state.container, c), c) for c in candidates]
    best = min(range(len(candidates)), key=lambda k: (-ratio[k], dblf_key(candidates[k])))
    return candidates[best]


class Policy:
    """Chooses a candidate index; returns it with its log-probability."""

    needs_features = False
    name = "policy"

    def act(self, state, candidates, features, rng) -> tuple[int, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class HeuristicPolicy(Policy):
    name: str

    def act(self, state, candidates, features, rng):
        chosen = HEURISTICS[self.name](state, candidates)
        return next(k for k, c in enumerate(candidates) if c is chosen), 0.0


def _scores(weights, features, temperature):
    return np.asarray(features, dtype=float) @ np.asarray(weights, dtype=float) / temperature


def log_softmax(scores: np.ndarray) -> np.ndarray:
    s = scores - scores.max()
    return s - np.log(np.exp(s).sum())


def action_probabilities(policy: "SoftmaxPolicy", features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or len(features) == 0:
        raise NoCandidates("action_probabilities needs at least one candidate")
    return np.exp(log_softmax(_scores(policy.weights, features, policy.temperature)))


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy(Policy):
    weights: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    temperature: float = 1.0
    greedy: bool = False
    name: str = "softmax"
    needs_features = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).copy())

    def log_probs(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if len(features) == 0:
            raise NoCandidates("no candidates")
        return log_softmax(_scores(self.weights, features, self.temperature))

    def grad_log_prob(self, features, action: int) -> np.ndarray:
        """d log pi(action) / d weights."""
        f = np.asarray(features, dtype=float)
        p = np.exp(self.log_probs(f))
        return (f[action] - p @ f) / self.temperature

    def argmax(self, features) -> int:
        return int(np.argmax(_scores(self.weights, features, self.temperature)))

    def act(self, state, candidates, features, rng):
        logp = self.log_probs(features)
        if self.greedy:
            k = int(np.argmax(logp))
        else:
            k = int(rng.choice(len(logp), p=np.exp(logp)))
        return k, float(logp[k])

    def with_weights(self, weights) -> "SoftmaxPolicy":
        return SoftmaxPolicy(np.asarray(weights, dtype=float), self.temperature, self.greedy, self.name)


HEURISTICS = {
    "dblf": heuristic_dblf,
    "best_fit": heuristic_best_fit,
    "max_contact": heuristic_max_contact,
}


def save_policy(policy: SoftmaxPolicy, path) -> None:
    lines = [
        "# stablepack softmax policy checkpoint",
        f"version {CHECKPOINT_VERSION}",
        f"temperature {policy.temperature!r}",
        "features " + " ".join(FEATURE_NAMES),
        "weights " + " ".join(repr(float(w)) for w in policy.weights),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path, greedy: bool = False) -> SoftmaxPolicy:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    version = int(fields.get("version", ["0"])[0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    weights = np.array([float(v) for v in fields["weights"]])
    return SoftmaxPolicy(weights, float(fields["temperature"][0]), greedy)


def make_policy(name: str, checkpoint=None) -> Policy:
    if name in HEURISTICS:
        return HeuristicPolicy(name)
    if name in ("softmax", "greedy"):
        if checkpoint:
            return load_policy(checkpoint, greedy=name == "greedy")
        return SoftmaxPolicy(greedy=name == "greedy")
    raise ValueError(f"unknown policy {name!r}")
