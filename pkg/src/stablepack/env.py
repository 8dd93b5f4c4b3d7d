"""Online packing episodes: reset/step, rewards, and batched rollouts."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .ems import ActionCandidate, EmsBox, GripperSpec, candidate_placements, compute_ems, prune_feasible, update_ems
from .geometry import ContainerState, ItemSpec, Pose, insert_item, space_utilization
from .policy import Policy, featurize_all, make_policy
from .randomizer import nominal_params, sample_params
from .stability import CollapseThresholds, ImpactModel, PhysicsParams, settle, static_stable

log = logging.getLogger(__name__)

STATE_DIM = 4


class EmptyStream(ValueError):
    pass


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    container: tuple[float, float, float] = (50.0, 50.0, 50.0)
    cell_size: float = 1.0
    physics: str = "sim"  # "sim" settles every placement, "static" gates on the rule check
    randomize: bool = True
    thresholds: CollapseThresholds = CollapseThresholds()
    impact: ImpactModel = ImpactModel()
    gripper: GripperSpec = GripperSpec()
    anchors: str = "bottom4"
    candidate_cap: int = 80
    support_ratio: float = 0.5
    static_gate: bool = False  # restrict sim-mode candidates to the rule-based stable set
    normalize_reward: bool = False
    continue_after_collapse: bool = False
    record_features: bool = True
    param_dists: dict | None = field(default=None, compare=False)

    @property
    def volume(self) -> float:
        return self.container[0] * self.container[1] * self.container[2]


@dataclass(frozen=True)
class PackState:
    container: ContainerState
    next_item: ItemSpec
    ems: tuple[EmsBox, ...]
    t: int
    episode_seed: int
    stream: tuple[ItemSpec, ...]
    candidates: tuple[ActionCandidate, ...] = ()

    @property
    def remaining(self) -> int:
        return len(self.stream) - self.t - 1


@dataclass
class Transition:
    t: int
    item: ItemSpec
    action_index: int
    pose: Pose
    reward: float
    done: bool
    success: bool  # f_t: False only on a collapse
    reason: str | None  # "collapse", "exhausted", "no_action" when done
    behavior_logp: float
    params: PhysicsParams
    candidate_poses: np.ndarray
    state_vec: np.ndarray
    features: np.ndarray | None = None
    collapsed_ids: tuple = ()
    # geometric next state had the placement not collapsed (critic target decay)
    cf_state_vec: np.ndarray | None = None
    cf_features: np.ndarray | None = None


@dataclass
class EpisodeResult:
    seed: int
    su: float
    terminated_by_collapse: bool
    items_placed: int
    collapse_item_count: int
    reason: str
    trajectory: list[Transition]

    @property
    def undiscounted_return(self) -> float:
        return float(sum(tr.reward for tr in self.trajectory))


def _stream(dataset, seed) -> tuple[ItemSpec, ...]:
    if hasattr(dataset, "episode_items"):
        return tuple(dataset.episode_items(seed))
    if callable(dataset):
        return tuple(dataset(seed))
    return tuple(dataset)


def state_vector(container: ContainerState, item: ItemSpec, t: int) -> np.ndarray:
    return np.array([
        space_utilization(container),
        container.max_height() / container.Sz,
        item.volume / container.volume,
        min(1.0, t / 100.0),
    ])


def _candidates(container: ContainerState, item: ItemSpec, ems, config: EnvConfig) -> tuple[ActionCandidate, ...]:
    cands = candidate_placements(ems, item, container, config.anchors, config.candidate_cap)
    cands = prune_feasible(cands, container, config.gripper)
    if config.physics == "static" or config.static_gate:
        cands = [c for c in cands if static_stable(container, item, c.pose, support_ratio=config.support_ratio)]
    return tuple(cands)


def _make_state(container, stream, t, seed, ems, config) -> PackState:
    item = stream[t]
    return PackState(container, item, tuple(ems), t, seed, stream, _candidates(container, item, ems, config))


def reset(dataset, config: EnvConfig, seed: int) -> PackState:
    stream = _stream(dataset, seed)
    if not stream:
        raise EmptyStream("item stream is empty")
    container = ContainerState.empty(config.container, config.cell_size)
    return _make_state(container, stream, 0, seed, compute_ems(container), config)


def _sub_seed(seed: int, t: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, t, purpose]).generate_state(1)[0])


def episode_params(config: EnvConfig, seed: int, t: int) -> PhysicsParams:
    if not config.randomize:
        return nominal_params()
    return sample_params(config.param_dists, seed=_sub_seed(seed, t, 0))


def _reward(volume: float, config: EnvConfig) -> float:
    return volume / config.volume if config.normalize_reward else float(volume)


def _as_index(state: PackState, action) -> int:
    if isinstance(action, (int, np.integer)):
        if 0 <= action < len(state.candidates):
            return int(action)
        raise InvalidAction(f"candidate index {action} out of range")
    for k, c in enumerate(state.candidates):
        if c is action or (c.pose.pos_u == action.pose.pos_u and c.item == action.item):
            return k
    raise InvalidAction(f"pose {action.pose} is not in the candidate list")


def step(
    state: PackState,
    action,
    params: PhysicsParams,
    config: EnvConfig = EnvConfig(),
    behavior_logp: float = 0.0,
    features: np.ndarray | None = None,
) -> tuple[Transition, PackState | None]:
    """Place the current item. Returns the transition and the next state (None when done)."""
    k = _as_index(state, action)
    cand = state.candidates[k]
    item = state.next_item
    svec = state_vector(state.container, item, state.t)
    poses = np.array([c.pose.position() for c in state.candidates])
    if config.physics == "static":
        container = insert_item(state.container, item, cand.pose)
        collapsed: frozenset = frozenset()
    else:
        outcome = settle(state.container, item, cand.pose, params, config.thresholds,
                         rng_seed=_sub_seed(state.episode_seed, state.t, 1), impact=config.impact)
        container, collapsed = outcome.container, outcome.collapsed_ids
    placed = container.items[-1]
    ems = update_ems(state.ems, placed)
    tr = Transition(state.t, item, k, cand.pose, _reward(item.volume, config), False, True, None,
                    behavior_logp, params, poses, svec, features, tuple(sorted(map(str, collapsed))))
    has_next = state.t + 1 < len(state.stream)
    if collapsed:
        tr.reward, tr.done, tr.success, tr.reason = 0.0, True, False, "collapse"
        if has_next and config.record_features:
            cf = _make_state(container, state.stream, state.t + 1, state.episode_seed, ems, config)
            if cf.candidates:
                tr.cf_state_vec = state_vector(cf.container, cf.next_item, cf.t)
                tr.cf_features = featurize_all(cf, cf.candidates, config.support_ratio)
        if not (config.continue_after_collapse and has_next):
            return tr, None
        # operator repacks the collapsed items back to their planned poses
        container = container.with_items([replace(it, current=it.planned) for it in container.items])
    if not has_next:
        tr.done, tr.reason = True, "exhausted"
        return tr, None
    nxt = _make_state(container, state.stream, state.t + 1, state.episode_seed, ems, config)
    if not nxt.candidates:
        if not tr.done:
            tr.done, tr.reason = True, "no_action"
        return tr, None
    return tr, nxt


def _wrap(policy) -> Policy:
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, str):
        return make_policy(policy)
    if callable(policy):
        return _CallablePolicy(policy)
    raise TypeError(f"not a policy: {policy!r}")


@dataclass(frozen=True)
class _CallablePolicy(Policy):
    fn: Callable

    def act(self, state, candidates, features, rng):
        chosen = self.fn(state, candidates)
        if isinstance(chosen, (int, np.integer)):
            return int(chosen), 0.0
        return next(k for k, c in enumerate(candidates) if c is chosen), 0.0


def run_episode(policy, dataset, config: EnvConfig = EnvConfig(), seed: int = 0) -> EpisodeResult:
    pol = _wrap(policy)
    rng = np.random.default_rng(_sub_seed(seed, 0, 2))
    state = reset(dataset, config, seed)
    trajectory: list[Transition] = []
    container = state.container
    reason = "no_action"
    collapses = 0
    while state is not None:
        if not state.candidates:
            break
        feats = None
        if pol.needs_features or config.record_features:
            feats = featurize_all(state, state.candidates, config.support_ratio)
        k, logp = pol.act(state, state.candidates, feats, rng)
        params = episode_params(config, seed, state.t)
        tr, nxt = step(state, k, params, config, logp, feats)
        trajectory.append(tr)
        if not tr.success:
            collapses += 1
        if nxt is None:
            reason = tr.reason
            container = _final_container(state, tr, config)
        state = nxt
    return EpisodeResult(
        seed=seed,
        su=space_utilization(container) if trajectory else 0.0,
        terminated_by_collapse=reason == "collapse",
        items_placed=len(trajectory),
        collapse_item_count=collapses,
        reason=reason,
        trajectory=trajectory,
    )


def _final_container(state: PackState, tr: Transition, config: EnvConfig) -> ContainerState:
    return insert_item(state.container, tr.item, tr.pose)


def _run_one(args):
    policy, dataset, config, seed = args
    return run_episode(policy, dataset, config, seed)


def run_batch(policy, dataset, config: EnvConfig, n_parallel: int = 16, seeds: Sequence[int] = ()) -> list[EpisodeResult]:
    """Run one episode per seed; results come back in seed order."""
    if n_parallel < 1:
        raise ValueError("n_parallel must be >= 1")
    jobs = [(policy, dataset, config, int(s)) for s in seeds]
    if n_parallel == 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_parallel, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * n_parallel))))
