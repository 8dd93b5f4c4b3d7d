"""Policy-gradient training, critic updates and real-data fine-tuning.

All gradients are with respect to the linear-softmax weights (policy) or the
linear Q weights (critic) and are checked against finite differences in the
test suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .env import STATE_DIM, EnvConfig, EpisodeResult, Transition, run_batch
from .policy import N_FEATURES, SoftmaxPolicy

log = logging.getLogger(__name__)

RHO_CLIP = (0.1, 10.0)
CRITIC_DIM = STATE_DIM + N_FEATURES + 1


class MissingBehaviorProb(ValueError):
    pass


@dataclass
class TrajectoryRecord:
    transitions: list[Transition]
    source: str = "simulated"  # or "real-phase1"
    container: tuple[float, float, float] = (50.0, 50.0, 50.0)
    reward_scale: float = 1.0  # reward per cm^3 (1/container volume when normalized)

    def __post_init__(self):
        if any(tr.done for tr in self.transitions[:-1]):
            raise ValueError("only the last transition may be terminal")


def split_trajectories(result: EpisodeResult, config: EnvConfig, source: str = "simulated") -> list[TrajectoryRecord]:
    """Cut an episode into records at every terminal flag (collect mode may have several)."""
    scale = 1.0 / config.volume if config.normalize_reward else 1.0
    out, cur = [], []
    for tr in result.trajectory:
        cur.append(tr)
        if tr.done:
            out.append(TrajectoryRecord(cur, source, config.container, scale))
            cur = []
    if cur:
        out.append(TrajectoryRecord(cur, source, config.container, scale))
    return out


@dataclass
class LearnStep:
    features: np.ndarray
    action: int
    reward: float
    done: bool
    success: bool
    behavior_logp: float | None
    state_vec: np.ndarray
    r_int: float = 0.0
    next_state_vec: np.ndarray | None = None
    next_features: np.ndarray | None = None
    cf_state_vec: np.ndarray | None = None
    cf_features: np.ndarray | None = None
    ret: float = 0.0  # undiscounted reward-to-go
    real_collapse: bool = False


def to_steps(traj: TrajectoryRecord) -> list[LearnStep]:
    trs = traj.transitions
    steps = []
    for k, tr in enumerate(trs):
        if tr.features is None:
            raise ValueError("learning needs trajectories recorded with features")
        nxt = trs[k + 1] if k + 1 < len(trs) else None
        steps.append(LearnStep(
            features=np.asarray(tr.features, dtype=float),
            action=tr.action_index,
            reward=tr.reward,
            done=tr.done,
            success=tr.success,
            behavior_logp=tr.behavior_logp,
            state_vec=np.asarray(tr.state_vec, dtype=float),
            r_int=tr.item.volume * traj.reward_scale,
            next_state_vec=None if nxt is None else nxt.state_vec,
            next_features=None if nxt is None else nxt.features,
            cf_state_vec=tr.cf_state_vec,
            cf_features=tr.cf_features,
            real_collapse=traj.source == "real-phase1" and tr.done and not tr.success,
        ))
    ret = 0.0
    for s in reversed(steps):
        ret += s.reward
        s.ret = ret
    return steps


# --- fine-tuning data preparation ----------------------------------------------------

def relabel_collapse_penalty(traj: TrajectoryRecord, alpha: float) -> TrajectoryRecord:
    """Replace the zero reward of a collapse with -alpha times the item's volume reward."""
    if not traj.transitions:
        return traj
    last = traj.transitions[-1]
    if not last.done or last.success:
        return traj
    penalized = replace(last, reward=-alpha * last.item.volume * traj.reward_scale)
    return replace(traj, transitions=traj.transitions[:-1] + [penalized])


def pose_distance(a, b, dims) -> float:
    return float(np.linalg.norm((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / np.asarray(dims, dtype=float)))


def trajectory_distance(traj: TrajectoryRecord, policy: SoftmaxPolicy) -> float:
    total = 0.0
    for tr in traj.transitions:
        best = policy.argmax(tr.features)
        total += pose_distance(tr.candidate_poses[tr.action_index], tr.candidate_poses[best], traj.container)
    return total


def filter_trajectories(trajs: Sequence[TrajectoryRecord], policy: SoftmaxPolicy, epsilon: float) -> list[TrajectoryRecord]:
    """Keep trajectories whose logged poses stay within `epsilon` of the policy's greedy choices.

    Exact matches are always kept, so epsilon = 0 keeps only those.
    """
    kept = []
    for tr in trajs:
        d = trajectory_distance(tr, policy)
        if d < epsilon or d == 0.0:
            kept.append(tr)
    return kept


def importance_ratio(step: LearnStep, policy: SoftmaxPolicy, clip=RHO_CLIP) -> float:
    if step.behavior_logp is None or not np.isfinite(step.behavior_logp):
        raise MissingBehaviorProb("step has no behavior log-probability")
    rho = float(np.exp(policy.log_probs(step.features)[step.action] - step.behavior_logp))
    return float(np.clip(rho, *clip)) if clip else rho


# --- policy gradients -------------------------------------------------------------------

def kl_divergence(policy: SoftmaxPolicy, old: SoftmaxPolicy, features) -> float:
    lp, lq = policy.log_probs(features), old.log_probs(features)
    return float(np.exp(lp) @ (lp - lq))


def kl_gradient(policy: SoftmaxPolicy, old: SoftmaxPolicy, features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    lp, lq = policy.log_probs(f), old.log_probs(f)
    p = np.exp(lp)
    centered = f - p @ f
    return (p * (lp - lq)) @ centered / policy.temperature


def pretrain_gradient(batch: Sequence[LearnStep], policy: SoftmaxPolicy, q_values) -> np.ndarray:
    """Mean of grad log pi(a|s) * Q over the batch."""
    g = np.zeros_like(policy.weights)
    for s, q in zip(batch, q_values):
        g += policy.grad_log_prob(s.features, s.action) * q
    return g / len(batch)


def finetune_gradient(
    batch: Sequence[LearnStep],
    policy: SoftmaxPolicy,
    old_policy: SoftmaxPolicy,
    q_values,
    beta: float,
    clip=RHO_CLIP,
) -> np.ndarray:
    """Importance-weighted policy gradient minus beta times the KL(pi || pi_old) gradient."""
    if not batch:
        raise ValueError("empty batch")
    g = np.zeros_like(policy.weights)
    kl = np.zeros_like(policy.weights)
    for s, q in zip(batch, q_values):
        rho = importance_ratio(s, policy, clip)
        g += rho * policy.grad_log_prob(s.features, s.action) * q
        if beta:
            kl += kl_gradient(policy, old_policy, s.features)
    return (g - beta * kl) / len(batch)


def finetune_objective(batch, policy, old_policy, q_values, beta) -> float:
    """Surrogate whose gradient equals finetune_gradient wherever no ratio is clipped."""
    total = 0.0
    for s, q in zip(batch, q_values):
        rho = np.exp(policy.log_probs(s.features)[s.action] - s.behavior_logp)
        total += rho * q - beta * kl_divergence(policy, old_policy, s.features)
    return total / len(batch)


# --- critic ----------------------------------------------------------------------------------

def critic_features(state_vec, action_features) -> np.ndarray:
    return np.concatenate([np.asarray(state_vec, dtype=float), np.asarray(action_features, dtype=float), [1.0]])


@dataclass
class Critic:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(CRITIC_DIM))
    target_weights: np.ndarray | None = None
    sync_period: int = 10
    updates: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).copy()
        if self.target_weights is None:
            self.target_weights = self.weights.copy()

    def q(self, state_vec, action_features, target: bool = False) -> float:
        w = self.target_weights if target else self.weights
        return float(critic_features(state_vec, action_features) @ w)

    def apply(self, grad, lr: float) -> "Critic":
        new = Critic(self.weights - lr * np.asarray(grad), self.target_weights.copy(), self.sync_period, self.updates + 1)
        if new.updates % self.sync_period == 0:
            new.target_weights = new.weights.copy()
        return new


def bootstrap_value(critic: Critic, policy: SoftmaxPolicy, state_vec, features) -> float:
    """Target-network value of the next state under the policy's greedy action."""
    if state_vec is None or features is None or len(features) == 0:
        return 0.0
    a = policy.argmax(features)
    return critic.q(state_vec, features[a], target=True)


def decay_schedule(epoch: int, n_epochs: int) -> float:
    """Linear lambda from 0 at the first epoch to 1 at the last."""
    if n_epochs <= 1:
        return 1.0
    return float(min(1.0, max(0.0, epoch / (n_epochs - 1))))


def decay_collapse_qtarget(sim_target: float, epoch: int, n_epochs: int = 10, terminal_target: float = 0.0) -> float:
    """Blend a collapse step's simulated target toward its terminal target (zero by default)."""
    lam = decay_schedule(epoch, n_epochs)
    return (1.0 - lam) * sim_target + lam * terminal_target


def critic_targets(batch, critic: Critic, policy: SoftmaxPolicy, gamma: float = 1.0, epoch: int | None = None,
                   n_epochs: int = 10) -> np.ndarray:
    ys = []
    for s in batch:
        if s.real_collapse and epoch is not None:
            sim = s.r_int + gamma * bootstrap_value(critic, policy, s.cf_state_vec, s.cf_features)
            ys.append(decay_collapse_qtarget(sim, epoch, n_epochs, terminal_target=s.reward))
        else:
            boot = 0.0 if s.done else bootstrap_value(critic, policy, s.next_state_vec, s.next_features)
            ys.append(s.reward + gamma * boot)
    return np.array(ys)


def critic_loss(batch, critic: Critic, policy: SoftmaxPolicy | None = None, gamma: float = 1.0,
                targets=None) -> tuple[float, np.ndarray]:
    """Mean squared TD error against the target network, and its gradient in the critic weights."""
    if targets is None:
        targets = critic_targets(batch, critic, policy, gamma)
    phis = np.stack([critic_features(s.state_vec, s.features[s.action]) for s in batch])
    err = np.asarray(targets) - phis @ critic.weights
    return float(np.mean(err ** 2)), -2.0 * (err @ phis) / len(batch)


def nstep_values(steps: Sequence[LearnStep], critic: Critic | None, policy: SoftmaxPolicy, n: int | None = 5,
                 gamma: float = 1.0) -> np.ndarray:
    """n-step bootstrapped returns along one trajectory (n=None gives Monte Carlo)."""
    out = []
    for t in range(len(steps)):
        total, disc, k = 0.0, 1.0, t
        while k < len(steps) and (n is None or k < t + n):
            total += disc * steps[k].reward
            disc *= gamma
            if steps[k].done:
                break
            k += 1
        else:
            if critic is not None and k < len(steps):
                total += disc * critic.q(steps[k].state_vec, steps[k].features[policy.argmax(steps[k].features)],
                                         target=True)
        out.append(total)
    return np.array(out)


# --- update rules ------------------------------------------------------------------------------

def pretrain_update(batch, policy: SoftmaxPolicy, critic: Critic, lr: float, q_values=None,
                    critic_lr: float | None = None, gamma: float = 1.0) -> tuple[SoftmaxPolicy, Critic]:
    """One ascent step on the policy and one descent step on the critic.

    `q_values` default to the batch's Monte Carlo returns.
    """
    q = np.array([s.ret for s in batch]) if q_values is None else np.asarray(q_values, dtype=float)
    new_policy = policy.with_weights(policy.weights + lr * pretrain_gradient(batch, policy, q))
    _, cg = critic_loss(batch, critic, policy, gamma)
    return new_policy, critic.apply(cg, critic_lr if critic_lr is not None else lr)


@dataclass(frozen=True)
class FinetuneConfig:
    alpha: float = 0.33
    epsilon: float = 0.5
    beta: float = 0.1
    lr: float = 1e-4
    critic_lr: float = 1e-2
    epochs: int = 10
    batch_size: int = 16
    gamma: float = 1.0
    q_source: str = "critic"  # or "mc"
    rho_clip: tuple[float, float] = RHO_CLIP
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.epsilon <= 0 or self.beta < 0:
            raise ValueError("need alpha > 0, epsilon > 0, beta >= 0")


@dataclass
class FinetuneReport:
    kept: int
    total: int
    steps: int
    critic_loss: list[float]
    kl: list[float]


def finetune(
    policy: SoftmaxPolicy,
    critic: Critic,
    trajectories: Sequence[TrajectoryRecord],
    old_policy: SoftmaxPolicy | None = None,
    cfg: FinetuneConfig = FinetuneConfig(),
) -> tuple[SoftmaxPolicy, Critic, FinetuneReport]:
    """Penalize collapses, filter by similarity, then run IS+KL policy updates with critic fitting."""
    old_policy = old_policy or policy
    relabeled = [relabel_collapse_penalty(t, cfg.alpha) for t in trajectories]
    kept = filter_trajectories(relabeled, policy, cfg.epsilon)
    steps = [s for t in kept for s in to_steps(t)]
    report = FinetuneReport(len(kept), len(trajectories), len(steps), [], [])
    if not steps:
        return policy, critic, report
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(steps))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [steps[i] for i in order[start:start + cfg.batch_size]]
            targets = critic_targets(batch, critic, policy, cfg.gamma, epoch, cfg.epochs)
            loss, cg = critic_loss(batch, critic, targets=targets)
            losses.append(loss)
            critic = critic.apply(cg, cfg.critic_lr)
            if cfg.q_source == "mc":
                q = [s.ret for s in batch]
            else:
                q = [critic.q(s.state_vec, s.features[s.action]) for s in batch]
            g = finetune_gradient(batch, policy, old_policy, q, cfg.beta, cfg.rho_clip)
            policy = policy.with_weights(policy.weights + cfg.lr * g)
        report.critic_loss.append(float(np.mean(losses)))
        report.kl.append(float(np.mean([kl_divergence(policy, old_policy, s.features) for s in steps])))
        log.info("finetune epoch %d: critic loss %.4g, KL %.4g", epoch, report.critic_loss[-1], report.kl[-1])
    return policy, critic, report


def train(
    policy: SoftmaxPolicy,
    critic: Critic,
    dataset,
    config: EnvConfig,
    iterations: int = 10,
    lr: float = 1e-3,
    critic_lr: float = 1e-2,
    batch_size: int = 80,
    rollout: int = 5,
    n_parallel: int = 16,
    seed: int = 0,
) -> tuple[SoftmaxPolicy, Critic, list[float]]:
    """Collect episodes with the current policy and update on n-step returns.

    Used for static pre-training (config.physics == "static") and for
    randomized simulation training (config.physics == "sim").
    """
    history = []
    next_seed = seed
    for it in range(iterations):
        steps: list[LearnStep] = []
        values: list[float] = []
        sus = []
        while len(steps) < batch_size:
            seeds = list(range(next_seed, next_seed + n_parallel))
            next_seed += n_parallel
            for res in run_batch(policy, dataset, config, 1, seeds):
                sus.append(res.su)
                for rec in split_trajectories(res, config):
                    st = to_steps(rec)
                    steps += st
                    values += list(nstep_values(st, critic, policy, rollout, 1.0))
        batch = steps[:batch_size]
        policy, critic = pretrain_update(batch, policy, critic, lr, values[:batch_size], critic_lr)
        history.append(float(np.mean(sus)))
        log.info("train iteration %d: mean SU %.4f", it, history[-1])
    return policy, critic, history
