"""Synthetic fine-tuning corpus: candidates with feature BAD == 0 collapse when chosen."""

import numpy as np

from stablepack.env import Transition
from stablepack.geometry import ItemSpec, Pose
from stablepack.learn import TrajectoryRecord
from stablepack.policy import N_FEATURES, SoftmaxPolicy
from stablepack.stability import PhysicsParams

BAD = 4  # the static_stable feature slot


def corpus(n=200, seed=0, policy=None, max_len=4):
    """Trajectories sampled from `policy`; a collapse-inducing pick ends the trajectory.

    Candidate poses sit within 1 cm of each other so the similarity filter
    keeps every trajectory.
    """
    rng = np.random.default_rng(seed)
    policy = policy or SoftmaxPolicy(np.zeros(N_FEATURES))
    out = []
    for _ in range(n):
        trs = []
        length = int(rng.integers(1, max_len + 1))
        for t in range(length):
            k = int(rng.integers(3, 8))
            f = rng.uniform(0, 1, size=(k, N_FEATURES))
            f[:, BAD] = rng.uniform(size=k) < 0.5
            f[0, BAD], f[1, BAD] = 1.0, 0.0
            lp = policy.log_probs(f)
            a = int(rng.choice(k, p=np.exp(lp)))
            item = ItemSpec(*rng.integers(10, 21, size=3).astype(float), 1.0, t)
            collapse = f[a, BAD] == 0.0
            last = collapse or t == length - 1
            poses = 20 + rng.uniform(0, 1, size=(k, 3))
            reason = "collapse" if collapse else ("exhausted" if last else None)
            trs.append(Transition(t, item, a, Pose(*poses[a]), 0.0 if collapse else item.volume, last,
                                  not collapse, reason, float(lp[a]), PhysicsParams(), poses,
                                  rng.uniform(size=4), f))
            if last:
                break
        out.append(TrajectoryRecord(trs, "real-phase1", (50.0, 50.0, 50.0)))
    return out


def collapse_probability(policy, trajs):
    """Mean probability the policy puts on collapse-inducing candidates over all logged states."""
    ps = []
    for tr in trajs:
        for t in tr.transitions:
            p = np.exp(policy.log_probs(t.features))
            ps.append(p[t.features[:, BAD] == 0].sum())
    return float(np.mean(ps))
