import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from stablepack.ems import ActionCandidate, EmsBox, compute_ems
from stablepack.env import EnvConfig, reset
from stablepack.geometry import ContainerState, ItemSpec, Pose, insert_item
from stablepack.policy import (
    FEATURE_NAMES,
    N_FEATURES,
    HeuristicPolicy,
    NoCandidates,
    SoftmaxPolicy,
    action_probabilities,
    featurize,
    featurize_all,
    heuristic_best_fit,
    heuristic_dblf,
    heuristic_max_contact,
    load_policy,
    make_policy,
    save_policy,
)

IDX = {n: k for k, n in enumerate(FEATURE_NAMES)}


class _State:
    def __init__(self, container):
        self.container = container


def cand(item, pos, box=None):
    box = box or EmsBox.from_cm((0, 0, 0), (50, 50, 50))
    return ActionCandidate(item, Pose(*pos), box)


def test_first_item_at_origin_has_zero_distance():
    state = reset([ItemSpec(10, 10, 10)], EnvConfig(), 0)
    f = featurize(state, state.candidates[0])
    assert state.candidates[0].pose == Pose(0, 0, 0)
    assert f[IDX["origin_distance"]] == 0.0
    assert f[IDX["contact_ratio"]] == 1.0


def test_exact_fill_has_no_waste():
    c = ContainerState.empty((50, 50, 50))
    item = ItemSpec(50, 50, 50)
    f = featurize(_State(c), cand(item, (0, 0, 0)))
    assert f[IDX["ems_waste"]] == 0.0
    assert f[IDX["static_stable"]] == 1.0


def test_features_in_unit_interval():
    c = insert_item(ContainerState.empty((50, 50, 50)), ItemSpec(20, 20, 20), Pose(0, 0, 0))
    ems = compute_ems(c)
    from stablepack.ems import candidate_placements

    cands = candidate_placements(ems, ItemSpec(15, 25, 10), c, "bottom4")
    f = featurize_all(_State(c), cands)
    assert f.shape == (len(cands), N_FEATURES)
    assert np.all((f >= 0) & (f <= 1))


def test_partial_support_features():
    c = insert_item(ContainerState.empty((50, 50, 50)), ItemSpec(10, 20, 10), Pose(0, 0, 0))
    f = featurize(_State(c), cand(ItemSpec(20, 20, 5), (0, 0, 10)))
    assert f[IDX["contact_ratio"]] == pytest.approx(0.5)
    assert f[IDX["static_stable"]] == 1.0  # centre on the patch edge
    f = featurize(_State(c), cand(ItemSpec(25, 20, 5), (0, 0, 10)))
    assert f[IDX["static_stable"]] == 0.0


def test_zero_weights_give_uniform():
    p = action_probabilities(SoftmaxPolicy(), np.random.default_rng(0).uniform(size=(5, N_FEATURES)))
    assert np.allclose(p, 0.2)


def test_low_temperature_concentrates_on_argmax():
    f = np.random.default_rng(1).uniform(size=(6, N_FEATURES))
    w = np.ones(N_FEATURES)
    p = action_probabilities(SoftmaxPolicy(w, temperature=1e-4), f)
    assert p[np.argmax(f @ w)] == pytest.approx(1.0)


def test_single_candidate_probability_one():
    assert action_probabilities(SoftmaxPolicy(np.ones(N_FEATURES)), np.ones((1, N_FEATURES)))[0] == 1.0


def test_no_candidates_error():
    with pytest.raises(NoCandidates):
        action_probabilities(SoftmaxPolicy(), np.zeros((0, N_FEATURES)))
    with pytest.raises(NoCandidates):
        heuristic_dblf(None, [])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_probabilities_sum_to_one_and_gradient_matches(n, seed, temp):
    rng = np.random.default_rng(seed)
    f = rng.uniform(size=(n, N_FEATURES))
    pol = SoftmaxPolicy(rng.normal(size=N_FEATURES), temperature=temp)
    p = action_probabilities(pol, f)
    assert p.sum() == pytest.approx(1.0) and np.all(p >= 0)
    a = int(rng.integers(n))
    fd = central_difference(lambda w: pol.with_weights(w).log_probs(f)[a], pol.weights)
    assert np.allclose(pol.grad_log_prob(f, a), fd, atol=1e-7)


def test_dblf_prefers_lower_z():
    item = ItemSpec(10, 10, 10)
    cs = [cand(item, (0, 0, 10)), cand(item, (30, 0, 0))]
    assert heuristic_dblf(None, cs).pose == Pose(30, 0, 0)


def test_dblf_empty_container_origin():
    state = reset([ItemSpec(10, 10, 10)], EnvConfig(), 0)
    assert heuristic_dblf(state, state.candidates).pose == Pose(0, 0, 0)


def test_dblf_tie_keeps_first_enumerated():
    item = ItemSpec(10, 10, 10)
    a = cand(item, (0, 0, 0), EmsBox.from_cm((0, 0, 0), (20, 20, 20)))
    b = cand(item, (0, 0, 0), EmsBox.from_cm((0, 0, 0), (10, 50, 50)))
    assert heuristic_dblf(None, [a, b]) is a


def test_best_fit_prefers_exact_box():
    item = ItemSpec(10, 10, 10)
    loose = cand(item, (0, 0, 0), EmsBox.from_cm((0, 0, 0), (50, 50, 50)))
    exact = cand(item, (40, 0, 0), EmsBox.from_cm((40, 0, 0), (50, 10, 10)))
    assert heuristic_best_fit(None, [loose, exact]) is exact
    assert heuristic_best_fit(None, [loose]) is loose


def test_best_fit_ties_fall_back_to_dblf():
    item = ItemSpec(10, 10, 10)
    a = cand(item, (20, 0, 0), EmsBox.from_cm((20, 0, 0), (30, 10, 10)))
    b = cand(item, (0, 0, 0), EmsBox.from_cm((0, 0, 0), (10, 10, 10)))
    assert heuristic_best_fit(None, [a, b]) is b


def test_max_contact_prefers_floor():
    c = insert_item(ContainerState.empty((50, 50, 50)), ItemSpec(10, 20, 10), Pose(0, 0, 0))
    item = ItemSpec(20, 20, 5)
    partial = cand(item, (0, 0, 10))
    floor = cand(item, (30, 0, 0))
    assert heuristic_max_contact(_State(c), [partial, floor]) is floor
    a, b = cand(item, (30, 20, 0)), cand(item, (30, 0, 0))
    assert heuristic_max_contact(_State(c), [a, b]) is b
    assert heuristic_max_contact(_State(c), [partial]) is partial


def test_checkpoint_round_trip(tmp_path):
    pol = SoftmaxPolicy(np.linspace(-1, 1, N_FEATURES), temperature=0.7)
    path = tmp_path / "p.ckpt"
    save_policy(pol, path)
    back = load_policy(path)
    assert np.array_equal(back.weights, pol.weights) and back.temperature == 0.7
    assert load_policy(path, greedy=True).greedy


def test_make_policy():
    assert make_policy("dblf") == HeuristicPolicy("dblf")
    assert isinstance(make_policy("softmax"), SoftmaxPolicy)
    with pytest.raises(ValueError):
        make_policy("random")


def test_greedy_act_picks_argmax():
    f = np.random.default_rng(3).uniform(size=(4, N_FEATURES))
    pol = SoftmaxPolicy(np.ones(N_FEATURES), greedy=True)
    k, logp = pol.act(None, [None] * 4, f, np.random.default_rng(0))
    assert k == int(np.argmax(f.sum(1)))
    assert logp == pytest.approx(pol.log_probs(f)[k])
