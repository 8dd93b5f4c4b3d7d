import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import force_balance_stable
from stablepack.geometry import ContainerState, ItemSpec, Pose, insert_item
from stablepack.stability import (
    FLOOR,
    CollapseThresholds,
    PhysicsParams,
    build_support_graph,
    collapse_check,
    hull_area,
    hull_contains,
    settle,
    static_stable,
)

STILL = PhysicsParams(drop_height=0.0, restitution=0.0)


def container(*placements, dims=(50, 50, 50)):
    c = ContainerState.empty(dims)
    for k, (size, pos) in enumerate(placements):
        c = insert_item(c, ItemSpec(*size, id=k), Pose(*pos))
    return c


# --- collapse_check ---------------------------------------------------------------

def test_identical_poses_do_not_collapse():
    assert not collapse_check(Pose(1, 2, 3), Pose(1, 2, 3), CollapseThresholds())


def test_threshold_is_strict():
    th = CollapseThresholds(max_displacement=2.5, max_tilt=15.0)
    assert not collapse_check(Pose(0, 0, 0), Pose(2.5, 0, 0), th)
    assert collapse_check(Pose(0, 0, 0), Pose(2.5001, 0, 0), th)
    assert not collapse_check(Pose(0, 0, 0), Pose(0, 0, 0, 15.0), th)


def test_large_tilt_collapses():
    assert collapse_check(Pose(0, 0, 0), Pose(0, 0, 0, 20.0), CollapseThresholds(max_tilt=15.0))


def test_bad_parameters_rejected():
    with pytest.raises(ValueError):
        CollapseThresholds(0.0, 15.0)
    with pytest.raises(ValueError):
        PhysicsParams(mu_static=0.2, mu_dynamic=0.3)
    with pytest.raises(ValueError):
        PhysicsParams(drop_height=6.0)


# --- static_stable -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.floats(-0.49, 0.49)] * 3))
def test_floor_items_are_stable_for_any_offset(offset):
    c = ContainerState.empty((50, 50, 50))
    assert static_stable(c, ItemSpec(20, 20, 20), Pose(5, 5, 0), offset)


def test_edge_strip_support_is_unstable():
    c = container(((4, 20, 10), (0, 0, 0)))
    assert not static_stable(c, ItemSpec(20, 20, 10), Pose(0, 0, 10), support_ratio=0.0)


def test_two_pillars_support_a_bridge():
    c = container(((4, 20, 10), (0, 0, 0)), ((4, 20, 10), (16, 0, 0)))
    assert static_stable(c, ItemSpec(20, 20, 10), Pose(0, 0, 10), support_ratio=0.0)
    # the area rule rejects it at the default 50% ratio (40% supported)
    assert not static_stable(c, ItemSpec(20, 20, 10), Pose(0, 0, 10))


def test_floating_item_is_unstable():
    c = ContainerState.empty((50, 50, 50))
    assert not static_stable(c, ItemSpec(10, 10, 10), Pose(0, 0, 5))


def test_hull_helpers():
    rects = [(0, 0, 2, 2), (8, 0, 10, 2)]
    assert hull_contains(rects, (5, 1))
    assert hull_contains(rects, (5, 2))
    assert not hull_contains(rects, (5, 2.1))
    assert hull_area(rects) == pytest.approx(20.0)


# --- support graph ---------------------------------------------------------------------

def test_stacked_pair_graph():
    c = container(((10, 10, 10), (0, 0, 0)), ((10, 10, 10), (0, 0, 10)))
    assert build_support_graph(c) == {0: [FLOOR], 1: [0]}


def test_bridge_has_two_supporters():
    c = container(((4, 20, 10), (0, 0, 0)), ((4, 20, 10), (16, 0, 0)), ((20, 20, 5), (0, 0, 10)))
    assert sorted(build_support_graph(c)[2]) == [0, 1]


def test_floor_only_layout():
    c = container(((10, 10, 10), (0, 0, 0)), ((10, 10, 10), (20, 0, 0)))
    assert all(v == [FLOOR] for v in build_support_graph(c).values())


# --- settle ---------------------------------------------------------------------------------

def test_still_drop_on_floor_is_identity():
    c = ContainerState.empty((50, 50, 50))
    out = settle(c, ItemSpec(20, 20, 20), Pose(0, 0, 0), STILL, rng_seed=3)
    assert out.stable
    assert out.poses == (Pose(0, 0, 0),)
    assert len(out.container.items) == 1


def test_overhang_sixty_percent_collapses():
    c = container(((20, 20, 10), (0, 0, 0)))
    out = settle(c, ItemSpec(20, 20, 10, id="top"), Pose(12, 0, 10), STILL)
    assert "top" in out.collapsed_ids
    assert not force_balance_stable((12, 0, 20, 20), (22, 10))


def test_subtree_load_topples_middle_item():
    # middle item alone balances; the top item moves the combined load past the base edge
    c = container(((20, 20, 10), (0, 0, 0)), ((20, 20, 10), (8, 0, 10)))
    assert static_stable(container(((20, 20, 10), (0, 0, 0))), ItemSpec(20, 20, 10), Pose(8, 0, 10), support_ratio=0)
    out = settle(c, ItemSpec(20, 20, 10, id="top"), Pose(16, 0, 20), STILL)
    combined_x = (18.0 + 26.0) / 2
    assert combined_x > 20.0
    assert 1 in out.collapsed_ids
    assert "top" in out.collapsed_ids
    assert 0 not in out.collapsed_ids


def test_settle_is_deterministic_per_seed():
    c = container(((20, 20, 10), (0, 0, 0)))
    params = PhysicsParams(0.2, 0.15, (0.2, -0.1, 0.0), 4.0, 0.2)
    a = settle(c, ItemSpec(15, 15, 10), Pose(2, 2, 10), params, rng_seed=11)
    b = settle(c, ItemSpec(15, 15, 10), Pose(2, 2, 10), params, rng_seed=11)
    assert a.poses == b.poses and a.collapsed_ids == b.collapsed_ids


def test_drop_perturbs_pose():
    c = ContainerState.empty((50, 50, 50))
    params = PhysicsParams(0.34, 0.27, (0, 0, 0), 5.0, 0.3)
    out = settle(c, ItemSpec(10, 10, 10), Pose(20, 20, 0), params, rng_seed=1)
    cur = out.poses[-1]
    assert (cur.px, cur.py) != (20, 20)
    assert cur.tilt == pytest.approx(2.5)


def test_planned_geometry_is_kept_after_settle():
    c = container(((20, 20, 10), (0, 0, 0)))
    out = settle(c, ItemSpec(20, 20, 10, id="top"), Pose(12, 0, 10), STILL)
    top = out.container.items[-1]
    assert top.planned == Pose(12, 0, 10)
    assert top.current != top.planned


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_settled_poses_stay_inside_or_collapse(seed):
    rng = np.random.default_rng(seed)
    c = container(((20, 20, 10), (0, 0, 0)), ((15, 25, 12), (25, 0, 0)))
    params = PhysicsParams(float(rng.uniform(0.16, 0.53)), 0.1, tuple(rng.uniform(-0.25, 0.25, 3)),
                           float(rng.uniform(0, 5)), float(rng.uniform(0, 0.3)))
    item = ItemSpec(*map(float, rng.integers(5, 20, size=3)), id="new")
    pose = Pose(float(rng.integers(0, 50 - int(item.sx) + 1)), float(rng.integers(0, 50 - int(item.sy) + 1)), 10.0)
    try:
        out = settle(c, item, pose, params, rng_seed=seed)
    except ValueError:
        return  # overlap with the second block
    for it, cur in zip(out.container.items, out.poses):
        inside = (-1e-9 <= cur.px and cur.px + it.spec.sx <= 50 + 1e-9
                  and -1e-9 <= cur.py and cur.py + it.spec.sy <= 50 + 1e-9)
        assert inside or it.id in out.collapsed_ids
