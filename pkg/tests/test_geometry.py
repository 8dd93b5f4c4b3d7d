import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablepack.geometry import (
    ContainerState,
    ItemSpec,
    OutOfBounds,
    Overlap,
    PlacedItem,
    Pose,
    aabb_overlap,
    boxes_overlap,
    in_bounds,
    insert_item,
    space_utilization,
    to_cm,
    to_units,
)


def placed(px, py, pz, sx, sy, sz, ident=None):
    pose = Pose(px, py, pz)
    return PlacedItem(ItemSpec(sx, sy, sz, id=ident), pose, pose)


def test_shared_vertical_face_is_not_overlap():
    assert not aabb_overlap(placed(0, 0, 0, 10, 10, 10), placed(10, 0, 0, 10, 10, 10))


def test_interior_intersection_overlaps():
    assert aabb_overlap(placed(0, 0, 0, 10, 10, 10), placed(5, 5, 5, 10, 10, 10))


def test_stacked_items_do_not_overlap():
    assert not aabb_overlap(placed(0, 0, 0, 10, 10, 10), placed(0, 0, 10, 10, 10, 10))


def test_in_bounds_edges():
    c = ContainerState.empty((50, 50, 50))
    cube = ItemSpec(20, 20, 20)
    assert in_bounds(cube, Pose(30, 30, 30), c)
    assert not in_bounds(cube, Pose(31, 0, 0), c)
    assert in_bounds(ItemSpec(50, 50, 50), Pose(0, 0, 0), c)


def test_space_utilization():
    c = ContainerState.empty((50, 50, 50))
    assert space_utilization(c) == 0.0
    c = insert_item(c, ItemSpec(20, 20, 20), Pose(0, 0, 0))
    assert space_utilization(c) == pytest.approx(0.064)


def test_exact_tiling_gives_full_utilization():
    c = ContainerState.empty((50, 50, 50))
    for x in (0, 25):
        for y in (0, 25):
            for z in (0, 25):
                c = insert_item(c, ItemSpec(25, 25, 25), Pose(x, y, z))
    assert space_utilization(c) == pytest.approx(1.0)


def test_insert_is_additive_and_immutable():
    c0 = ContainerState.empty((50, 50, 50))
    c1 = insert_item(c0, ItemSpec(10, 10, 20, id="a"), Pose(0, 0, 0))
    assert len(c0.items) == 0 and len(c1.items) == 1
    assert space_utilization(c1) - space_utilization(c0) == pytest.approx(2000 / 125000)
    assert c1.max_height() == 20.0
    assert c0.max_height() == 0.0


def test_overlap_names_blocking_item():
    c = insert_item(ContainerState.empty((50, 50, 50)), ItemSpec(20, 20, 20, id="base"), Pose(0, 0, 0))
    with pytest.raises(Overlap) as err:
        insert_item(c, ItemSpec(10, 10, 10, id="new"), Pose(15, 15, 0))
    assert err.value.blocking_id == "base"


def test_out_of_bounds_names_axis():
    c = ContainerState.empty((50, 50, 50))
    with pytest.raises(OutOfBounds) as err:
        insert_item(c, ItemSpec(20, 20, 20), Pose(0, 31, 0))
    assert err.value.axis == "y"


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        ItemSpec(0, 1, 1)
    with pytest.raises(ValueError):
        ItemSpec(1, 1, 1, mass=0)
    with pytest.raises(ValueError):
        PlacedItem(ItemSpec(1, 1, 1), Pose(0, 0, 0), Pose(0, 0, 0), (0.5, 0, 0))


def test_unit_conversion_rounds_to_tenth_cm():
    assert to_units(12.3) == 123
    assert to_cm(to_units(7.25)) in (7.2, 7.3)


def test_height_map_tracks_tops():
    c = ContainerState.empty((10, 10, 30))
    c = insert_item(c, ItemSpec(5, 10, 10), Pose(0, 0, 0))
    c = insert_item(c, ItemSpec(5, 5, 15), Pose(0, 0, 10))
    hm = c.height_map
    assert hm[0, 0] == to_units(25)
    assert hm[0, 9] == to_units(10)
    assert hm[9, 0] == 0


@st.composite
def placements(draw):
    n = draw(st.integers(1, 12))
    return [
        (
            draw(st.integers(1, 20)), draw(st.integers(1, 20)), draw(st.integers(1, 20)),
            draw(st.integers(0, 35)), draw(st.integers(0, 35)), draw(st.integers(0, 35)),
        )
        for _ in range(n)
    ]


@settings(max_examples=60, deadline=None)
@given(placements())
def test_accepted_states_never_overlap_or_overflow(moves):
    c = ContainerState.empty((40, 40, 40))
    for sx, sy, sz, x, y, z in moves:
        try:
            c = insert_item(c, ItemSpec(sx, sy, sz), Pose(x, y, z))
        except (Overlap, OutOfBounds):
            pass
    boxes = c.boxes
    for i in range(len(boxes)):
        assert np.all(boxes[i, :3] >= 0) and np.all(boxes[i, 3:] <= np.array(c.size_u))
        for j in range(i):
            assert not boxes_overlap(boxes[i], boxes[j])
    assert 0.0 <= space_utilization(c) <= 1.0
