import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablepack.data import (
    CorruptRecord,
    DatasetSpec,
    UnsatisfiableBounds,
    VersionMismatch,
    config_from_json,
    config_to_json,
    episode_log,
    gen_cut_dataset,
    gen_realworld_like,
    read_dataset,
    read_log,
    read_picks,
    write_dataset,
    write_log,
)
from stablepack.ems import GripperSpec, Pick
from stablepack.env import EnvConfig, run_episode
from stablepack.geometry import ContainerState, ItemSpec, insert_item, space_utilization


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cut_pieces_tile_the_container(seed):
    pieces = gen_cut_dataset((50, 50, 50), 10, 25, seed)
    assert sum(p.item.volume for p in pieces) == 125_000
    c = ContainerState.empty((50, 50, 50))
    for p in pieces:
        assert all(10 <= s <= 25 for s in (p.item.sx, p.item.sy, p.item.sz))
        c = insert_item(c, p.item, p.pose)
    assert space_utilization(c) == pytest.approx(1.0)
    keys = [(p.pose.pz, p.pose.py, p.pose.px) for p in pieces]
    assert keys == sorted(keys)


def test_forced_uniform_cut():
    pieces = gen_cut_dataset((50, 50, 50), 25, 25, 0)
    assert len(pieces) == 8
    assert all((p.item.sx, p.item.sy, p.item.sz) == (25, 25, 25) for p in pieces)


def test_unsatisfiable_bounds():
    with pytest.raises(UnsatisfiableBounds):
        gen_cut_dataset((50, 50, 50), 30, 40, 0)


def test_cut_is_seeded():
    a = gen_cut_dataset((50, 50, 50), 10, 25, 7)
    assert a == gen_cut_dataset((50, 50, 50), 10, 25, 7)
    assert a != gen_cut_dataset((50, 50, 50), 10, 25, 8)


def test_realworld_bounds():
    items = gen_realworld_like(DatasetSpec(count=10_000), seed=0)
    sides = np.array([(i.sx, i.sy, i.sz) for i in items])
    assert sides.min() >= 5 and sides.max() <= 40
    assert max(i.mass for i in items) <= 10


def test_realworld_seeded_and_degenerate():
    spec = DatasetSpec(count=50)
    assert gen_realworld_like(spec, 3) == gen_realworld_like(spec, 3)
    flat = gen_realworld_like(DatasetSpec(count=20, min_side=12, max_side=12), 0)
    assert {(i.sx, i.sy, i.sz) for i in flat} == {(12, 12, 12)}


def test_dataset_file_round_trip(tmp_path):
    groups = [[p.item for p in gen_cut_dataset((50, 50, 50), 10, 25, s)] for s in range(3)]
    path = tmp_path / "cut.txt"
    write_dataset(path, groups, "cut", (50, 50, 50), 0)
    ds = read_dataset(path)
    assert ds.header["kind"] == "cut" and ds.header["container"] == (50.0, 50.0, 50.0)
    assert [list(g) for g in ds.groups] == groups
    assert ds.episode_items(4) == groups[1]


def test_dataset_bad_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# kind=cut container=50,50,50 count=1 seed=0 version=1\n0,1,2\n")
    with pytest.raises(CorruptRecord) as err:
        read_dataset(path)
    assert err.value.lineno == 2


def test_pick_file(tmp_path):
    path = tmp_path / "picks.txt"
    path.write_text("# suction points\n0,0\n-5.5,2\n")
    assert read_picks(path) == (Pick(0, 0), Pick(-5.5, 2))


def short_log():
    items = [ItemSpec(10, 10, 10, id=k) for k in range(3)]
    res = run_episode("softmax", items, EnvConfig(), 4)
    return episode_log(res, {"note": "test"})


def test_log_round_trip(tmp_path):
    log = short_log()
    assert len(log.transitions) == 3
    path = tmp_path / "ep.tlog"
    write_log(log, path)
    assert read_log(path) == log


def test_truncated_log(tmp_path):
    path = tmp_path / "ep.tlog"
    write_log(short_log(), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:2]) + "\n")
    with pytest.raises(CorruptRecord):
        read_log(path)
    path.write_text("\n".join(lines[:2]) + "\n" + lines[2][: len(lines[2]) // 2] + "\n")
    with pytest.raises(CorruptRecord) as err:
        read_log(path)
    assert err.value.lineno == 3


def test_future_version(tmp_path):
    path = tmp_path / "ep.tlog"
    write_log(short_log(), path)
    lines = path.read_text().splitlines()
    head = json.loads(lines[0])
    head["version"] = 99
    path.write_text("\n".join([json.dumps(head)] + lines[1:]) + "\n")
    with pytest.raises(VersionMismatch):
        read_log(path)


def test_config_json_round_trip():
    cfg = EnvConfig(container=(60.0, 40.0, 30.0), physics="static", static_gate=True, anchors="corner",
                    gripper=GripperSpec(1.0, 5.0, (8.0, 6.0), (Pick(1, 2),)))
    assert config_from_json(json.loads(json.dumps(config_to_json(cfg)))) == cfg
