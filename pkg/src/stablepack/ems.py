"""Empty maximal spaces and the placement action space built from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .geometry import ContainerState, ItemSpec, PlacedItem, Pose, to_cm, to_units

DEFAULT_CANDIDATE_CAP = 80


class EmsBox(NamedTuple):
    """Maximal empty box; corners in internal units (tenths of a cm)."""

    x0: int
    y0: int
    z0: int
    x1: int
    y1: int
    z1: int

    @classmethod
    def from_cm(cls, lo: Sequence[float], hi: Sequence[float]) -> "EmsBox":
        return cls(*(to_units(v) for v in (*lo, *hi)))

    @property
    def lo(self) -> tuple[float, float, float]:
        return to_cm(self.x0), to_cm(self.y0), to_cm(self.z0)

    @property
    def hi(self) -> tuple[float, float, float]:
        return to_cm(self.x1), to_cm(self.y1), to_cm(self.z1)

    @property
    def volume_u(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0) * (self.z1 - self.z0)

    def contains(self, other: "EmsBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0 and self.z0 <= other.z0
                and other.x1 <= self.x1 and other.y1 <= self.y1 and other.z1 <= self.z1)


@dataclass
class ActionCandidate:
    item: ItemSpec
    pose: Pose
    source_ems: EmsBox
    features: np.ndarray | None = None


@dataclass(frozen=True)
class Pick:
    """Suction point as an offset (cm) from the centre of the item's top face."""

    dx: float = 0.0
    dy: float = 0.0


@dataclass(frozen=True)
class GripperSpec:
    margin: float = 2.0
    approach_height: float = 10.0
    pad_size: tuple[float, float] = (10.0, 10.0)
    picks: tuple[Pick, ...] | None = None


def _sorted(arr: np.ndarray) -> list[EmsBox]:
    rows = [EmsBox(*map(int, r)) for r in arr]
    rows.sort(key=lambda b: (b.z0, b.y0, b.x0, b.z1, b.y1, b.x1))
    return rows


def _subtract(arr: np.ndarray, box: Sequence[int]) -> np.ndarray:
    """Carve `box` out of the EMS array, keeping only maximal residuals."""
    if len(arr) == 0:
        return arr
    bx = np.asarray(box, dtype=np.int64)
    hit = np.all(arr[:, :3] < bx[3:], axis=1) & np.all(bx[:3] < arr[:, 3:], axis=1)
    if not hit.any():
        return arr
    keep, cut = arr[~hit], arr[hit]
    pieces = []
    for a in range(3):
        lower = cut.copy()
        lower[:, a + 3] = bx[a]
        pieces.append(lower[lower[:, a + 3] > lower[:, a]])
        upper = cut.copy()
        upper[:, a] = bx[a + 3]
        pieces.append(upper[upper[:, a + 3] > upper[:, a]])
    res = np.unique(np.concatenate(pieces), axis=0)
    if len(res) == 0:
        return keep
    # A residual is dropped if another box (old or residual) contains it.
    pool = np.concatenate([keep, res])
    inside = (np.all(pool[None, :, :3] <= res[:, None, :3], axis=2)
              & np.all(pool[None, :, 3:] >= res[:, None, 3:], axis=2))
    own = np.arange(len(res)) + len(keep)
    inside[np.arange(len(res)), own] = False
    res = res[~inside.any(axis=1)]
    return np.concatenate([keep, res])


def _full_box(container: ContainerState) -> np.ndarray:
    sx, sy, sz = container.size_u
    return np.array([[0, 0, 0, sx, sy, sz]], dtype=np.int64)


def compute_ems(container: ContainerState) -> list[EmsBox]:
    arr = _full_box(container)
    for it in container.items:
        arr = _subtract(arr, it.box_u)
    return _sorted(arr)


def update_ems(ems: Iterable[EmsBox], new_item: PlacedItem) -> list[EmsBox]:
    arr = np.array(list(ems), dtype=np.int64).reshape(-1, 6)
    return _sorted(_subtract(arr, new_item.box_u))


def _has_support(container: ContainerState, box: Sequence[int]) -> bool:
    if box[2] == 0:
        return True
    b = container.boxes
    if len(b) == 0:
        return False
    return bool(np.any((b[:, 5] == box[2]) & (b[:, 0] < box[3]) & (box[0] < b[:, 3])
                       & (b[:, 1] < box[4]) & (box[1] < b[:, 4])))


def candidate_placements(
    ems: Iterable[EmsBox],
    item: ItemSpec,
    container: ContainerState | None = None,
    anchors: str = "corner",
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> list[ActionCandidate]:
    """Anchor `item` inside every EMS box large enough to hold it.

    With `container` given, poses whose bottom face touches neither the floor
    nor the top of a placed item are dropped. `anchors` is "corner" (front-left-
    bottom only) or "bottom4" (all four bottom corners). Duplicate poses keep the
    first source box in EMS order.
    """
    sx, sy, sz = item.size_u
    seen = set()
    out = []
    for box in ems:
        if box.x1 - box.x0 < sx or box.y1 - box.y0 < sy or box.z1 - box.z0 < sz:
            continue
        corners = [(box.x0, box.y0)]
        if anchors == "bottom4":
            corners += [(box.x1 - sx, box.y0), (box.x0, box.y1 - sy), (box.x1 - sx, box.y1 - sy)]
        elif anchors != "corner":
            raise ValueError(f"unknown anchor mode {anchors!r}")
        for x, y in corners:
            key = (x, y, box.z0)
            if key in seen:
                continue
            seen.add(key)
            if container is not None and not _has_support(container, (x, y, box.z0, x + sx, y + sy)):
                continue
            out.append(ActionCandidate(item, Pose(to_cm(x), to_cm(y), to_cm(box.z0)), box))
    if len(out) > cap:
        out.sort(key=lambda c: (c.pose.pz, c.pose.py, c.pose.px))
        out = out[:cap]
    return out


def _column_blocked(boxes: np.ndarray, rect: Sequence[int], floor_z: int) -> bool:
    x0, y0, x1, y1 = rect
    return bool(np.any((boxes[:, 5] > floor_z) & (boxes[:, 0] < x1) & (x0 < boxes[:, 3])
                       & (boxes[:, 1] < y1) & (y0 < boxes[:, 4])))


def prune_feasible(
    candidates: Sequence[ActionCandidate],
    container: ContainerState,
    gripper: GripperSpec | None = None,
) -> list[ActionCandidate]:
    """Keep candidates reachable by a straight top-down descent.

    The column above the item's top face, widened by the gripper margin, must
    be clear of placed items. With picks configured, the suction pad column at
    the pick offset (widened by the margin) plus the bare item column must be
    clear for at least one pick.
    """
    gripper = gripper or GripperSpec()
    boxes = container.boxes
    if len(boxes) == 0:
        return list(candidates)
    m = to_units(gripper.margin) if np.isfinite(gripper.margin) else 10**12
    kept = []
    for c in candidates:
        x, y, z = c.pose.pos_u
        sx, sy, sz = c.item.size_u
        top = z + sz
        if gripper.picks is None:
            ok = not _column_blocked(boxes, (x - m, y - m, x + sx + m, y + sy + m), top)
        else:
            ok = False
            if not _column_blocked(boxes, (x, y, x + sx, y + sy), top):
                pw, pd = (to_units(v) for v in gripper.pad_size)
                for p in gripper.picks:
                    cx = x + sx // 2 + to_units(p.dx)
                    cy = y + sy // 2 + to_units(p.dy)
                    rect = (cx - pw // 2 - m, cy - pd // 2 - m, cx + pw // 2 + m, cy + pd // 2 + m)
                    if not _column_blocked(boxes, rect, top):
                        ok = True
                        break
        if ok:
            kept.append(c)
    return kept
