"""Axis-aligned items, poses and container state.

Lengths cross the API in centimetres. Internally every coordinate is an
integer number of tenths of a centimetre so that overlap, bounds and contact
tests are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

UNITS_PER_CM = 10


def to_units(cm: float) -> int:
    return int(round(cm * UNITS_PER_CM))


def to_cm(units: int | float) -> float:
    return units / UNITS_PER_CM


class GeometryError(ValueError):
    """Raised when a placement violates a packing constraint."""


class OutOfBounds(GeometryError):
    def __init__(self, item_id, axis: str):
        super().__init__(f"item {item_id!r} leaves the container along {axis}")
        self.item_id = item_id
        self.axis = axis


class Overlap(GeometryError):
    def __init__(self, item_id, blocking_id):
        super().__init__(f"item {item_id!r} overlaps placed item {blocking_id!r}")
        self.item_id = item_id
        self.blocking_id = blocking_id


@dataclass(frozen=True)
class ItemSpec:
    sx: float
    sy: float
    sz: float
    mass: float = 1.0
    id: object = None

    def __post_init__(self):
        if min(self.sx, self.sy, self.sz) <= 0:
            raise ValueError(f"item sizes must be positive, got {(self.sx, self.sy, self.sz)}")
        if self.mass <= 0:
            raise ValueError(f"item mass must be positive, got {self.mass}")

    @cached_property
    def size_u(self) -> tuple[int, int, int]:
        return to_units(self.sx), to_units(self.sy), to_units(self.sz)

    @property
    def volume(self) -> float:
        return self.sx * self.sy * self.sz


@dataclass(frozen=True)
class Pose:
    """Front-left-bottom corner in cm plus tilt in degrees."""

    px: float
    py: float
    pz: float
    tilt: float = 0.0

    @cached_property
    def pos_u(self) -> tuple[int, int, int]:
        return to_units(self.px), to_units(self.py), to_units(self.pz)

    def position(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pz], dtype=float)


@dataclass(frozen=True)
class PlacedItem:
    spec: ItemSpec
    planned: Pose
    current: Pose
    mass_center_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(abs(o) >= 0.5 for o in self.mass_center_offset):
            raise ValueError(f"mass center offset must stay inside the item: {self.mass_center_offset}")

    @property
    def id(self):
        return self.spec.id

    @cached_property
    def box_u(self) -> tuple[int, int, int, int, int, int]:
        x, y, z = self.planned.pos_u
        sx, sy, sz = self.spec.size_u
        return x, y, z, x + sx, y + sy, z + sz

    @property
    def top_z(self) -> float:
        return self.planned.pz + self.spec.sz

    def center_of_mass(self) -> np.ndarray:
        """Mass centre at the planned pose, in cm."""
        size = np.array([self.spec.sx, self.spec.sy, self.spec.sz])
        return self.planned.position() + size * (0.5 + np.asarray(self.mass_center_offset))


def boxes_overlap(a: Sequence[int], b: Sequence[int]) -> bool:
    """Open-interval intersection of two (x0, y0, z0, x1, y1, z1) boxes."""
    return a[0] < b[3] and b[0] < a[3] and a[1] < b[4] and b[1] < a[4] and a[2] < b[5] and b[2] < a[5]


def aabb_overlap(a: PlacedItem, b: PlacedItem) -> bool:
    return boxes_overlap(a.box_u, b.box_u)


def placement_box(item: ItemSpec, pose: Pose) -> tuple[int, int, int, int, int, int]:
    x, y, z = pose.pos_u
    sx, sy, sz = item.size_u
    return x, y, z, x + sx, y + sy, z + sz


@dataclass(frozen=True)
class ContainerState:
    Sx: float
    Sy: float
    Sz: float
    items: tuple[PlacedItem, ...] = ()
    cell_size: float = 1.0
    height_map: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.height_map is None:
            hm = np.zeros(self.grid_shape, dtype=np.int64)
            for it in self.items:
                _raise_heights(hm, it.box_u, to_units(self.cell_size))
            object.__setattr__(self, "height_map", hm)

    @classmethod
    def empty(cls, dims: Sequence[float], cell_size: float = 1.0) -> "ContainerState":
        return cls(float(dims[0]), float(dims[1]), float(dims[2]), cell_size=cell_size)

    @cached_property
    def size_u(self) -> tuple[int, int, int]:
        return to_units(self.Sx), to_units(self.Sy), to_units(self.Sz)

    @property
    def grid_shape(self) -> tuple[int, int]:
        cell = to_units(self.cell_size)
        sx, sy, _ = self.size_u
        return -(-sx // cell), -(-sy // cell)

    @property
    def volume(self) -> float:
        return self.Sx * self.Sy * self.Sz

    @cached_property
    def boxes(self) -> np.ndarray:
        """(n, 6) integer array of planned item boxes in internal units."""
        if not self.items:
            return np.zeros((0, 6), dtype=np.int64)
        return np.array([it.box_u for it in self.items], dtype=np.int64)

    def max_height(self) -> float:
        return to_cm(int(self.height_map.max())) if self.items else 0.0

    def with_items(self, items: Sequence[PlacedItem]) -> "ContainerState":
        """Same geometry, replaced item records (used when only current poses change)."""
        return replace(self, items=tuple(items), height_map=self.height_map)


def _raise_heights(hm: np.ndarray, box: Sequence[int], cell: int) -> None:
    x0, y0, _, x1, y1, z1 = box
    i0, i1 = x0 // cell, -(-x1 // cell)
    j0, j1 = y0 // cell, -(-y1 // cell)
    np.maximum(hm[i0:i1, j0:j1], z1, out=hm[i0:i1, j0:j1])


def in_bounds(item: ItemSpec, pose: Pose, container: ContainerState) -> bool:
    box = placement_box(item, pose)
    size = container.size_u
    return all(0 <= box[a] and box[a + 3] <= size[a] for a in range(3))


def space_utilization(container: ContainerState) -> float:
    packed = sum(it.spec.volume for it in container.items)
    return packed / container.volume


def insert_item(
    container: ContainerState,
    item: ItemSpec,
    pose: Pose,
    mass_center_offset: Sequence[float] = (0.0, 0.0, 0.0),
    current: Pose | None = None,
) -> ContainerState:
    """Return a new state with `item` placed at `pose`."""
    box = placement_box(item, pose)
    size = container.size_u
    for a, name in enumerate("xyz"):
        if box[a] < 0 or box[a + 3] > size[a]:
            raise OutOfBounds(item.id, name)
    if container.items:
        b = container.boxes
        hit = (
            (b[:, 0] < box[3]) & (box[0] < b[:, 3])
            & (b[:, 1] < box[4]) & (box[1] < b[:, 4])
            & (b[:, 2] < box[5]) & (box[2] < b[:, 5])
        )
        if hit.any():
            raise Overlap(item.id, container.items[int(np.argmax(hit))].id)
    placed = PlacedItem(item, pose, current if current is not None else pose, tuple(mass_center_offset))
    hm = container.height_map.copy()
    _raise_heights(hm, box, to_units(container.cell_size))
    return replace(container, items=container.items + (placed,), height_map=hm)


def footprint_overlap_area(a: Sequence[float], b: Sequence[float]) -> float:
    """Overlap area of two (x0, y0, x1, y1) rectangles."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    d = min(a[3], b[3]) - max(a[1], b[1])
    return w * d if w > 0 and d > 0 else 0.0


def euclidean(p: Pose, q: Pose) -> float:
    return math.dist((p.px, p.py, p.pz), (q.px, q.py, q.pz))
