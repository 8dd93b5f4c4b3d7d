"""Static stability rules and a quasi-static settling model.

`settle` stands in for a rigid-body engine. It perturbs the incoming item
(landing offset and tilt driven by drop height), lets it slide when the tilt
beats static friction, pushes every item's load down the support graph and
topples any item whose load resultant leaves its contact hull. Items whose
pose drifts past the collapse thresholds are reported as collapsed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import (
    ContainerState,
    ItemSpec,
    PlacedItem,
    Pose,
    euclidean,
    footprint_overlap_area,
    insert_item,
    to_cm,
    to_units,
)

FLOOR = "floor"
CONTACT_TOL_U = 1  # one internal unit, 0.1 cm
TOPPLE_TILT = 45.0  # degrees assigned to an item that loses equilibrium
_EPS = 1e-9


@dataclass(frozen=True)
class PhysicsParams:
    mu_static: float = 0.34
    mu_dynamic: float = 0.27
    mass_center_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drop_height: float = 0.0
    restitution: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mu_dynamic <= self.mu_static:
            raise ValueError("need 0 <= mu_dynamic <= mu_static")
        if not 0 <= self.drop_height <= 5:
            raise ValueError("drop height must lie in [0, 5] cm")


@dataclass(frozen=True)
class CollapseThresholds:
    max_displacement: float = 2.5
    max_tilt: float = 15.0

    def __post_init__(self):
        if self.max_displacement <= 0 or self.max_tilt <= 0:
            raise ValueError("collapse thresholds must be positive")


@dataclass(frozen=True)
class ImpactModel:
    """Landing perturbation: offset k1*h*(1+e) cm, tilt k2*h degrees."""

    k1: float = 0.2
    k2: float = 0.5


@dataclass
class SettleOutcome:
    poses: tuple[Pose, ...]
    collapsed_ids: frozenset
    container: ContainerState

    @property
    def stable(self) -> bool:
        return not self.collapsed_ids


def collapse_check(planned: Pose, current: Pose, thresholds: CollapseThresholds) -> bool:
    return (euclidean(planned, current) > thresholds.max_displacement
            or abs(current.tilt - planned.tilt) > thresholds.max_tilt)


# --- contact geometry -------------------------------------------------------

@dataclass
class _Body:
    key: object
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1 in cm
    z0: int  # units
    z1: int
    mass: float
    com: np.ndarray  # projected (x, y) of own weight


def _contacts(bodies: Sequence[_Body], i: int) -> list[tuple[object, tuple[float, float, float, float]]]:
    b = bodies[i]
    out = []
    if b.z0 <= CONTACT_TOL_U:
        out.append((FLOOR, b.rect))
    for j, o in enumerate(bodies):
        if j == i or abs(o.z1 - b.z0) > CONTACT_TOL_U:
            continue
        r = (max(b.rect[0], o.rect[0]), max(b.rect[1], o.rect[1]),
             min(b.rect[2], o.rect[2]), min(b.rect[3], o.rect[3]))
        if r[2] - r[0] > _EPS and r[3] - r[1] > _EPS:
            out.append((j, r))
    return out


def _convex_hull(points: np.ndarray) -> np.ndarray:
    pts = sorted(set(map(tuple, np.round(points, 9))))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _rect_corners(rects) -> np.ndarray:
    return np.array([(x, y) for r in rects for x in (r[0], r[2]) for y in (r[1], r[3])], dtype=float)


def hull_contains(rects, point, tol: float = 1e-9) -> bool:
    """True if `point` lies in the convex hull of the rectangles (boundary included)."""
    px, py = float(point[0]), float(point[1])
    for r in rects:
        if r[0] - tol <= px <= r[2] + tol and r[1] - tol <= py <= r[3] + tol:
            return True
    if len(rects) == 1:
        return False
    hull = _convex_hull(_rect_corners(rects))
    p = np.array([px, py])
    if len(hull) < 3:
        return False
    n = len(hull)
    for k in range(n):
        a, b = hull[k], hull[(k + 1) % n]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -tol * max(1.0, np.linalg.norm(b - a)):
            return False
    return True


def _nearest_hull_point(rects, point) -> np.ndarray:
    hull = _convex_hull(_rect_corners(rects))
    p = np.asarray(point, dtype=float)
    best, best_d = hull[0], np.inf
    for k in range(len(hull)):
        a, b = hull[k], hull[(k + 1) % len(hull)]
        ab = b - a
        t = 0.0 if not ab.any() else float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0, 1))
        q = a + t * ab
        d = np.linalg.norm(p - q)
        if d < best_d:
            best, best_d = q, d
    return best


def hull_area(rects) -> float:
    hull = _convex_hull(_rect_corners(rects))
    if len(hull) < 3:
        return 0.0
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _body(key, spec: ItemSpec, pose: Pose, offset, shift=(0.0, 0.0)) -> _Body:
    x, y = pose.px + shift[0], pose.py + shift[1]
    z0 = to_units(pose.pz)
    com = np.array([x + spec.sx * (0.5 + offset[0]), y + spec.sy * (0.5 + offset[1])])
    return _Body(key, (x, y, x + spec.sx, y + spec.sy), z0, z0 + spec.size_u[2], spec.mass, com)


def _bodies(container: ContainerState) -> list[_Body]:
    return [_body(k, it.spec, it.planned, it.mass_center_offset) for k, it in enumerate(container.items)]


def support_contacts(container: ContainerState, item: ItemSpec, pose: Pose):
    """Contact patches (supporter id or FLOOR, rect in cm) under `item` at `pose`."""
    bodies = _bodies(container) + [_body(None, item, pose, (0, 0, 0))]
    ids = [it.id for it in container.items]
    return [(FLOOR if j == FLOOR else ids[j], r) for j, r in _contacts(bodies, len(bodies) - 1)]


def static_stable(
    container: ContainerState,
    item: ItemSpec,
    pose: Pose,
    mass_center_offset: Sequence[float] = (0.0, 0.0, 0.0),
    support_ratio: float = 0.5,
) -> bool:
    """Rule-based check: enough supported area and the mass centre over the contact hull.

    With `support_ratio` = 0 only the hull containment test applies.
    """
    patches = [r for _, r in support_contacts(container, item, pose)]
    if not patches:
        return False
    if support_ratio > 0:
        area = sum((r[2] - r[0]) * (r[3] - r[1]) for r in patches)
        if area < support_ratio * item.sx * item.sy - _EPS:
            return False
    com = (pose.px + item.sx * (0.5 + mass_center_offset[0]), pose.py + item.sy * (0.5 + mass_center_offset[1]))
    return hull_contains(patches, com)


def build_support_graph(container: ContainerState) -> dict:
    """Map each item id to the ids it rests on (FLOOR for the container floor).

    Edges point from supported to supporter, so the graph is acyclic and
    ordered by height.
    """
    bodies = _bodies(container)
    ids = [it.id for it in container.items]
    return {ids[i]: [FLOOR if j == FLOOR else ids[j] for j, _ in _contacts(bodies, i)]
            for i in range(len(bodies))}


# --- settling -----------------------------------------------------------------

def _sweep_distance(container: ContainerState, rect, z0: int, z1: int, direction) -> float:
    """Distance the footprint can travel along `direction` before touching a wall or item."""
    dx, dy = direction
    limits = []
    for lo, hi, d, size in ((rect[0], rect[2], dx, container.Sx), (rect[1], rect[3], dy, container.Sy)):
        if d > _EPS:
            limits.append((size - hi) / d)
        elif d < -_EPS:
            limits.append(lo / -d)
    best = min(limits) if limits else math.inf
    for it in container.items:
        bx0, by0, bz0, bx1, by1, bz1 = it.box_u
        if bz1 <= z0 or bz0 >= z1:
            continue
        ox0, oy0, ox1, oy1 = to_cm(bx0), to_cm(by0), to_cm(bx1), to_cm(by1)
        t_enter, t_exit = -math.inf, math.inf
        for lo, hi, olo, ohi, d in ((rect[0], rect[2], ox0, ox1, dx), (rect[1], rect[3], oy0, oy1, dy)):
            if abs(d) <= _EPS:
                if hi <= olo or lo >= ohi:
                    t_enter, t_exit = math.inf, -math.inf
                continue
            ta, tb = (olo - hi) / d, (ohi - lo) / d
            t_enter, t_exit = max(t_enter, min(ta, tb)), min(t_exit, max(ta, tb))
        if t_enter < t_exit and t_exit > 0:
            best = min(best, max(t_enter, 0.0))
    return max(best, 0.0)


def settle(
    container: ContainerState,
    new_item: ItemSpec,
    pose: Pose,
    params: PhysicsParams,
    thresholds: CollapseThresholds = CollapseThresholds(),
    rng_seed=0,
    impact: ImpactModel = ImpactModel(),
) -> SettleOutcome:
    rng = np.random.default_rng(rng_seed)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    direction = (math.cos(phi), math.sin(phi))
    h = params.drop_height
    offset_mag = impact.k1 * h * (1.0 + params.restitution)
    tilt = impact.k2 * h

    # landing offset, kept inside the walls
    sx, sy = direction[0] * offset_mag, direction[1] * offset_mag
    sx = float(np.clip(sx, -pose.px, container.Sx - pose.px - new_item.sx))
    sy = float(np.clip(sy, -pose.py, container.Sy - pose.py - new_item.sy))

    z0 = to_units(pose.pz)
    z1 = z0 + new_item.size_u[2]
    if tilt > 0 and math.tan(math.radians(tilt)) > params.mu_static:
        rect = (pose.px + sx, pose.py + sy, pose.px + sx + new_item.sx, pose.py + sy + new_item.sy)
        slide = min(_sweep_distance(container, rect, z0, z1, direction),
                    thresholds.max_displacement + to_cm(1))
        sx += direction[0] * slide
        sy += direction[1] * slide

    bodies = _bodies(container)
    off = params.mass_center_offset
    new_body = _body(None, new_item, pose, off, (sx, sy))
    # tilt moves the projected mass centre downhill by its height above the contact
    lever = new_item.sz * (0.5 + off[2]) * math.tan(math.radians(tilt))
    new_body.com = new_body.com + lever * np.asarray(direction)
    bodies.append(new_body)
    n = len(bodies)

    contacts = [_contacts(bodies, i) for i in range(n)]
    force = np.array([b.mass for b in bodies], dtype=float)
    moment = np.array([b.mass * b.com for b in bodies], dtype=float)
    order = sorted(range(n), key=lambda i: -bodies[i].z0)
    for i in order:
        items_below = [(j, r) for j, r in contacts[i] if j != FLOOR]
        if not contacts[i] or not items_below:
            continue
        resultant = moment[i] / force[i]
        if len(contacts[i]) == 1:
            j = items_below[0][0]
            force[j] += force[i]
            moment[j] += force[i] * resultant
            continue
        areas = np.array([(r[2] - r[0]) * (r[3] - r[1]) for _, r in contacts[i]])
        share = force[i] * areas / areas.sum()
        for (j, r), f in zip(contacts[i], share):
            if j == FLOOR:
                continue
            force[j] += f
            moment[j] += f * np.array([(r[0] + r[2]) / 2, (r[1] + r[3]) / 2])

    shift = [np.zeros(3) for _ in range(n)]
    tilt_add = [0.0] * n
    failed = [False] * n
    for i in sorted(range(n), key=lambda i: bodies[i].z0):
        if any(j != FLOOR and failed[j] for j, _ in contacts[i]):
            failed[i] = True
            sup = next(j for j, _ in contacts[i] if j != FLOOR and failed[j])
            shift[i] = shift[sup].copy()
            tilt_add[i] = TOPPLE_TILT
            continue
        patches = [r for _, r in contacts[i]]
        if not patches:
            # free fall onto whatever lies under the footprint
            floor_u = 0
            for j, o in enumerate(bodies):
                if j != i and o.z1 <= bodies[i].z0 and footprint_overlap_area(o.rect, bodies[i].rect) > _EPS:
                    floor_u = max(floor_u, o.z1)
            shift[i] = np.array([0.0, 0.0, -to_cm(bodies[i].z0 - floor_u)])
            failed[i] = True
            continue
        resultant = moment[i] / force[i]
        if not hull_contains(patches, resultant):
            q = _nearest_hull_point(patches, resultant)
            gap = resultant - q
            dist = float(np.linalg.norm(gap))
            u = gap / dist if dist > _EPS else np.array([1.0, 0.0])
            height = to_cm(bodies[i].z1 - bodies[i].z0)
            reach = dist + 0.5 * height * math.sin(math.radians(TOPPLE_TILT))
            shift[i] = np.array([u[0] * reach, u[1] * reach, 0.0])
            tilt_add[i] = TOPPLE_TILT
            failed[i] = True

    poses = []
    collapsed = set()
    new_items = []
    placed_now = list(container.items) + [None]
    for i in range(n):
        if i < n - 1:
            it = placed_now[i]
            base = it.planned
            cur = it.current
            if failed[i]:
                cur = Pose(base.px + shift[i][0], base.py + shift[i][1], base.pz + shift[i][2],
                           min(base.tilt + tilt_add[i], 89.0))
            if cur is not it.current:
                it = replace(it, current=cur)
            new_items.append(it)
            key = it.id
        else:
            base = pose
            cur = Pose(pose.px + sx + shift[i][0], pose.py + sy + shift[i][1], pose.pz + shift[i][2],
                       min(pose.tilt + tilt + tilt_add[i], 89.0))
            key = new_item.id
        poses.append(cur)
        if collapse_check(base, cur, thresholds):
            collapsed.add(key)

    updated = container.with_items(new_items)
    updated = insert_item(updated, new_item, pose, off, current=poses[-1])
    return SettleOutcome(tuple(poses), frozenset(collapsed), updated)

