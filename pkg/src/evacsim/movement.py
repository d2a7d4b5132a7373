"""Density map, speed model, obstacle-sliding pathfinding and arrival checks."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .agents import ARRIVAL_TOLERANCE, Agent, AgentState, is_exit
from .geometry import Point, Rect, StadiumModel, clip_segment


@dataclass(frozen=True)
class SpeedParams:
    base_standard: float = 24.0
    base_accessibility: float = 16.0
    min_standard: float = 6.4
    min_accessibility: float = 4.8
    coordinator_boost_factor: float = 1.33
    coordinator_boost_radius: float = 50.0
    density_free_threshold: int = 4
    density_jam_threshold: int = 30
    density_radius: float = 20.0

    def __post_init__(self) -> None:
        if not (self.min_standard < self.base_standard and self.min_accessibility < self.base_accessibility):
            raise ValueError("minimum speeds must be below base speeds")
        if not self.density_free_threshold < self.density_jam_threshold:
            raise ValueError("free-flow threshold must be below the jam threshold")


DEFAULT_SPEED = SpeedParams()


# --------------------------------------------------------------------------
# density
# --------------------------------------------------------------------------

def compute_density(positions, radius: float = DEFAULT_SPEED.density_radius) -> np.ndarray:
    """Count, for each position, the *other* positions within ``radius`` (inclusive).

    Uses a uniform grid with cells a hair wider than ``radius``, so only the
    3x3 block of cells around each point needs scanning even when rounding
    puts a pair at exactly ``radius``.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cells = np.floor(pos / (radius * (1 + 1e-9))).astype(np.int64)
    cx = cells[:, 0] - cells[:, 0].min() + 1
    cy = cells[:, 1] - cells[:, 1].min() + 1
    stride = int(cy.max()) + 2
    key = cx * stride + cy
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    r2 = radius * radius
    counts = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            nkey = (cx + dx) * stride + (cy + dy)
            lo = np.searchsorted(sorted_key, nkey, side="left")
            hi = np.searchsorted(sorted_key, nkey, side="right")
            lens = hi - lo
            total = int(lens.sum())
            if total == 0:
                continue
            src = np.repeat(idx, lens)
            offsets = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
            dst = order[np.repeat(lo, lens) + offsets]
            diff = pos[src] - pos[dst]
            close = (diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) <= r2
            counts += np.bincount(src[close], minlength=n)
    return counts - 1


# --------------------------------------------------------------------------
# speed
# --------------------------------------------------------------------------

def adjusted_speed(agent, nearby_count: int, coordinator_near: bool = False,
                   params: SpeedParams = DEFAULT_SPEED) -> float:
    """Per-round speed in px; ``agent`` may be an Agent or its accessibility flag."""
    accessible = agent if isinstance(agent, (bool, np.bool_)) else agent.accessibility
    if nearby_count < 0:
        raise ValueError("nearby_count must be non-negative")
    if accessible:
        base, floor = params.base_accessibility, params.min_accessibility
    else:
        base, floor = params.base_standard, params.min_standard
    if coordinator_near:
        base = base * params.coordinator_boost_factor
    free, jam = params.density_free_threshold, params.density_jam_threshold
    if nearby_count <= free:
        factor = 1.0
    elif nearby_count >= jam:
        factor = 0.0
    else:
        factor = 1.0 - (nearby_count - free) / (jam - free)
    return max(floor, base * factor)


# --------------------------------------------------------------------------
# pathfinding
# --------------------------------------------------------------------------

_EPS = 1e-9
_FACE_TOL = 1e-7
_MAX_LEGS = 8


def _blocks(a: Point, b: Point, rect: Rect) -> Optional[float]:
    """Parameter at which a->b enters the open interior of ``rect``, if it does.

    Touching a corner or running along an edge is not blocking.
    """
    span = clip_segment(a, b, rect)
    if span is None or span[1] - span[0] <= 1e-12:
        return None
    tm = 0.5 * (span[0] + span[1])
    mid = (a[0] + tm * (b[0] - a[0]), a[1] + tm * (b[1] - a[1]))
    if rect.contains_strict(mid, _EPS):
        return span[0]
    return None


def _first_block(a: Point, b: Point, rects: Sequence[Rect]) -> Optional[tuple[float, Rect]]:
    best = None
    for r in rects:
        t = _blocks(a, b, r)
        if t is not None and (best is None or t < best[0]):
            best = (t, r)
    return best


def _snap_to_boundary(p: Point, rect: Rect) -> Point:
    x, y = p
    x = min(max(x, rect.x0), rect.x1)
    y = min(max(y, rect.y0), rect.y1)
    gaps = [abs(x - rect.x0), abs(x - rect.x1), abs(y - rect.y0), abs(y - rect.y1)]
    g = min(gaps)
    if gaps[0] == g or gaps[0] < _FACE_TOL:
        x = rect.x0
    if gaps[1] == g or gaps[1] < _FACE_TOL:
        x = rect.x1
    if gaps[2] == g or gaps[2] < _FACE_TOL:
        y = rect.y0
    if gaps[3] == g or gaps[3] < _FACE_TOL:
        y = rect.y1
    return (x, y)


def _around_distance(src: Point, dst: Point, rect: Rect) -> float:
    """Shortest path length from ``src`` to ``dst`` that avoids the rect interior."""
    nodes = [src, *rect.corners, dst]
    n = len(nodes)
    best = [math.inf] * n
    best[0] = 0.0
    heap = [(0.0, 0)]
    while heap:
        d, i = heapq.heappop(heap)
        if d > best[i]:
            continue
        if i == n - 1:
            return d
        for j in range(1, n):
            if j == i or _blocks(nodes[i], nodes[j], rect) is not None:
                continue
            nd = d + math.dist(nodes[i], nodes[j])
            if nd < best[j]:
                best[j] = nd
                heapq.heappush(heap, (nd, j))
    return best[-1]


def _slide_options(p: Point, rect: Rect) -> list[tuple[Point, Point]]:
    """(unit direction, corner reached) for every way along the faces holding ``p``."""
    x, y = p
    opts = []
    if x == rect.x0 or x == rect.x1:
        opts.append(((0.0, -1.0), (x, rect.y0)))
        opts.append(((0.0, 1.0), (x, rect.y1)))
    if y == rect.y0 or y == rect.y1:
        opts.append(((-1.0, 0.0), (rect.x0, y)))
        opts.append(((1.0, 0.0), (rect.x1, y)))
    return [(d, c) for d, c in opts if c != p]


def _choose_slide(p: Point, target: Point, rect: Rect, budget: float) -> Optional[tuple[Point, Point]]:
    best = None
    for d, corner in _slide_options(p, rect):
        cost = math.dist(p, corner) + _around_distance(corner, target, rect)
        s = min(budget, math.dist(p, corner))
        result = (p[0] + d[0] * s, p[1] + d[1] * s)
        key = (cost, result[0], result[1])
        if best is None or key[0] < best[0][0] - _EPS or (
                abs(key[0] - best[0][0]) <= _EPS and key[1:] < best[0][1:]):
            best = (key, d, corner)
    if best is None:
        return None
    return best[1], best[2]


def step_position(model: StadiumModel, current: Point, target: Point, speed: float) -> Point:
    """Advance ``speed`` px toward ``target``, sliding along obstacle faces.

    The straight leg stops where it would enter an obstacle; the remaining
    distance is spent along the hit face toward whichever corner gives the
    shorter way around to the target (ties: smaller x, then smaller y).
    Obstacles the agent starts strictly inside are ignored.
    """
    if speed < 0:
        raise ValueError("speed must be non-negative")
    obstacles = [o for o in model.obstacles if not o.contains_strict(current)]
    p = (float(current[0]), float(current[1]))
    target = (float(target[0]), float(target[1]))
    budget = float(speed)
    for _ in range(_MAX_LEGS):
        if budget <= _EPS:
            break
        dist = math.dist(p, target)
        if dist <= _EPS:
            break
        step = min(budget, dist)
        if step == dist:
            q = target
        else:
            q = (p[0] + (target[0] - p[0]) / dist * step, p[1] + (target[1] - p[1]) / dist * step)
        hit = _first_block(p, q, obstacles)
        if hit is None:
            p = q
            budget -= step
            continue
        t, rect = hit
        entry = _snap_to_boundary((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])), rect)
        budget -= step * t
        p = entry
        slide = _choose_slide(p, target, rect, budget)
        if slide is None:
            break
        d, corner = slide
        reach = math.dist(p, corner)
        s = min(budget, reach)
        q = corner if s == reach else (p[0] + d[0] * s, p[1] + d[1] * s)
        hit = _first_block(p, q, [o for o in obstacles if o is not rect])
        if hit is not None:
            t2, other = hit
            p = _snap_to_boundary((p[0] + t2 * (q[0] - p[0]), p[1] + t2 * (q[1] - p[1])), other)
            budget -= s * t2
            continue
        p = q
        budget -= s
    return (min(max(p[0], 0.0), model.width), min(max(p[1], 0.0), model.height))


# --------------------------------------------------------------------------
# arrivals
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalEvent:
    agent_id: int
    destination: str
    exited: bool


def check_arrival(agent: Agent, tolerance: float = ARRIVAL_TOLERANCE) -> Optional[ArrivalEvent]:
    if agent.state is not AgentState.MOVING:
        raise ValueError(f"agent {agent.id} is not moving")
    if math.dist(agent.position, agent.target) <= tolerance:
        return ArrivalEvent(agent.id, agent.destination, is_exit(agent.destination))
    return None
