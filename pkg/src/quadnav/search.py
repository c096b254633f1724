"""Corner-expanding visibility search over the distance-field map.

Nodes are obstacle corners (plus start and goal); edges are straight,
collision-checked segments, so the result is a minimum-length polyline
rather than a grid-constrained staircase. The polyline is then resampled
into evenly spaced control points for the learned controller.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gridmap import CellIndex, EsdfMap, esdf_at, visible_check

DEFAULT_R_MAX = 16          # Chebyshev expansion radius, cells
DEFAULT_D_TRIGGER = 3.0     # goal shortcut check fires with p = d_trigger/d, meters


class UnreachableError(RuntimeError):
    """No collision-free polyline exists between start and goal."""


@dataclass
class SearchNode:
    cell: CellIndex
    g: float
    f: float
    parent: Optional["SearchNode"] = None


@dataclass
class PathPolyline:
    waypoints: np.ndarray  # (K, 2) world positions, start first

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


@dataclass
class ControlPointSequence:
    points: np.ndarray  # (N, 2) world positions along the path
    pass_radius: float = 0.5
    pass_half_height: float = 0.2

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)


def heuristic(a, b) -> float:
    """Straight-line distance; admissible and consistent for path length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b))


def random_visible_check(m: EsdfMap, current, goal, rng, d_trigger: float = DEFAULT_D_TRIGGER) -> bool:
    """Probabilistic goal shortcut: with probability min(1, d_trigger/d) run the
    full visibility check between the two cells, otherwise report False without
    looking. Fires more often the closer the goal gets."""
    d = heuristic(m.center_of(current), m.center_of(goal))
    p = 1.0 if d <= d_trigger else d_trigger / d
    if p < 1.0 and rng.random() >= p:
        return False
    return visible_check(m, current, goal)


@dataclass
class SearchStats:
    expansions: int = 0
    visibility_checks: int = 0


def visibility_search(m: EsdfMap, start, goal, r_max: int = DEFAULT_R_MAX,
                      seed: int = 0, d_trigger: float = DEFAULT_D_TRIGGER,
                      stats: SearchStats | None = None) -> PathPolyline:
    """Minimum-length collision-free polyline from ``start`` to ``goal``.

    Start/goal are snapped to their cell centers for the search; the returned
    polyline restores the exact world endpoints. Interior vertices are
    obstacle corners. Raises ``UnreachableError`` when the open list empties,
    ``ValueError`` when an endpoint cell is occupied or out of bounds.
    """
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    s_cell = m.cell_of(start)
    g_cell = m.cell_of(goal)
    for name, cell in (("start", s_cell), ("goal", g_cell)):
        if not m.in_bounds_cell(cell):
            raise ValueError(f"{name} cell {tuple(cell)} out of map bounds")
        if m.occupied[cell[1], cell[0]]:
            raise ValueError(f"{name} cell {tuple(cell)} is occupied")

    if np.array_equal(start, goal):
        return PathPolyline(np.array([start]))

    rng = np.random.default_rng(seed)
    if stats is None:
        stats = SearchStats()

    corners = m.corner_cells()
    centers = (corners + 0.5) * m.resolution + m.origin if len(corners) else np.zeros((0, 2))
    corner_h = (np.linalg.norm(centers - goal, axis=1)
                if len(corners) else np.zeros(0))

    # Cells identify nodes (visibility runs on cells); costs use the exact
    # start/goal world positions so the returned polyline length equals the
    # minimized objective.
    def node_pos(cell: CellIndex) -> np.ndarray:
        if cell == s_cell:
            return start
        if cell == g_cell:
            return goal
        return m.center_of(cell)

    counter = 0
    h0 = heuristic(start, goal)
    open_heap = [(h0, h0, counter, s_cell)]
    g_best = {s_cell: 0.0}
    parent: dict[CellIndex, CellIndex] = {}
    closed: set[CellIndex] = set()

    def traverse(last_cell: CellIndex) -> PathPolyline:
        chain = [g_cell] if g_cell != last_cell else []
        cell = last_cell
        while True:
            chain.append(cell)
            if cell == s_cell:
                break
            cell = parent[cell]
        chain.reverse()
        return PathPolyline(np.array([node_pos(c) for c in chain]))

    while open_heap:
        f, h, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        closed.add(cell)
        stats.expansions += 1

        if cell == g_cell:
            return traverse(cell)
        stats.visibility_checks += 1
        if random_visible_check(m, cell, g_cell, rng, d_trigger):
            return traverse(cell)

        cur_pos = node_pos(cell)
        g_cur = g_best[cell]

        # Candidate cells for this expansion: the goal plus every corner
        # within the Chebyshev radius, visited ring by ring.
        cand = []
        gdx, gdy = g_cell[0] - cell[0], g_cell[1] - cell[1]
        g_ring = max(abs(gdx), abs(gdy))
        if 1 <= g_ring <= r_max:
            cand.append((g_ring, gdy, gdx, -1))
        if len(corners):
            dx = corners[:, 0] - cell[0]
            dy = corners[:, 1] - cell[1]
            ring = np.maximum(np.abs(dx), np.abs(dy))
            sel = np.nonzero((ring >= 1) & (ring <= r_max))[0]
            for i in sel:
                cand.append((int(ring[i]), int(dy[i]), int(dx[i]), int(i)))
        cand.sort()

        for ring, dy, dx, idx in cand:
            n_cell = CellIndex(cell[0] + dx, cell[1] + dy)
            if idx == -1:
                stats.visibility_checks += 1
                if visible_check(m, cell, g_cell):
                    g_best[g_cell] = g_cur + heuristic(cur_pos, goal)
                    parent[g_cell] = cell
                    return traverse(g_cell)
                continue
            if n_cell in closed:
                continue
            stats.visibility_checks += 1
            if not visible_check(m, cell, n_cell):
                continue
            g_temp = g_cur + heuristic(cur_pos, centers[idx])
            if n_cell in g_best and g_best[n_cell] <= g_temp:
                continue
            g_best[n_cell] = g_temp
            parent[n_cell] = cell
            counter += 1
            nh = float(corner_h[idx])
            heapq.heappush(open_heap, (g_temp + nh, nh, counter, n_cell))

    raise UnreachableError(f"no path from {tuple(s_cell)} to {tuple(g_cell)} within the map")


def oracle_shortest_length(m: EsdfMap, start, goal) -> float | None:
    """Brute-force reference: Dijkstra over the dense graph of obstacle
    corners plus the start/goal cells, with an edge wherever the straight
    segment is collision-free. Much slower than the search proper; used for
    cross-checking its output."""
    start = np.asarray(start, float)[:2]
    goal = np.asarray(goal, float)[:2]
    s_cell = m.cell_of(start)
    g_cell = m.cell_of(goal)
    nodes = [tuple(c) for c in m.corner_cells()]
    for extra in (tuple(s_cell), tuple(g_cell)):
        if extra not in nodes:
            nodes.append(extra)
    centers = {n: m.center_of(n) for n in nodes}
    centers[tuple(s_cell)] = start
    centers[tuple(g_cell)] = goal
    dist = {tuple(s_cell): 0.0}
    done = set()
    heap = [(0.0, tuple(s_cell))]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == tuple(g_cell):
            return d
        for v in nodes:
            if v in done or not visible_check(m, u, v):
                continue
            nd = d + float(np.linalg.norm(centers[u] - centers[v]))
            if v not in dist or nd < dist[v] - 1e-15:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return None


def sample_control_points(path: PathPolyline, current, spacing: float, count: int,
                          pass_radius: float = 0.5, pass_half_height: float = 0.2) -> ControlPointSequence:
    """Resample the polyline into control points, walking from the point on
    the path nearest to ``current``: one sample every ``spacing`` meters of
    arc length, every polyline vertex passed on the way, and the goal last,
    truncated to ``count`` points."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    pts = path.waypoints
    if len(pts) == 1:
        return ControlPointSequence(pts.copy(), pass_radius, pass_half_height)

    current = np.asarray(current, dtype=float)[:2]
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    # Arc length of the path point nearest to `current`.
    s0 = 0.0
    best = np.inf
    for i in range(len(seg)):
        if seg_len[i] < 1e-12:
            t = 0.0
        else:
            t = float(np.clip(np.dot(current - pts[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0))
        p = pts[i] + t * seg[i]
        d = float(np.linalg.norm(current - p))
        if d < best - 1e-12:
            best = d
            s0 = cum[i] + t * seg_len[i]

    marks: list[float] = []
    k = 1
    while s0 + k * spacing < total - 1e-9:
        marks.append(s0 + k * spacing)
        k += 1
    marks.extend(s for s in cum[1:-1] if s0 + 1e-9 < s < total - 1e-9)
    marks.append(total)
    marks.sort()
    dedup = []
    for s in marks:
        if not dedup or s - dedup[-1] > 1e-9:
            dedup.append(s)
    dedup = dedup[:count]

    out = np.empty((len(dedup), 2))
    j = 0
    for i, s in enumerate(dedup):
        while j < len(seg) - 1 and cum[j + 1] < s:
            j += 1
        t = (s - cum[j]) / seg_len[j] if seg_len[j] > 1e-12 else 0.0
        out[i] = pts[j] + t * seg[j]
    return ControlPointSequence(out, pass_radius, pass_half_height)
