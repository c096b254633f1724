"""Occupancy grid and Euclidean distance field.

The map is the shared substrate for path search and for the policy's
obstacle observations: it answers line-of-sight queries, finds obstacle
corners, and interpolates clearance at arbitrary world positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage


class CellIndex(NamedTuple):
    x: int
    y: int


class MapQueryError(ValueError):
    """Raised for map queries with out-of-bounds cell endpoints."""


@dataclass
class OccupancyGrid:
    """Boolean occupancy raster. ``cells[y, x]`` is True when occupied.

    ``origin`` is the world position of the outer corner of cell (0, 0);
    cell centers therefore sit at ``origin + (index + 0.5) * resolution``.
    """

    width: int
    height: int
    resolution: float
    origin: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.cells = np.asarray(self.cells, dtype=bool).reshape(self.height, self.width)

    @classmethod
    def empty(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0)) -> "OccupancyGrid":
        return cls(width, height, resolution, np.asarray(origin, float),
                   np.zeros((height, width), dtype=bool))

    def cell_of(self, p) -> CellIndex:
        """Cell containing world point ``p`` (no bounds check)."""
        p = np.asarray(p, dtype=float)
        c = np.floor((p[:2] - self.origin) / self.resolution).astype(int)
        return CellIndex(int(c[0]), int(c[1]))

    def center_of(self, c) -> np.ndarray:
        return self.origin + (np.asarray([c[0], c[1]], float) + 0.5) * self.resolution

    def in_bounds_cell(self, c) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def in_bounds_world(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        lo = self.origin
        hi = self.origin + np.array([self.width, self.height]) * self.resolution
        return bool(lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1])


@dataclass
class EsdfMap:
    """Occupancy grid plus per-cell distance to the nearest occupied cell center.

    ``occupied`` is the occupancy after inflation; ``distance`` is zero exactly
    on inflated-occupied cells. Instances are immutable by convention and safe
    to share across rollout workers.
    """

    grid: OccupancyGrid
    distance: np.ndarray
    inflation_radius: float
    occupied: np.ndarray
    d_max: float
    corner_mask: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.corner_mask is None:
            self.corner_mask = _corner_mask(self.occupied)
        self.has_obstacles = bool(self.occupied.any())

    # Convenience passthroughs so callers can hold just the EsdfMap.
    @property
    def resolution(self) -> float:
        return self.grid.resolution

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    def cell_of(self, p) -> CellIndex:
        return self.grid.cell_of(p)

    def center_of(self, c) -> np.ndarray:
        return self.grid.center_of(c)

    def in_bounds_cell(self, c) -> bool:
        return self.grid.in_bounds_cell(c)

    def in_bounds_world(self, p) -> bool:
        return self.grid.in_bounds_world(p)

    def is_free_cell(self, c) -> bool:
        return self.grid.in_bounds_cell(c) and not self.occupied[c[1], c[0]]

    def corner_cells(self) -> np.ndarray:
        """All obstacle-corner cells as an (N, 2) array of (x, y)."""
        ys, xs = np.nonzero(self.corner_mask)
        return np.stack([xs, ys], axis=1)


def _corner_mask(occupied: np.ndarray) -> np.ndarray:
    """Free cells with exactly one occupied 8-neighbor (outside counts free)."""
    padded = np.pad(occupied, 1, constant_values=False).astype(np.int16)
    count = np.zeros_like(padded)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            count += np.roll(np.roll(padded, dy, axis=0), dx, axis=1)
    count = count[1:-1, 1:-1]
    return (~occupied) & (count == 1)


def build_esdf(grid: OccupancyGrid, inflation_radius: float = 0.0) -> EsdfMap:
    """Inflate occupancy by ``inflation_radius`` and compute the exact
    Euclidean distance (cell center to nearest occupied cell center).

    Inflation marks a cell occupied when its center lies within the radius of
    an occupied center, boundary inclusive to 1e-9 cell units. A fully free
    grid gets the sentinel ``d_max = resolution * (width + height)`` everywhere.
    """
    if inflation_radius < 0:
        raise ValueError("inflation_radius must be >= 0")
    res = grid.resolution
    occ = grid.cells
    if inflation_radius > 0 and occ.any():
        k = int(math.floor(inflation_radius / res + 1e-9))
        if k > 0:
            dy, dx = np.mgrid[-k:k + 1, -k:k + 1]
            disk = (dx * dx + dy * dy) <= (inflation_radius / res) ** 2 + 1e-9
            occ = ndimage.binary_dilation(occ, structure=disk)
        else:
            occ = occ.copy()
    else:
        occ = occ.copy()

    d_max = res * (grid.width + grid.height)
    if occ.any():
        distance = ndimage.distance_transform_edt(~occ, sampling=res)
    else:
        distance = np.full((grid.height, grid.width), d_max, dtype=float)
    return EsdfMap(grid=grid, distance=np.asarray(distance, float),
                   inflation_radius=inflation_radius, occupied=occ, d_max=d_max)


def supercover_line(a, b):
    """Every cell the closed segment between cell centers ``a`` and ``b``
    touches, in traversal order. Exact corner crossings include both side
    cells, so diagonal gaps between touching obstacles cannot be cut."""
    x0, y0 = int(a[0]), int(a[1])
    x1, y1 = int(b[0]), int(b[1])
    dx, dy = x1 - x0, y1 - y0
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    x, y = x0, y0
    out = [(x, y)]
    ix = iy = 0
    while ix < nx or iy < ny:
        # Compare the next x- and y-boundary crossing parameters:
        # (ix + 0.5)/nx vs (iy + 0.5)/ny, cross-multiplied to stay integer.
        decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if decision == 0:
            out.append((x + sx, y))
            out.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        out.append((x, y))
    return out


def visible_check(m: EsdfMap, a, b) -> bool:
    """True when no cell touched by the segment between the centers of cells
    ``a`` and ``b`` is occupied (inflated occupancy, endpoints included)."""
    if not (m.in_bounds_cell(a) and m.in_bounds_cell(b)):
        raise MapQueryError(f"visible_check endpoints out of bounds: {tuple(a)}, {tuple(b)}")
    x0, y0 = int(a[0]), int(a[1])
    x1, y1 = int(b[0]), int(b[1])
    adx, ady = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x1 >= x0 else -1
    sy = 1 if y1 >= y0 else -1
    # Cell (i, j) of the axis-aligned bounding box is touched by the segment
    # iff 2*|i*ady - j*adx| <= adx + ady (closed cells, integer-exact).
    ii = np.arange(adx + 1)
    jj = np.arange(ady + 1)
    touched = 2 * np.abs(np.subtract.outer(ii * ady, jj * adx)) <= adx + ady
    xs = x0 + sx * ii
    ys = y0 + sy * jj
    occ = m.occupied[np.ix_(ys, xs)]  # (ady+1, adx+1)
    return not bool((occ & touched.T).any())


def is_corner(m: EsdfMap, c) -> bool:
    """True when cell ``c`` is free and has exactly one occupied 8-neighbor."""
    if not m.in_bounds_cell(c):
        raise MapQueryError(f"is_corner cell out of bounds: {tuple(c)}")
    return bool(m.corner_mask[c[1], c[0]])


def esdf_at(m: EsdfMap, p) -> float:
    """Bilinear interpolation of the distance field at world point ``p``.

    Out-of-map points read 0.0 (callers treat that as collision). Points in
    the half-cell border ring clamp to the edge cell values.
    """
    p = np.asarray(p, dtype=float)
    if not m.in_bounds_world(p):
        return 0.0
    res = m.resolution
    u = (p[0] - m.origin[0]) / res - 0.5
    v = (p[1] - m.origin[1]) / res - 0.5
    x0 = int(math.floor(u))
    y0 = int(math.floor(v))
    fx = u - x0
    fy = v - y0
    w, h = m.grid.width, m.grid.height
    x0c = min(max(x0, 0), w - 1)
    x1c = min(max(x0 + 1, 0), w - 1)
    y0c = min(max(y0, 0), h - 1)
    y1c = min(max(y0 + 1, 0), h - 1)
    d = m.distance
    return float((1 - fx) * (1 - fy) * d[y0c, x0c] + fx * (1 - fy) * d[y0c, x1c]
                 + (1 - fx) * fy * d[y1c, x0c] + fx * fy * d[y1c, x1c])


def esdf_at_batch(m: EsdfMap, pts) -> np.ndarray:
    """Vectorized ``esdf_at`` over an (N, 2) array of world points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    res = m.resolution
    lo = m.origin
    hi = m.origin + np.array([m.grid.width, m.grid.height]) * res
    inb = ((pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
           & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1]))
    u = (pts[:, 0] - lo[0]) / res - 0.5
    v = (pts[:, 1] - lo[1]) / res - 0.5
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    fx = u - x0
    fy = v - y0
    w, h = m.grid.width, m.grid.height
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    d = m.distance
    out = ((1 - fx) * (1 - fy) * d[y0c, x0c] + fx * (1 - fy) * d[y0c, x1c]
           + (1 - fx) * fy * d[y1c, x0c] + fx * fy * d[y1c, x1c])
    out[~inb] = 0.0
    return out


def save_map(grid: OccupancyGrid, path) -> None:
    """Plain-text map: header ``width height resolution origin_x origin_y``,
    then ``height`` rows of ``#``/``.`` characters, row 0 (minimum y) first."""
    with open(path, "w") as f:
        f.write(f"{grid.width} {grid.height} {float(grid.resolution)!r} "
                f"{float(grid.origin[0])!r} {float(grid.origin[1])!r}\n")
        for y in range(grid.height):
            f.write("".join("#" if grid.cells[y, x] else "." for x in range(grid.width)))
            f.write("\n")


def load_map(path) -> OccupancyGrid:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5:
            raise ValueError(f"{path}: malformed map header {header!r}")
        width, height = int(header[0]), int(header[1])
        resolution = float(header[2])
        origin = np.array([float(header[3]), float(header[4])])
        cells = np.zeros((height, width), dtype=bool)
        for y in range(height):
            row = f.readline().rstrip("\n")
            if len(row) != width:
                raise ValueError(f"{path}: row {y} has {len(row)} cells, expected {width}")
            cells[y] = [ch == "#" for ch in row]
    return OccupancyGrid(width, height, resolution, origin, cells)
