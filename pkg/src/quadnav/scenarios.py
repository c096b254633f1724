"""Flight scenarios: a map plus start/goal and a z band, loaded from YAML
or taken from the built-in evaluation scenes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .gridmap import OccupancyGrid, load_map


@dataclass
class Scenario:
    name: str
    grid: OccupancyGrid
    start: np.ndarray       # (2,) world
    goal: np.ndarray        # (2,) world
    z_center: float = 1.0
    z_halfwidth: float = 0.3
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.start = np.asarray(self.start, float).reshape(2)
        self.goal = np.asarray(self.goal, float).reshape(2)
        if self.z_halfwidth <= 0:
            raise ValueError("z_halfwidth must be positive")

    @property
    def start3(self) -> np.ndarray:
        return np.array([self.start[0], self.start[1], self.z_center])


def _grid_with_circles(width_m, height_m, origin, circles, resolution=0.1) -> OccupancyGrid:
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    g = OccupancyGrid.empty(w, h, resolution, origin=origin)
    ys, xs = np.mgrid[0:h, 0:w]
    cx = g.origin[0] + (xs + 0.5) * resolution
    cy = g.origin[1] + (ys + 0.5) * resolution
    for x, y, r in circles:
        g.cells |= (cx - x) ** 2 + (cy - y) ** 2 <= r ** 2
    return g


def _grid_with_rects(width_m, height_m, origin, rects, resolution=0.1) -> OccupancyGrid:
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    g = OccupancyGrid.empty(w, h, resolution, origin=origin)
    ys, xs = np.mgrid[0:h, 0:w]
    cx = g.origin[0] + (xs + 0.5) * resolution
    cy = g.origin[1] + (ys + 0.5) * resolution
    for x0, y0, x1, y1 in rects:
        g.cells |= (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
    return g


def built_in_scenes() -> dict[str, Scenario]:
    """Four evaluation scenes: a straight corridor, a pillar slalom, a dense
    block field, and a wall with a single gap."""
    scenes = {}

    scenes["corridor"] = Scenario(
        name="corridor",
        grid=_grid_with_circles(14.0, 6.0, (-2.0, -3.0), []),
        start=(0.0, 0.0), goal=(10.0, 0.0),
    )

    scenes["slalom"] = Scenario(
        name="slalom",
        grid=_grid_with_circles(14.0, 8.0, (-2.0, -4.0), [
            (2.5, -0.5, 0.4),
            (5.0, 0.5, 0.4),
            (7.5, -0.5, 0.4),
        ]),
        start=(0.0, 0.0), goal=(10.0, 0.0),
    )

    scenes["dense"] = Scenario(
        name="dense",
        grid=_grid_with_rects(14.0, 8.0, (-2.0, -4.0), [
            (2.2, -2.4, 3.0, -1.6),
            (2.2, 0.4, 3.0, 1.2),
            (4.8, -1.2, 5.6, -0.4),
            (4.8, 1.8, 5.6, 2.6),
            (7.4, -2.2, 8.2, -1.4),
            (7.4, 0.6, 8.2, 1.4),
        ]),
        start=(0.0, 0.0), goal=(10.0, 0.0),
    )

    scenes["gap"] = Scenario(
        name="gap",
        grid=_grid_with_rects(14.0, 8.0, (-2.0, -4.0), [
            (4.8, -4.0, 5.2, -0.8),
            (4.8, 0.8, 5.2, 4.0),
        ]),
        start=(0.0, 0.0), goal=(10.0, 0.0),
    )
    return scenes


def load_scenario(path) -> Scenario:
    """YAML scenario: either ``map: <map file path>`` or an inline
    ``obstacles`` list of ``{x, y, radius}`` with ``extent``; plus ``start``,
    ``goal``, optional ``z_center``/``z_halfwidth`` and ``env`` overrides."""
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario file must be a mapping")
    try:
        start = data["start"]
        goal = data["goal"]
    except KeyError as e:
        raise ValueError(f"{path}: missing scenario key {e}") from e
    if "map" in data:
        grid = load_map(data["map"])
    elif "obstacles" in data:
        extent = data.get("extent", {})
        grid = _grid_with_circles(
            float(extent.get("width", 14.0)), float(extent.get("height", 8.0)),
            (float(extent.get("origin_x", -2.0)), float(extent.get("origin_y", -4.0))),
            [(float(o["x"]), float(o["y"]), float(o["radius"])) for o in data["obstacles"]],
            resolution=float(extent.get("resolution", 0.1)),
        )
    else:
        raise ValueError(f"{path}: scenario needs either 'map' or 'obstacles'")
    return Scenario(
        name=str(data.get("name", "scenario")),
        grid=grid,
        start=np.asarray(start, float),
        goal=np.asarray(goal, float),
        z_center=float(data.get("z_center", 1.0)),
        z_halfwidth=float(data.get("z_halfwidth", 0.3)),
        env_overrides=dict(data.get("env", {})),
    )
