"""Episodic flight environment.

Builds observations (kinematics, relative control points, reduced
obstacle features), scores steps with a normalized progress reward plus
penalty terms, randomizes scenes and physical parameters between
episodes, and applies commands through a fixed-latency queue to emulate
real actuation.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .dynamics import (
    AttitudeSingularityError,
    BodyCommand,
    QuadParams,
    QuadState,
    rate_controller,
    rk4_step,
    rotation_matrix,
    thrust_acceleration,
)
from .gridmap import EsdfMap, OccupancyGrid, build_esdf, esdf_at, esdf_at_batch

# Sector raycast geometry for the obstacle observation.
KGP_HALF_ANGLE = math.radians(25.0)
KGP_RAYS = 11
KGP_V_MIN = 0.05  # m/s below which the velocity sector reuses the CP direction

RING_RADIUS = 0.5  # m, offset of the eight surrounding distance samples


@dataclass
class EnvConfig:
    # control interface
    dt: float = 0.02
    substeps: int = 4
    # soft dynamic limits
    v_max: float = 3.0
    a_max: float = 6.0
    attitude_limit: float = 1.2
    # reward coefficients
    k_p: float = 2.0
    k_d: float = 5.0
    k_v: float = 5.0
    k_s: float = 0.01
    r_c: float = -600.0
    r_f: float = 300.0
    r_t: float = -1.5
    # control point pass column
    d_hor: float = 0.5
    d_hgt: float = 0.2
    # camera field of view (half angles) and obstacle sensing range
    fov_half_h: float = math.radians(43.5)
    fov_half_v: float = math.radians(29.0)
    sensing_horizon: float = 5.0
    # actuation latency and domain randomization (fractional half-ranges)
    action_delay_steps: int = 1
    domain_rand_enabled: bool = True
    mass_rand: float = 0.1
    inertia_rand: float = 0.1
    kappa_rand: float = 0.1
    thrust_rand: float = 0.1
    # scene randomization
    cp_count: int = 2
    cp_dist_min: float = 1.5
    cp_dist_max: float = 4.0
    cp_bearing_max: float = math.radians(60.0)
    cp_z_jitter: float = 0.15
    obstacle_count_min: int = 0
    obstacle_count_max: int = 6
    obstacle_radius_min: float = 0.2
    obstacle_radius_max: float = 0.6
    channel_clearance: float = 0.1
    init_speed_frac: float = 0.6
    init_dir_sigma: float = 0.3
    init_tilt_max: float = 0.15
    init_rate_max: float = 0.3
    # scenario-mode start jitter (seed-dependent variation across eval runs)
    scenario_pos_noise: float = 0.03
    scenario_vel_noise: float = 0.05
    scenario_yaw_noise: float = 0.05
    # action scaling
    max_rate: float = 5.0
    # map geometry
    resolution: float = 0.1
    map_half_extent: float = 10.0
    inflation_radius: float = 0.3
    z_center: float = 1.0
    z_min: float = 0.1
    z_max: float = 2.5
    # episode horizon
    max_episode_steps: int = 600

    def __post_init__(self):
        if min(self.v_max, self.a_max, self.dt, self.d_hor, self.d_hgt) <= 0:
            raise ValueError("v_max, a_max, dt, d_hor, d_hgt must be positive")
        if self.substeps < 1 or self.max_episode_steps < 1:
            raise ValueError("substeps and max_episode_steps must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)


OBS_FIELDS = (
    ("v_w", 3),
    ("omega_b", 3),
    ("theta", 3),
    ("heading", 3),
    ("rel_cp1", 3),
    ("rel_cp2", 3),
    ("o_cp", 4),
    ("o_vcp", 4),
    ("d_vel", 1),
    ("o_sdf", 9),
)


def obs_dim() -> int:
    return sum(n for _, n in OBS_FIELDS)


def obs_layout() -> str:
    return ",".join(f"{name}:{n}" for name, n in OBS_FIELDS)


def obs_layout_hash() -> str:
    return hashlib.sha256(obs_layout().encode()).hexdigest()[:16]


def obs_slices() -> dict:
    out = {}
    i = 0
    for name, n in OBS_FIELDS:
        out[name] = slice(i, i + n)
        i += n
    return out


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


class ActionDelayQueue:
    """FIFO of body commands; the output at step t is the command issued at
    step t - delay. Primed with hover commands."""

    def __init__(self, delay: int, hover_cmd: BodyCommand):
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.delay = delay
        self._fifo = deque(
            BodyCommand(hover_cmd.f_T, hover_cmd.omega_req.copy()) for _ in range(delay)
        )

    def push(self, cmd: BodyCommand) -> BodyCommand:
        if self.delay == 0:
            return cmd
        self._fifo.append(cmd)
        return self._fifo.popleft()


@dataclass
class RewardEvents:
    """Step context for the reward: the control point that was active during
    the step (progress target), the two points to keep in view afterwards,
    and the terminal event flags."""

    cp_progress: np.ndarray
    fov_cp1: np.ndarray
    fov_cp2: np.ndarray
    collision: bool = False
    finished: bool = False


def segment_column_entry(p0, p1, center, radius: float, half_height: float):
    """Entry parameter t in [0, 1] where the segment p0->p1 first lies inside
    the vertical column (planar radius, z half-height) around ``center``, or
    None when it never does. Boundary contact counts as inside."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    c = np.asarray(center, float)
    d = p1 - p0
    lo, hi = 0.0, 1.0

    dz = d[2]
    z0 = p0[2] - c[2]
    if abs(dz) < 1e-12:
        if abs(z0) > half_height:
            return None
    else:
        t1 = (-half_height - z0) / dz
        t2 = (half_height - z0) / dz
        lo = max(lo, min(t1, t2))
        hi = min(hi, max(t1, t2))

    f = p0[:2] - c[:2]
    a = float(d[:2] @ d[:2])
    if a < 1e-16:
        if f @ f > radius * radius:
            return None
    else:
        b = 2.0 * float(f @ d[:2])
        cq = float(f @ f) - radius * radius
        disc = b * b - 4 * a * cq
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        lo = max(lo, (-b - sq) / (2 * a))
        hi = min(hi, (-b + sq) / (2 * a))

    if lo > hi + 1e-12:
        return None
    return max(lo, 0.0)


def point_in_fov(state: QuadState, point, fov_half_h: float, fov_half_v: float) -> bool:
    """Is the world point inside the camera pyramid attached to the body
    x-axis (horizontal/vertical half angles)?"""
    rel = np.asarray(point, float) - state.p_w
    b = rotation_matrix(state.theta).T @ rel
    if b[0] <= 0:
        return False
    return (abs(math.atan2(b[1], b[0])) <= fov_half_h
            and abs(math.atan2(b[2], b[0])) <= fov_half_v)


def compute_reward(prev: QuadState, cur: QuadState, events: RewardEvents,
                   config: EnvConfig) -> tuple[float, dict]:
    """Weighted sum of: normalized progress toward the active control point
    (with a constant time penalty), collision penalty, dynamic-limit
    violation count, field-of-view loss, and a body-rate smoothness penalty,
    plus the completion bonus."""
    t = segment_column_entry(prev.p_w, cur.p_w, events.cp_progress,
                             config.d_hor, config.d_hgt)
    if t is None:
        p_int = np.asarray(events.cp_progress, float)
    else:
        p_int = prev.p_w + t * (cur.p_w - prev.p_w)
    r_p = ((np.linalg.norm(p_int - prev.p_w) - np.linalg.norm(p_int - cur.p_w))
           / (config.v_max * config.dt)) + config.r_t

    n_viol = 0
    if np.linalg.norm(cur.v_w) > config.v_max:
        n_viol += 1
    if np.linalg.norm(cur.a_w) > config.a_max:
        n_viol += 1
    if max(abs(cur.theta[0]), abs(cur.theta[1])) > config.attitude_limit:
        n_viol += 1
    r_d = -float(n_viol)

    in_view = (point_in_fov(cur, events.fov_cp1, config.fov_half_h, config.fov_half_v)
               or point_in_fov(cur, events.fov_cp2, config.fov_half_h, config.fov_half_v))
    r_v = 0.0 if in_view else -1.0

    breakdown = {
        "r_p": float(r_p),
        "collision": config.r_c if events.collision else 0.0,
        "r_d": r_d,
        "r_v": r_v,
        "smooth": -config.k_s * float(np.linalg.norm(cur.omega_b)),
        "r_f": config.r_f if events.finished else 0.0,
    }
    reward = (config.k_p * breakdown["r_p"] + breakdown["collision"]
              + config.k_d * breakdown["r_d"] + config.k_v * breakdown["r_v"]
              + breakdown["smooth"] + breakdown["r_f"])
    return float(reward), breakdown


def _first_hit_steps(m: EsdfMap, origin_xy, dirs, ranges):
    """March rays from origin in map-resolution steps. Returns per-ray hit
    step index (-1 when free to range) given directions (K,2) and ranges (K,).
    Cells outside the map count as walls."""
    res = m.resolution
    max_steps = int(np.ceil(ranges.max() / res)) if len(ranges) else 0
    if max_steps == 0:
        return np.full(len(dirs), -1, dtype=int), np.zeros((len(dirs), 0, 2), dtype=int)
    steps = (np.arange(1, max_steps + 1) * res)
    pts = origin_xy[None, None, :] + dirs[:, None, :] * steps[None, :, None]
    cells = np.floor((pts - m.origin[None, None, :]) / res).astype(int)
    xs, ys = cells[..., 0], cells[..., 1]
    inb = (xs >= 0) & (xs < m.grid.width) & (ys >= 0) & (ys < m.grid.height)
    occ = np.ones(xs.shape, dtype=bool)
    occ[inb] = m.occupied[ys[inb], xs[inb]]
    occ &= steps[None, :] <= ranges[:, None] + 1e-12
    in_range = steps[None, :] <= ranges[:, None] + 1e-12
    hit = occ & in_range
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    return first, cells


def _sector_edges(m: EsdfMap, p_xy, center_dir, sector_range, horizon):
    """Raycast a planar sector and return up to two obstacle-edge points
    (relative to p_xy, nearest first), padded with the sentinel point at the
    sensing horizon along the sector center."""
    base = math.atan2(center_dir[1], center_dir[0])
    angles = base + np.linspace(-KGP_HALF_ANGLE, KGP_HALF_ANGLE, KGP_RAYS)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ranges = np.full(KGP_RAYS, sector_range)
    first, cells = _first_hit_steps(m, p_xy, dirs, ranges)

    res = m.resolution
    found = []  # (distance, cell, rel_point)
    for k in range(KGP_RAYS):
        i = int(first[k])
        if i < 0:
            continue
        cell = (int(cells[k, i, 0]), int(cells[k, i, 1]))
        # Edge test: a free cell beside the hit, perpendicular to the ray.
        perp = np.array([-dirs[k, 1], dirs[k, 0]])
        off = (int(round(perp[0])), int(round(perp[1])))
        edge = False
        for sgn in (1, -1):
            nx, ny = cell[0] + sgn * off[0], cell[1] + sgn * off[1]
            if m.in_bounds_cell((nx, ny)) and not m.occupied[ny, nx]:
                edge = True
                break
        if not edge:
            continue
        dist = (i + 1) * res
        rel = dirs[k] * dist
        found.append((dist, cell, rel))

    found.sort(key=lambda e: e[0])
    out = []
    seen = set()
    for dist, cell, rel in found:
        if cell in seen:
            continue
        seen.add(cell)
        out.append(rel)
        if len(out) == 2:
            break
    sentinel = np.asarray(center_dir, float) * horizon
    while len(out) < 2:
        out.append(sentinel.copy())
    return np.concatenate(out)


def kgp_observe(m: EsdfMap, p_w, v_w, p_cp, sensing_horizon: float = 5.0):
    """Obstacle features: edge points inside a sector toward the control
    point, the same toward the velocity control point (current position
    advanced along the velocity by the control-point distance), and the free
    distance along the velocity direction."""
    p_w = np.asarray(p_w, float).reshape(3)
    v_w = np.asarray(v_w, float).reshape(3)
    p_cp = np.asarray(p_cp, float).reshape(3)
    p_xy = p_w[:2]

    cp_vec = p_cp[:2] - p_xy
    cp_norm = float(np.linalg.norm(cp_vec))
    if cp_norm > 1e-9:
        dir_cp = cp_vec / cp_norm
    else:
        dir_cp = np.array([1.0, 0.0])
    cp_dist = float(np.linalg.norm(p_cp - p_w))
    range_cp = min(max(cp_dist, 1e-9), sensing_horizon)

    speed = float(np.linalg.norm(v_w))
    v_xy_norm = float(np.linalg.norm(v_w[:2]))
    if speed < KGP_V_MIN or v_xy_norm < 1e-9:
        dir_v = dir_cp
    else:
        dir_v = v_w[:2] / v_xy_norm

    if not m.has_obstacles:
        # every ray runs clear: both sectors read their sentinels
        o_cp = np.concatenate([dir_cp * sensing_horizon, dir_cp * sensing_horizon])
        o_vcp = np.concatenate([dir_v * sensing_horizon, dir_v * sensing_horizon])
        return o_cp, o_vcp, sensing_horizon

    o_cp = _sector_edges(m, p_xy, dir_cp, range_cp, sensing_horizon)
    o_vcp = _sector_edges(m, p_xy, dir_v, range_cp, sensing_horizon)

    first, _ = _first_hit_steps(m, p_xy, dir_v[None, :], np.array([sensing_horizon]))
    if first[0] < 0:
        d_vel = sensing_horizon
    else:
        d_vel = float((first[0] + 1) * m.resolution)
    return o_cp, o_vcp, d_vel


_RING_OFFSETS = np.vstack([
    np.zeros(2),
    RING_RADIUS * np.stack([np.cos(np.arange(8) * math.pi / 4),
                            np.sin(np.arange(8) * math.pi / 4)], axis=1),
])


def esdf_ring_observe(m: EsdfMap, p_w, sensing_horizon: float = 5.0) -> np.ndarray:
    """Clearance at the current position and on a ring of eight samples
    around it, each clamped to the sensing horizon."""
    p_xy = np.asarray(p_w, float)[:2]
    return np.minimum(esdf_at_batch(m, p_xy[None, :] + _RING_OFFSETS), sensing_horizon)


def select_policy_model(m: EsdfMap, p_w, chain, clearance: float = 1.5,
                        horizon: float = 5.0) -> str:
    """``obstacle`` when the control-point chain ahead (up to the sensing
    horizon of arc length) passes within ``clearance`` of an obstacle,
    otherwise ``free``."""
    pts = np.asarray(chain, float)[:, :2]
    p_xy = np.asarray(p_w, float)[:2]
    if len(pts) == 1:
        pts = np.vstack([p_xy, pts])
    # nearest point on the chain
    best_d, best = np.inf, (0, 0.0)
    for i in range(len(pts) - 1):
        seg = pts[i + 1] - pts[i]
        L2 = float(seg @ seg)
        t = 0.0 if L2 < 1e-18 else float(np.clip((p_xy - pts[i]) @ seg / L2, 0.0, 1.0))
        q = pts[i] + t * seg
        d = float(np.linalg.norm(q - p_xy))
        if d < best_d - 1e-12:
            best_d, best = d, (i, t)
    i0, t0 = best
    walked = 0.0
    q = pts[i0] + t0 * (pts[i0 + 1] - pts[i0])
    min_d = min(esdf_at(m, q), m.d_max)
    step = m.resolution
    i, t = i0, t0
    while walked < horizon and i < len(pts) - 1:
        seg = pts[i + 1] - pts[i]
        L = float(np.linalg.norm(seg))
        if L < 1e-12:
            i += 1
            t = 0.0
            continue
        t_next = t + step / L
        if t_next > 1.0:
            walked += (1.0 - t) * L
            i += 1
            t = 0.0
            continue
        t = t_next
        walked += step
        q = pts[i] + t * seg
        min_d = min(min_d, esdf_at(m, q))
        if min_d < clearance:
            return "obstacle"
    return "obstacle" if min_d < clearance else "free"


@dataclass
class _Scene:
    esdf: EsdfMap
    control_points: np.ndarray  # (N, 3)
    obstacles: list  # (center_xy, radius) pairs actually placed


class QuadEnv:
    """Single flight episode: reset samples a scene (or loads a scenario),
    step applies one delayed body command through the rate loop and physics
    substeps, then scores and observes. Instances keep their own RNG and are
    meant to run one per rollout worker."""

    def __init__(self, config: EnvConfig | None = None, params: QuadParams | None = None,
                 seed: int | None = None):
        self.config = config if config is not None else EnvConfig()
        self.base_params = params if params is not None else QuadParams()
        self._rng = np.random.default_rng(seed)
        self._free_map_cache: EsdfMap | None = None
        self.map: EsdfMap | None = None
        self.control_points: np.ndarray | None = None
        self.cp_index = 0
        self.state: QuadState | None = None
        self.stats = {"scene_retries": 0}
        self._done = True
        self._steps = 0

    # ------------------------------------------------------------------ reset

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Randomized training episode: quadrotor at the map center, a short
        control-point chain in a random direction, optional obstacles near
        the chain, randomized initial kinematics and physics."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        rng = self._rng

        for _ in range(50):
            scene = self._sample_scene(rng)
            if scene is not None:
                break
            self.stats["scene_retries"] += 1
        else:
            raise RuntimeError("scene randomization failed repeatedly")
        self.map = scene.esdf
        self.control_points = scene.control_points
        self.scene_obstacles = scene.obstacles
        self.cp_index = 0

        start = np.array([0.0, 0.0, cfg.z_center])
        cp1 = self.control_points[0]
        to_cp = cp1 - start
        dist = np.linalg.norm(to_cp)
        base_dir = to_cp / dist if dist > 1e-9 else np.array([1.0, 0.0, 0.0])
        v_dir = _perturb_direction(base_dir, abs(rng.normal(0.0, cfg.init_dir_sigma)),
                                   rng.uniform(0.0, 2 * math.pi))
        speed = rng.uniform(0.0, cfg.init_speed_frac * cfg.v_max)
        yaw = math.atan2(to_cp[1], to_cp[0]) + rng.normal(0.0, 0.3)
        theta = np.array([rng.uniform(-cfg.init_tilt_max, cfg.init_tilt_max),
                          rng.uniform(-cfg.init_tilt_max, cfg.init_tilt_max),
                          yaw])
        omega = rng.uniform(-cfg.init_rate_max, cfg.init_rate_max, 3)
        state = QuadState(start, speed * v_dir, np.zeros(3), theta, omega)
        self._begin_episode(state, rng)
        return self._observe()

    def reset_scenario(self, esdf: EsdfMap, control_points, start, seed: int | None = None,
                       yaw: float | None = None) -> np.ndarray:
        """Fixed-scene episode for evaluation flights. The seed drives small
        start-state jitter and (when enabled) domain randomization, so
        repeated runs with different seeds probe robustness."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        rng = self._rng
        self.map = esdf
        self.control_points = np.asarray(control_points, float).reshape(-1, 3).copy()
        self.scene_obstacles = []
        self.cp_index = 0

        start = np.asarray(start, float).reshape(3).copy()
        if yaw is None:
            to_cp = self.control_points[0] - start
            yaw = math.atan2(to_cp[1], to_cp[0])
        pos = start + np.concatenate([rng.normal(0.0, cfg.scenario_pos_noise, 2), [0.0]])
        vel = rng.normal(0.0, cfg.scenario_vel_noise, 3)
        theta = np.array([0.0, 0.0, yaw + rng.normal(0.0, cfg.scenario_yaw_noise)])
        state = QuadState(pos, vel, np.zeros(3), theta, np.zeros(3))
        self._begin_episode(state, rng)
        return self._observe()

    def _begin_episode(self, state: QuadState, rng) -> None:
        cfg = self.config
        if cfg.domain_rand_enabled:
            self.params = self.base_params.scaled(
                m_mult=rng.uniform(1 - cfg.mass_rand, 1 + cfg.mass_rand),
                inertia_mult=rng.uniform(1 - cfg.inertia_rand, 1 + cfg.inertia_rand),
                kappa_mult=rng.uniform(1 - cfg.kappa_rand, 1 + cfg.kappa_rand),
            )
            self.thrust_gain = rng.uniform(1 - cfg.thrust_rand, 1 + cfg.thrust_rand)
        else:
            self.params = self.base_params
            self.thrust_gain = 1.0
        # Prime the latency queue with the nominal hover command; the episode's
        # randomized mass and thrust gain then apply exactly as they would to
        # any other command.
        hover = BodyCommand(self.base_params.m * self.base_params.g, np.zeros(3))
        self.delay_queue = ActionDelayQueue(cfg.action_delay_steps, hover)
        state.a_w = thrust_acceleration(state.theta,
                                        np.full(4, hover.f_T / 4 * self.thrust_gain),
                                        self.params)
        self.state = state
        self._steps = 0
        self._done = False
        self.finished = False
        self.collided = False

    def _sample_scene(self, rng) -> _Scene | None:
        cfg = self.config
        start = np.array([0.0, 0.0, cfg.z_center])
        pts = [start]
        bearing = rng.uniform(0.0, 2 * math.pi)
        for i in range(cfg.cp_count):
            if i > 0:
                bearing += rng.uniform(-cfg.cp_bearing_max, cfg.cp_bearing_max)
            d = rng.uniform(cfg.cp_dist_min, cfg.cp_dist_max)
            z = cfg.z_center + rng.uniform(-cfg.cp_z_jitter, cfg.cp_z_jitter)
            prev = pts[-1]
            pts.append(np.array([prev[0] + d * math.cos(bearing),
                                 prev[1] + d * math.sin(bearing), z]))
        chain = np.array(pts)
        half = cfg.map_half_extent
        if (np.abs(chain[:, :2]) > half - 1.0).any():
            return None  # chain too close to the map edge; retry

        n_obs = int(rng.integers(cfg.obstacle_count_min, cfg.obstacle_count_max + 1))
        if n_obs == 0:
            esdf = self._free_map()
            return _Scene(esdf, chain[1:], [])

        segs = [(chain[i, :2], chain[i + 1, :2]) for i in range(len(chain) - 1)]
        obstacles = []
        for _ in range(n_obs):
            placed = False
            for _ in range(100):
                radius = rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max)
                need = radius + cfg.inflation_radius + cfg.channel_clearance
                i = int(rng.integers(0, len(segs)))
                a, b = segs[i]
                along = rng.uniform(0.0, 1.0)
                base = a + along * (b - a)
                seg = b - a
                L = np.linalg.norm(seg)
                perp = (np.array([-seg[1], seg[0]]) / L) if L > 1e-9 else np.array([0.0, 1.0])
                side = 1.0 if rng.random() < 0.5 else -1.0
                offset = need + 0.05 + abs(rng.normal(0.0, 0.5))
                center = base + side * offset * perp
                if (np.abs(center) > half - 0.5).any():
                    continue
                ok = all(_point_segment_distance(center, s[0], s[1]) >= need
                         for s in segs)
                ok = ok and all(np.linalg.norm(center - p[:2]) >= radius
                                + cfg.inflation_radius + 0.3 for p in chain)
                ok = ok and all(np.linalg.norm(center - oc) > radius + orad + 0.05
                                for oc, orad in obstacles)
                if ok:
                    obstacles.append((center, radius))
                    placed = True
                    break
            if not placed:
                return None
        esdf = self._rasterize(obstacles)
        # the discretized scene must keep the whole chain strictly free
        for a, b in segs:
            L = np.linalg.norm(b - a)
            for t in np.linspace(0.0, 1.0, max(2, int(L / cfg.resolution))):
                if esdf_at(esdf, a + t * (b - a)) <= 0.0:
                    return None
        return _Scene(esdf, chain[1:], obstacles)

    def _free_map(self) -> EsdfMap:
        if self._free_map_cache is None:
            self._free_map_cache = self._rasterize([])
        return self._free_map_cache

    def _rasterize(self, obstacles) -> EsdfMap:
        cfg = self.config
        n = int(round(2 * cfg.map_half_extent / cfg.resolution))
        grid = OccupancyGrid.empty(n, n, cfg.resolution,
                                   origin=(-cfg.map_half_extent, -cfg.map_half_extent))
        res = cfg.resolution
        for center, radius in obstacles:
            lo = np.floor((center - radius - grid.origin) / res).astype(int) - 1
            hi = np.ceil((center + radius - grid.origin) / res).astype(int) + 1
            lo = np.clip(lo, 0, n - 1)
            hi = np.clip(hi, 0, n - 1)
            ys, xs = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
            cx = grid.origin[0] + (xs + 0.5) * res
            cy = grid.origin[1] + (ys + 0.5) * res
            inside = (cx - center[0]) ** 2 + (cy - center[1]) ** 2 <= radius ** 2
            grid.cells[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] |= inside
        return build_esdf(grid, cfg.inflation_radius)

    # ------------------------------------------------------------------- step

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.config
        action = np.asarray(action, dtype=float).reshape(4)
        if not np.isfinite(action).all():
            raise ValueError(f"non-finite action {action}")
        clipped = bool((action < -1.0).any() or (action > 1.0).any())
        a = np.clip(action, -1.0, 1.0)
        cmd = BodyCommand(f_T=(a[0] + 1.0) * 0.5 * 4.0 * self.base_params.f_rotor_max,
                          omega_req=a[1:] * cfg.max_rate)
        applied = self.delay_queue.push(cmd)

        prev = self.state
        cur = prev
        collision = False
        attitude = False
        saturated = False
        sub_dt = cfg.dt / cfg.substeps
        for _ in range(cfg.substeps):
            thr = rate_controller(cur, applied, self.params)
            saturated = saturated or thr.saturated
            u_eff = np.clip(thr.u * self.thrust_gain, 0.0, self.params.f_rotor_max)
            try:
                cur = rk4_step(cur, u_eff, sub_dt, self.params)
            except AttitudeSingularityError:
                attitude = True
                break
            if (abs(cur.theta[0]) > cfg.attitude_limit
                    or abs(cur.theta[1]) > cfg.attitude_limit):
                attitude = True
                break
            if (esdf_at(self.map, cur.p_w[:2]) <= 0.0
                    or not cfg.z_min <= cur.p_w[2] <= cfg.z_max):
                collision = True
                break

        cps = self.control_points
        n_cp = len(cps)
        cp_active = cps[self.cp_index].copy()
        passes = 0
        finished = False
        if not collision and not attitude:
            t = segment_column_entry(prev.p_w, cur.p_w, cps[self.cp_index],
                                     cfg.d_hor, cfg.d_hgt)
            while t is not None:
                passes += 1
                if self.cp_index == n_cp - 1:
                    finished = True
                    break
                self.cp_index += 1
                t = segment_column_entry(prev.p_w, cur.p_w, cps[self.cp_index],
                                         cfg.d_hor, cfg.d_hgt)

        # Attitude-limit termination is loss of control: it ends the episode
        # and carries the crash penalty, exactly like hitting an obstacle.
        # A free early exit would otherwise beat flying the task.
        events = RewardEvents(
            cp_progress=cp_active,
            fov_cp1=cps[self.cp_index].copy(),
            fov_cp2=cps[min(self.cp_index + 1, n_cp - 1)].copy(),
            collision=collision or attitude,
            finished=finished,
        )
        reward, breakdown = compute_reward(prev, cur, events, cfg)

        self.state = cur
        self._steps += 1
        terminated = collision or attitude or finished
        truncated = (not terminated) and self._steps >= cfg.max_episode_steps
        self._done = terminated or truncated
        self.finished = finished
        self.collided = collision

        info = dict(breakdown)
        info.update(cp_passes=passes, collision_event=collision,
                    attitude_event=attitude, finished=finished,
                    action_clipped=clipped, rotor_saturated=saturated,
                    applied_f_T=float(applied.f_T), steps=self._steps)
        return StepResult(self._observe(), reward, terminated, truncated, info)

    # ------------------------------------------------------------ observation

    def _observe(self) -> np.ndarray:
        cfg = self.config
        s = self.state
        cps = self.control_points
        cp1 = cps[self.cp_index]
        cp2 = cps[min(self.cp_index + 1, len(cps) - 1)]
        heading = rotation_matrix(s.theta)[:, 0]
        o_cp, o_vcp, d_vel = kgp_observe(self.map, s.p_w, s.v_w, cp1,
                                         cfg.sensing_horizon)
        o_sdf = esdf_ring_observe(self.map, s.p_w, cfg.sensing_horizon)
        return np.concatenate([
            s.v_w, s.omega_b, s.theta, heading,
            cp1 - s.p_w, cp2 - s.p_w,
            o_cp, o_vcp, [d_vel], o_sdf,
        ])


def _perturb_direction(base, tilt, azimuth):
    """Rotate a unit vector away from itself by ``tilt`` radians toward a
    direction set by ``azimuth`` around it."""
    base = np.asarray(base, float)
    base = base / np.linalg.norm(base)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(base @ helper) > 0.95:
        helper = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(base, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(base, e1)
    return (math.cos(tilt) * base
            + math.sin(tilt) * (math.cos(azimuth) * e1 + math.sin(azimuth) * e2))


def _point_segment_distance(p, a, b) -> float:
    p = np.asarray(p, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    seg = b - a
    L2 = float(seg @ seg)
    if L2 < 1e-18:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ seg / L2, 0.0, 1.0))
    return float(np.linalg.norm(a + t * seg - p))
