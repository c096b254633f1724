"""Rigid-body quadrotor simulation.

Translational and rotational dynamics with per-rotor thrust inputs, the
linear map between rotor thrusts and the collective-thrust/torque wrench,
classical RK4 propagation, and a proportional body-rate loop that turns
(collective thrust, body-rate setpoint) commands into rotor thrusts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

GRAVITY = 9.81  # m/s^2

PITCH_SINGULARITY_MARGIN = 1e-6


class AttitudeSingularityError(RuntimeError):
    """Pitch too close to +-pi/2 for the Euler-rate mapping."""


@dataclass
class QuadParams:
    """Physical parameters. Inertia is the diagonal (ixx, iyy, izz)."""

    m: float = 1.64                 # kg
    inertia: np.ndarray = field(default_factory=lambda: np.array([0.011, 0.010, 0.007]))
    l: float = 0.125                # m, center of mass to rotor center
    kappa: float = 0.012            # rotor torque coefficient
    f_rotor_max: float = 8.0        # N per rotor
    g: float = GRAVITY
    rate_gains: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.25, 0.10]))

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3)
        self.rate_gains = np.asarray(self.rate_gains, dtype=float).reshape(3)
        if self.m <= 0 or (self.inertia <= 0).any() or self.l <= 0 or self.kappa <= 0:
            raise ValueError("mass, inertia, arm length, and kappa must be positive")
        if self.f_rotor_max <= self.m * self.g / 4:
            raise ValueError("f_rotor_max too small to hover")
        self._alloc = allocation_matrix(self)
        self._alloc_inv = np.linalg.inv(self._alloc)

    def hover_thrusts(self) -> np.ndarray:
        return np.full(4, self.m * self.g / 4)

    def scaled(self, m_mult=1.0, inertia_mult=1.0, kappa_mult=1.0) -> "QuadParams":
        """Copy with multiplied physical properties (domain randomization)."""
        return QuadParams(m=self.m * m_mult,
                          inertia=self.inertia * inertia_mult,
                          l=self.l,
                          kappa=self.kappa * kappa_mult,
                          f_rotor_max=self.f_rotor_max,
                          g=self.g,
                          rate_gains=self.rate_gains.copy())


@dataclass
class QuadState:
    """p_w, v_w, a_w in the world frame; theta = (roll, pitch, yaw);
    omega_b in the body frame. a_w is a cache of the last applied thrust
    acceleration, not an integrated quantity."""

    p_w: np.ndarray
    v_w: np.ndarray
    a_w: np.ndarray
    theta: np.ndarray
    omega_b: np.ndarray

    def __post_init__(self):
        for name in ("p_w", "v_w", "a_w", "theta", "omega_b"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3).copy())

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0)) -> "QuadState":
        z = np.zeros(3)
        return cls(np.asarray(p, float), z.copy(), z.copy(), z.copy(), z.copy())

    def copy(self) -> "QuadState":
        return QuadState(self.p_w, self.v_w, self.a_w, self.theta, self.omega_b)


@dataclass
class RotorThrusts:
    u: np.ndarray  # (4,), newtons
    saturated: bool = False

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(4)


@dataclass
class BodyCommand:
    f_T: float                 # collective thrust, N
    omega_req: np.ndarray      # desired body rate, rad/s

    def __post_init__(self):
        self.omega_req = np.asarray(self.omega_req, dtype=float).reshape(3)


def allocation_matrix(params: QuadParams) -> np.ndarray:
    """Rows map rotor thrusts to (f_T, tau_x, tau_y, tau_z)."""
    s = params.l / math.sqrt(2.0)
    k = params.kappa
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [-s, -s, s, s],
        [-s, s, s, -s],
        [-k, k, -k, k],
    ])


def thrusts_to_wrench(params: QuadParams, u) -> tuple[float, np.ndarray]:
    w = params._alloc @ np.asarray(u, dtype=float).reshape(4)
    return float(w[0]), w[1:]


def wrench_to_thrusts(params: QuadParams, f_T: float, tau) -> RotorThrusts:
    """Invert the allocation. When a rotor limit binds, the binding rotor is
    frozen at its bound and the rest re-solved to keep the collective thrust
    exact while matching the torque in least squares."""
    tau = np.asarray(tau, dtype=float).reshape(3)
    f_T = min(max(float(f_T), 0.0), 4.0 * params.f_rotor_max)
    rhs = np.array([f_T, tau[0], tau[1], tau[2]])
    u = params._alloc_inv @ rhs
    lo, hi = 0.0, params.f_rotor_max
    umin, umax = u.min(), u.max()
    if umin >= lo - 1e-12 and umax <= hi + 1e-12:
        if umin < lo or umax > hi:
            u = np.clip(u, lo, hi)
        return RotorThrusts(u, saturated=False)

    fixed: dict[int, float] = {}
    for _ in range(4):
        free = [i for i in range(4) if i not in fixed]
        f_res = f_T - sum(fixed.values())
        if len(free) <= 1:
            for i in free:
                u[i] = f_res
            break
        T = params._alloc[1:, free]                      # (3, k)
        tau_res = tau - params._alloc[1:, list(fixed)] @ np.array(list(fixed.values())) \
            if fixed else tau
        k = len(free)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * T.T @ T
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([2.0 * T.T @ tau_res, [f_res]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        for j, i in enumerate(free):
            u[i] = sol[j]
        for i in fixed:
            u[i] = fixed[i]
        viol = np.maximum(lo - u, u - hi)
        viol[list(fixed)] = -np.inf
        worst = int(np.argmax(viol))
        if viol[worst] <= 1e-12:
            break
        fixed[worst] = lo if u[worst] < lo else hi
    return RotorThrusts(np.clip(u, lo, hi), saturated=True)


def rotation_matrix(theta) -> np.ndarray:
    """Body-to-world rotation from (roll, pitch, yaw), Z-Y-X convention."""
    phi, th, psi = theta
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(th), math.sin(th)
    cps, sps = math.cos(psi), math.sin(psi)
    return np.array([
        [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
        [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
        [-sth, cth * sph, cth * cph],
    ])


def euler_rate_matrix(theta) -> np.ndarray:
    """Maps body rates to Euler-angle rates; singular at pitch = +-pi/2."""
    phi, th, _ = theta
    if abs(abs(th) - math.pi / 2) < PITCH_SINGULARITY_MARGIN:
        raise AttitudeSingularityError(f"pitch {th:.6f} rad at the Euler singularity")
    cph, sph = math.cos(phi), math.sin(phi)
    tth = math.tan(th)
    sec = 1.0 / math.cos(th)
    return np.array([
        [1.0, sph * tth, cph * tth],
        [0.0, cph, -sph],
        [0.0, sph * sec, cph * sec],
    ])


def thrust_acceleration(theta, u, params: QuadParams) -> np.ndarray:
    """World acceleration from rotor thrusts plus gravity."""
    f_T = float(np.sum(u))
    b3_w = rotation_matrix(theta)[:, 2]
    acc = (f_T / params.m) * b3_w
    acc[2] -= params.g
    return acc


def state_derivative(state: QuadState, thrusts: RotorThrusts, params: QuadParams):
    """Time derivatives (p_dot, v_dot, theta_dot, omega_dot). Gyroscopic
    torque from rotor spin is not modeled."""
    u = thrusts.u if isinstance(thrusts, RotorThrusts) else np.asarray(thrusts, float)
    w = params._alloc @ u
    y = (*state.p_w, *state.v_w, *state.theta, *state.omega_b)
    d = _deriv_flat(y, float(w[0]), (float(w[1]), float(w[2]), float(w[3])), params)
    return (np.array(d[0:3]), np.array(d[3:6]), np.array(d[6:9]), np.array(d[9:12]))


def _deriv_flat(y, f_T, tau, params: QuadParams):
    """Scalar-math derivative of the flat state (p, v, theta, omega); keeps
    the physics stepping loop off numpy's per-call overhead."""
    phi, th, psi = y[6], y[7], y[8]
    wx, wy, wz = y[9], y[10], y[11]
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(th), math.sin(th)
    if abs(cth) < PITCH_SINGULARITY_MARGIN:
        raise AttitudeSingularityError(f"pitch {th:.6f} rad at the Euler singularity")
    cps, sps = math.cos(psi), math.sin(psi)

    fm = f_T / params.m
    ax = fm * (cps * sth * cph + sps * sph)
    ay = fm * (sps * sth * cph - cps * sph)
    az = fm * (cth * cph) - params.g

    jx, jy, jz = params.inertia
    gx = wy * jz * wz - wz * jy * wy
    gy = wz * jx * wx - wx * jz * wz
    gz = wx * jy * wy - wy * jx * wx
    dwx = (tau[0] - gx) / jx
    dwy = (tau[1] - gy) / jy
    dwz = (tau[2] - gz) / jz

    tth = sth / cth
    sec = 1.0 / cth
    dphi = wx + sph * tth * wy + cph * tth * wz
    dth_ = cph * wy - sph * wz
    dpsi = sph * sec * wy + cph * sec * wz
    return (y[3], y[4], y[5], ax, ay, az, dphi, dth_, dpsi, dwx, dwy, dwz)


def rk4_step(state: QuadState, thrusts: RotorThrusts, dt: float, params: QuadParams) -> QuadState:
    """Classical RK4 with thrusts held constant over the step; the a_w cache
    is refreshed from the new attitude."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = thrusts.u if isinstance(thrusts, RotorThrusts) else np.asarray(thrusts, float)
    w = params._alloc @ u
    f_T, tau = float(w[0]), (float(w[1]), float(w[2]), float(w[3]))

    y0 = (*state.p_w, *state.v_w, *state.theta, *state.omega_b)
    h = dt
    k1 = _deriv_flat(y0, f_T, tau, params)
    k2 = _deriv_flat(tuple(y0[i] + 0.5 * h * k1[i] for i in range(12)), f_T, tau, params)
    k3 = _deriv_flat(tuple(y0[i] + 0.5 * h * k2[i] for i in range(12)), f_T, tau, params)
    k4 = _deriv_flat(tuple(y0[i] + h * k3[i] for i in range(12)), f_T, tau, params)
    y = [y0[i] + (h / 6.0) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(12)]
    new = QuadState(y[0:3], y[3:6], np.zeros(3), y[6:9], y[9:12])
    new.a_w = thrust_acceleration(new.theta, u, params)
    return new


def rate_controller(state: QuadState, cmd: BodyCommand, params: QuadParams,
                    gains=None) -> RotorThrusts:
    """Proportional body-rate loop: tau = K * (omega_req - omega_b)."""
    if gains is None:
        gains = params.rate_gains
    tau = np.asarray(gains, dtype=float) * (cmd.omega_req - state.omega_b)
    return wrench_to_thrusts(params, cmd.f_T, tau)


def save_params(params: QuadParams, path) -> None:
    data = {
        "m": float(params.m),
        "inertia": {"xx": float(params.inertia[0]), "yy": float(params.inertia[1]),
                    "zz": float(params.inertia[2])},
        "l": float(params.l),
        "kappa": float(params.kappa),
        "f_rotor_max": float(params.f_rotor_max),
        "rate_gains": {"x": float(params.rate_gains[0]), "y": float(params.rate_gains[1]),
                       "z": float(params.rate_gains[2])},
    }
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=True)


def load_params(path) -> QuadParams:
    with open(path) as f:
        data = yaml.safe_load(f)
    try:
        return QuadParams(
            m=float(data["m"]),
            inertia=np.array([data["inertia"]["xx"], data["inertia"]["yy"],
                              data["inertia"]["zz"]], dtype=float),
            l=float(data["l"]),
            kappa=float(data["kappa"]),
            f_rotor_max=float(data["f_rotor_max"]),
            rate_gains=np.array([data["rate_gains"]["x"], data["rate_gains"]["y"],
                                 data["rate_gains"]["z"]], dtype=float),
        )
    except KeyError as e:
        raise ValueError(f"{path}: missing quadrotor parameter {e}") from e
