"""Flight trace CSV and the evaluation metrics derived from it.

The energy metric integrates squared jerk over the flight; jerk comes from
two rounds of central differences on the recorded velocities (the trace
stores position, velocity, attitude, and rates, not accelerations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRACE_COLUMNS = ("t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z",
                 "phi", "theta", "psi", "wx", "wy", "wz", "fT", "reward", "event")

EVENT_NONE = ""
EVENT_CP_PASS = "cp_pass"
EVENT_FINISH = "finish"
EVENT_COLLISION = "collision"
EVENT_ATTITUDE = "attitude"
EVENT_TRUNCATED = "truncated"


class TraceError(ValueError):
    """Malformed trace file; the message carries the offending line number."""


@dataclass
class RunMetrics:
    success: bool
    time_span: float      # s, start to final control-point pass
    energy: float         # m^2/s^5, integral of squared jerk
    path_length: float    # m
    min_clearance: float  # m

    def to_dict(self) -> dict:
        return {"success": self.success, "time_span": self.time_span,
                "energy": self.energy, "path_length": self.path_length,
                "min_clearance": self.min_clearance}


class TraceWriter:
    def __init__(self):
        self.rows: list[str] = [",".join(TRACE_COLUMNS)]

    def add(self, t: float, state, f_T: float, reward: float, event: str = EVENT_NONE) -> None:
        vals = [t, *state.p_w, *state.v_w, *state.theta, *state.omega_b, f_T, reward]
        self.rows.append(",".join(repr(float(v)) for v in vals) + f",{event}")

    def text(self) -> str:
        return "\n".join(self.rows) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.text())


def read_trace(path) -> dict:
    """Parse a trace CSV into column arrays plus the event list."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].split(",") != list(TRACE_COLUMNS):
        raise TraceError(f"{path}:1: bad or missing trace header")
    numeric = {c: [] for c in TRACE_COLUMNS[:-1]}
    events = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(TRACE_COLUMNS):
            raise TraceError(f"{path}:{ln}: expected {len(TRACE_COLUMNS)} fields, "
                             f"got {len(parts)}")
        try:
            for c, v in zip(TRACE_COLUMNS[:-1], parts[:-1]):
                numeric[c].append(float(v))
        except ValueError as e:
            raise TraceError(f"{path}:{ln}: {e}") from e
        events.append(parts[-1])
    out = {c: np.array(v) for c, v in numeric.items()}
    out["event"] = events
    return out


def jerk_energy(v: np.ndarray, dt: float) -> float:
    """Integral of squared jerk from sampled velocities: acceleration by
    central differences of v, jerk by central differences of that."""
    if len(v) < 5 or dt <= 0:
        return 0.0
    a = (v[2:] - v[:-2]) / (2 * dt)
    jerk = (a[2:] - a[:-2]) / (2 * dt)
    return float(np.sum(np.linalg.norm(jerk, axis=1) ** 2) * dt)


def metrics_from_trace(trace: dict) -> dict:
    """Trace-pure metrics: time to the final control-point pass (or total
    elapsed time when it never happens), jerk energy, and path length."""
    t = trace["t"]
    if len(t) < 2:
        return {"time_span": 0.0, "energy": 0.0, "path_length": 0.0, "success": False}
    dt = float(t[1] - t[0])
    events = trace["event"]
    success = EVENT_FINISH in events
    if success:
        end = events.index(EVENT_FINISH)
        time_span = float(t[end] - t[0])
    else:
        time_span = float(t[-1] - t[0])
    v = np.stack([trace["v_x"], trace["v_y"], trace["v_z"]], axis=1)
    p = np.stack([trace["p_x"], trace["p_y"], trace["p_z"]], axis=1)
    return {
        "time_span": time_span,
        "energy": jerk_energy(v, dt),
        "path_length": float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()),
        "success": success and EVENT_COLLISION not in events,
    }
