"""SVG figure rendering for flight traces: a top-down track and the
velocity/body-rate/thrust time series. Output is byte-stable across runs
(fixed hash salt, no embedded dates)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "quadnav"

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EVENT_COLLISION, EVENT_CP_PASS, EVENT_FINISH

_SVG_META = {"Date": None}


def _event_indices(events, *names):
    return [i for i, e in enumerate(events) if e in names]


def render_trajectory(trace: dict, out_path, esdf=None, control_points=None) -> None:
    """Top-down x/y track with start/goal markers, control-point passes, and
    the occupancy raster when a map is supplied."""
    fig, ax = plt.subplots(figsize=(7, 6))
    if esdf is not None:
        g = esdf.grid
        extent = (g.origin[0], g.origin[0] + g.width * g.resolution,
                  g.origin[1], g.origin[1] + g.height * g.resolution)
        ax.imshow(esdf.occupied, origin="lower", extent=extent, cmap="Greys",
                  vmin=0, vmax=1.6, interpolation="nearest")
    if control_points is not None:
        cps = np.asarray(control_points)
        ax.plot(cps[:, 0], cps[:, 1], "x", color="tab:orange", ms=7, label="control points")
    ax.plot(trace["p_x"], trace["p_y"], "-", color="tab:blue", lw=1.5, label="flight")
    ax.plot(trace["p_x"][0], trace["p_y"][0], "o", color="tab:green", label="start")
    ax.plot(trace["p_x"][-1], trace["p_y"][-1], "s", color="tab:red", label="end")
    for i in _event_indices(trace["event"], EVENT_CP_PASS, EVENT_FINISH):
        ax.plot(trace["p_x"][i], trace["p_y"][i], "*", color="tab:purple", ms=10)
    for i in _event_indices(trace["event"], EVENT_COLLISION):
        ax.plot(trace["p_x"][i], trace["p_y"][i], "X", color="red", ms=12)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("top-down trajectory")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def render_timeseries(trace: dict, out_path) -> None:
    """Velocity, body rates, and collective thrust against time, with
    control-point passes marked."""
    t = trace["t"]
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    v = np.stack([trace["v_x"], trace["v_y"], trace["v_z"]], axis=1)
    axes[0].plot(t, v[:, 0], label="vx")
    axes[0].plot(t, v[:, 1], label="vy")
    axes[0].plot(t, v[:, 2], label="vz")
    axes[0].plot(t, np.linalg.norm(v, axis=1), "k--", lw=1, label="|v|")
    axes[0].set_ylabel("velocity [m/s]")
    axes[0].legend(fontsize=7, ncol=4)
    axes[1].plot(t, trace["wx"], label="wx")
    axes[1].plot(t, trace["wy"], label="wy")
    axes[1].plot(t, trace["wz"], label="wz")
    axes[1].set_ylabel("body rate [rad/s]")
    axes[1].legend(fontsize=7, ncol=3)
    axes[2].plot(t, trace["fT"], color="tab:brown")
    axes[2].set_ylabel("thrust [N]")
    axes[2].set_xlabel("t [s]")
    marks = _event_indices(trace["event"], EVENT_CP_PASS, EVENT_FINISH)
    for ax in axes:
        for i in marks:
            ax.axvline(t[i], color="tab:purple", lw=0.6, alpha=0.6)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=_SVG_META)
    plt.close(fig)
