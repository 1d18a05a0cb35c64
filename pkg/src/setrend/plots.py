"""Static SVG figures of a trajectory: coordinate trails and metric time series."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import Trajectory  # noqa: E402

# fixed id salt and no timestamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "setrend"
_SVG_META = {"Date": None, "Creator": None}

PLOT_NAMES = ("trails", "speeds", "min_pairwise", "lyapunov")


def _svg(fig: "plt.Figure") -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return buf.getvalue()


def trails(traj: Trajectory) -> bytes:
    fig, ax = plt.subplots(figsize=(6, 6))
    for i in range(traj.q.shape[1]):
        path = traj.q[:, i, :]
        (line,) = ax.plot(path[:, 0], path[:, 1], lw=0.8, label=f"agent {i + 1}")
        ax.plot(path[0, 0], path[0, 1], "o", ms=3, color=line.get_color())
        ax.plot(path[-1, 0], path[-1, 1], "x", ms=4, color=line.get_color())
    ax.set_xlabel("q_x")
    ax.set_ylabel("q_y")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"{traj.scenario.name}: coordinate trails")
    if traj.q.shape[1] <= 8:
        ax.legend(fontsize=7, loc="best")
    return _svg(fig)


def _series(traj: Trajectory, y: np.ndarray, ylabel: str, title: str, log: bool = False) -> bytes:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(traj.times, y, lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    if log and np.all(y[np.isfinite(y)] > 0):
        ax.set_yscale("log")
    ax.set_title(f"{traj.scenario.name}: {title}")
    ax.grid(alpha=0.3)
    return _svg(fig)


def speeds(traj: Trajectory) -> bytes:
    v = np.linalg.norm(traj.qdot, axis=2)
    return _series(traj, v, "|qdot_i|", "velocity norms")


def min_pairwise(traj: Trajectory) -> bytes:
    return _series(traj, traj.metric("min_pairwise"), "min_ij |q_i - q_j|", "minimum pairwise distance")


def lyapunov(traj: Trajectory) -> bytes:
    return _series(traj, traj.metric("lyapunov"), "V", "Lyapunov value", log=True)


def render_all(traj: Trajectory) -> dict[str, bytes]:
    """SVG bytes keyed by plot name."""
    return {
        "trails": trails(traj),
        "speeds": speeds(traj),
        "min_pairwise": min_pairwise(traj),
        "lyapunov": lyapunov(traj),
    }
