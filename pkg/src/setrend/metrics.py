"""Per-sample metrics, Lyapunov functions and the run summary report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .control import PotentialParams, pair_potentials, spread_values
from .convex import (
    FEAS_TOL,
    Box,
    ConvexRegion,
    RegionError,
    distances,
    estimate_linear_regularity,
    intersection_distances,
    project,
)
from .dynamics import AgentState, ManipulatorParams, PlantBank
from .graph import GraphError, WeightedGraph, algebraic_connectivity, is_connected

if TYPE_CHECKING:
    from .sim import SimContext, Tolerances, Trajectory

FloatArray = NDArray[np.float64]


def _stack(states: Sequence[AgentState]) -> tuple[FloatArray, FloatArray]:
    return np.array([s.q for s in states]), np.array([s.qdot for s in states])


def _own_projections(regions: Sequence[ConvexRegion], Q: FloatArray) -> FloatArray:
    return np.array([project(reg, q).point for reg, q in zip(regions, Q)])


def _laplacian_energy(A: FloatArray, Q: FloatArray) -> float:
    # 1/4 sum_i sum_j a_ij |q_i - q_j|^2
    D = Q[:, None, :] - Q[None, :, :]
    return 0.25 * float(np.sum(A * np.einsum("ijk,ijk->ij", D, D)))


def fixed_energy(
    Q: FloatArray, V: FloatArray, P: FloatArray, A: FloatArray, plant: PlantBank
) -> float:
    return (
        plant.kinetic_energy(Q, V)
        + _laplacian_energy(A, Q)
        + 0.5 * float(np.sum((Q - P) ** 2))
    )


def lyapunov_fixed(
    states: Sequence[AgentState],
    regions: Sequence[ConvexRegion],
    graph: WeightedGraph,
    params: Sequence[ManipulatorParams] | None = None,
) -> float:
    """Kinetic energy plus consensus and set-distance potentials.

    ``params`` defaults to the shared two-link parameters for every agent.
    """
    Q, V = _stack(states)
    plant = PlantBank(params or [ManipulatorParams()] * len(states))
    return fixed_energy(Q, V, _own_projections(regions, Q), graph.adjacency, plant)


def switching_energy(
    Q: FloatArray, V: FloatArray, P: FloatArray, k: float, q_ref: FloatArray
) -> float:
    E = Q - q_ref
    return (
        0.5 * float(np.sum(V * V))
        + float(np.sum(E * V))
        + 0.5 * k * float(np.sum(E * E))
        + 0.5 * float(np.sum((Q - P) ** 2))
    )


def lyapunov_switching(
    states: Sequence[AgentState],
    regions: Sequence[ConvexRegion],
    k: float,
    q0: ArrayLike,
) -> float:
    """Graph-independent Lyapunov function of the feedback-linearised loop.

    Requires ``k > 1`` and a reference point ``q0`` inside every region.
    """
    if not k > 1:
        raise ValueError(f"switching Lyapunov function needs k > 1, got {k}")
    q0 = np.asarray(q0, dtype=np.float64).reshape(-1)
    for i, reg in enumerate(regions):
        if np.max(distances(reg, q0)) > FEAS_TOL:
            raise RegionError(f"reference point q0 is outside region {i}")
    Q, V = _stack(states)
    return switching_energy(Q, V, _own_projections(regions, Q), k, q0)


def lyapunov_collision(
    states: Sequence[AgentState],
    regions: Sequence[ConvexRegion],
    graph: WeightedGraph,
    potential_params: PotentialParams,
    params: Sequence[ManipulatorParams] | None = None,
) -> float:
    Q, _ = _stack(states)
    base = lyapunov_fixed(states, regions, graph, params)
    return base + 0.5 * float(np.sum(pair_potentials(potential_params, Q)))


def ultimate_bound(V0: float, graph: WeightedGraph, rho: float, m: int = 2) -> float:
    """Ultimate bound ``rho (sqrt 2 + 2 / sqrt(lambda_2)) sqrt(V0)`` on the distance to X0.

    ``lambda_2`` is the smallest nonzero eigenvalue of ``L kron I_m``, which is
    the algebraic connectivity of ``L`` for every ``m``.
    """
    if not is_connected(graph):
        raise GraphError("ultimate bound needs a connected graph (lambda_2 = 0)")
    if rho < 1:
        raise ValueError(f"linear-regularity constant must be >= 1, got {rho}")
    lam2 = algebraic_connectivity(graph)
    return rho * (math.sqrt(2.0) + 2.0 / math.sqrt(lam2)) * math.sqrt(max(V0, 0.0))


@dataclass
class StepMetrics:
    t: float
    lyapunov: float
    dist_to_own_set: FloatArray
    dist_to_intersection: FloatArray
    consensus_error: float
    velocity_norm: FloatArray
    min_pairwise: float
    spread: FloatArray | None = None
    max_delta: float = math.nan


def law_lyapunov(ctx: "SimContext", Q: FloatArray, V: FloatArray, P: FloatArray, A: FloatArray) -> float:
    spec = ctx.scenario.controller
    if spec.law == "switching":
        if ctx.q_ref is None:
            return math.nan
        return switching_energy(Q, V, P, spec.k, ctx.q_ref)
    value = fixed_energy(Q, V, P, A, ctx.plant)
    if spec.law == "collision":
        value += 0.5 * float(np.sum(pair_potentials(spec.avoidance, Q)))
    return value


def step_metrics(ctx: "SimContext", Q: FloatArray, V: FloatArray, t: float) -> StepMetrics:
    s = ctx.scenario
    A = s.schedule.graphs[ctx.graph_index(t, s.dt)].adjacency
    P = ctx.bank.project(Q)
    own = np.linalg.norm(Q - P, axis=1)
    if ctx.convex:
        to_x0 = intersection_distances(ctx.x0_regions, Q)
    else:
        to_x0 = np.full(s.n, math.nan)
    D = Q[:, None, :] - Q[None, :, :]
    pd = np.sqrt(np.einsum("ijk,ijk->ij", D, D))
    consensus = float(np.max(pd))
    np.fill_diagonal(pd, np.inf)
    min_pair = float(np.min(pd)) if s.n > 1 else math.inf
    spread = None
    max_delta = math.nan
    if s.controller.law == "switching":
        diag = spread_values(Q, V, P, A, s.controller.k)
        spread = diag.hbar - diag.ell
        max_delta = diag.max_delta
    return StepMetrics(
        t=float(t),
        lyapunov=law_lyapunov(ctx, Q, V, P, A),
        dist_to_own_set=own,
        dist_to_intersection=to_x0,
        consensus_error=consensus,
        velocity_norm=np.linalg.norm(V, axis=1),
        min_pairwise=min_pair,
        spread=spread,
        max_delta=max_delta,
    )


@dataclass
class AggregationReport:
    scenario: str
    law: str
    termination: dict[str, Any]
    final: dict[str, Any]
    tolerances: dict[str, float]
    aggregation: dict[str, bool]
    lyapunov: dict[str, Any]
    safety: dict[str, Any] | None
    ultimate_bound: dict[str, Any] | None
    oscillation: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _sample_box(traj: "Trajectory", pad: float = 1.0) -> Box:
    pts = traj.q.reshape(-1, traj.q.shape[-1])
    return Box(pts.min(axis=0) - pad, pts.max(axis=0) + pad)


def summarize(traj: "Trajectory", tolerances: "Tolerances | None" = None) -> AggregationReport:
    """Final-time verdicts for set aggregation, safety, Lyapunov decrease and oscillation."""
    s = traj.scenario
    tol = tolerances or s.tolerances
    last = traj.samples[-1]
    dist_x0 = last.dist_to_intersection
    if np.all(np.isfinite(dist_x0)):
        set_ok = bool(np.all(dist_x0 < tol.distance))
    else:
        # X0 is not computed for non-convex regions; being inside every own set
        # together with consensus is the checkable equivalent
        set_ok = bool(np.all(last.dist_to_own_set < tol.distance))
    consensus_ok = last.consensus_error < tol.consensus
    velocity_ok = bool(np.all(last.velocity_norm < tol.velocity))
    completed = traj.completed
    aggregation = {
        "set": set_ok,
        "consensus": bool(consensus_ok),
        "velocity": velocity_ok,
        "achieved": bool(completed and set_ok and consensus_ok and velocity_ok),
    }

    lyap = traj.metric("lyapunov")
    V0 = float(lyap[0])
    increases = np.diff(lyap)
    max_inc = float(np.max(increases)) if increases.size else 0.0
    lyapunov = {
        "initial": V0,
        "final": float(lyap[-1]),
        "max_increase": max_inc,
        "tolerance": tol.lyapunov_rel * abs(V0),
        "monotone": bool(max_inc <= tol.lyapunov_rel * abs(V0)),
        "graph_independent": s.controller.law == "switching" or not s.schedule.is_switching(),
    }

    safety = None
    bound = None
    if s.controller.avoidance is not None:
        r = s.controller.avoidance.r
        safety = {
            "r": r,
            "R": s.controller.avoidance.R,
            "min_pairwise_all_steps": traj.min_pairwise_all_steps,
            "held": bool(traj.termination.status != "safety_violation" and traj.min_pairwise_all_steps > r),
        }
        if not s.schedule.is_switching() and traj.context.convex:
            g = s.schedule.graphs[0]
            lam2 = algebraic_connectivity(g)
            rho_hat = estimate_linear_regularity(
                traj.context.x0_regions, _sample_box(traj), 4000, s.seed
            )
            rho_used = max(rho_hat, 1.0)
            b_star = ultimate_bound(V0, g, rho_used, s.m)
            spread_bound = 2.0 * math.sqrt(V0 / lam2)
            max_dist = float(np.max(dist_x0))
            bound = {
                "kind": "lower-bound certificate (sampled rho)",
                "V0": V0,
                "lambda2": lam2,
                "rho_hat": rho_hat,
                "B_star": b_star,
                "max_dist_to_intersection": max_dist,
                "within_B_star": bool(max_dist <= b_star),
                "pairwise_bound": spread_bound,
                "max_pairwise": last.consensus_error,
                "within_pairwise_bound": bool(last.consensus_error <= spread_bound),
            }

    window_start = traj.times[-1] - tol.oscillation_window
    in_window = traj.times >= window_start - 1e-12
    speeds = np.array([np.max(m.velocity_norm) for m in traj.samples])
    cons = traj.metric("consensus_error")
    peak = float(np.max(speeds[in_window]))
    oscillation = {
        "window": tol.oscillation_window,
        "threshold": tol.oscillation_speed,
        "max_speed_in_window": peak,
        "consensus_error_range_in_window": float(np.ptp(cons[in_window])),
        "detected": bool(peak > tol.oscillation_speed),
    }

    final = {
        "time": float(traj.times[-1]),
        "dist_to_own_set": last.dist_to_own_set,
        "dist_to_intersection": dist_x0,
        "max_dist_to_intersection": float(np.max(dist_x0)),
        "consensus_error": last.consensus_error,
        "velocity_norm": last.velocity_norm,
        "max_velocity": float(np.max(last.velocity_norm)),
        "min_pairwise": last.min_pairwise,
        "lyapunov": last.lyapunov,
        "spread": last.spread,
    }
    return AggregationReport(
        scenario=s.name,
        law=s.controller.law,
        termination=asdict(traj.termination),
        final=final,
        tolerances=asdict(tol),
        aggregation=aggregation,
        lyapunov=lyapunov,
        safety=safety,
        ultimate_bound=bound,
        oscillation=oscillation,
    )
