"""Set-aggregation control laws.

Three laws share the same building blocks: velocity damping ``-k qd``, a pull
toward the agent's own target set ``-(q - P(q))`` and a consensus term
``-sum_j a_ij (q_i - q_j)``.

* ``fixed``: the three terms as they are (fixed graph, any ``k > 0``).
* ``switching``: Coriolis cancellation plus the same terms pre-multiplied by
  ``M(q)``, which makes every agent a double integrator under a switching graph.
* ``collision``: ``fixed`` plus the gradient of a pairwise barrier potential
  summed over every agent inside the sensing radius.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .convex import ConvexRegion, RegionBank, project
from .dynamics import AgentState, ManipulatorParams, PlantBank, coriolis_matrix, mass_matrix
from .graph import GraphSchedule, WeightedGraph, laplacian, max_laplacian_eigenvalue

FloatArray = NDArray[np.float64]
Law = Literal["fixed", "switching", "collision"]
LAWS = ("fixed", "switching", "collision")


class ControlError(ValueError):
    pass


class SafetyViolation(RuntimeError):
    """Two agents came within the safety radius."""

    def __init__(self, pair: tuple[int, int], dist: float, r: float, t: float | None = None):
        self.pair = pair
        self.dist = dist
        self.r = r
        self.t = t
        where = "" if t is None else f" at t={t:.6g}"
        super().__init__(
            f"safety violation{where}: agents {pair[0] + 1} and {pair[1] + 1} "
            f"are {dist:.6g} apart (safety radius r={r:g})"
        )


@dataclass(frozen=True)
class PotentialParams:
    R: float
    r: float

    def __post_init__(self) -> None:
        if not self.R > self.r > 0:
            raise ControlError(f"avoidance radii need R > r > 0, got R={self.R}, r={self.r}")


@dataclass(frozen=True)
class ControllerSpec:
    law: Law
    k: float
    avoidance: PotentialParams | None = None

    def __post_init__(self) -> None:
        if self.law not in LAWS:
            raise ControlError(f"unknown control law {self.law!r}; expected one of {LAWS}")
        if not self.k > 0:
            raise ControlError(f"damping gain k must be positive, got {self.k}")
        if (self.law == "collision") != (self.avoidance is not None):
            raise ControlError("avoidance radii are required by, and only by, the collision law")


def _stack(states: Sequence[AgentState]) -> tuple[FloatArray, FloatArray]:
    return np.array([s.q for s in states]), np.array([s.qdot for s in states])


def _consensus(i: int, Q: FloatArray, g: WeightedGraph) -> FloatArray:
    a = g.adjacency[i]
    return a.sum() * Q[i] - a @ Q


def control_fixed(
    i: int,
    states: Sequence[AgentState],
    region_i: ConvexRegion,
    g: WeightedGraph,
    k: float,
) -> FloatArray:
    Q, V = _stack(states)
    q = Q[i]
    return -k * V[i] - (q - project(region_i, q).point) - _consensus(i, Q, g)


def control_switching(
    i: int,
    states: Sequence[AgentState],
    region_i: ConvexRegion,
    g_t: WeightedGraph,
    k: float,
    params_i: ManipulatorParams,
) -> FloatArray:
    Q, V = _stack(states)
    q, qd = Q[i], V[i]
    inner = k * qd + (q - project(region_i, q).point) + _consensus(i, Q, g_t)
    return coriolis_matrix(params_i, q, qd) @ qd - mass_matrix(params_i, q) @ inner


def potential(params: PotentialParams, d2: float) -> float:
    """Barrier ``((d^2 - R^2) / (d^2 - r^2))^2`` inside the sensing radius, else 0."""
    R2, r2 = params.R**2, params.r**2
    if d2 <= r2:
        raise SafetyViolation((0, 1), float(np.sqrt(max(d2, 0.0))), params.r)
    if d2 >= R2:
        return 0.0
    return ((d2 - R2) / (d2 - r2)) ** 2


def potential_gradient(params: PotentialParams, qi: ArrayLike, qj: ArrayLike) -> FloatArray:
    """Gradient of the barrier with respect to ``qi``."""
    diff = np.asarray(qi, dtype=np.float64) - np.asarray(qj, dtype=np.float64)
    d2 = float(diff @ diff)
    R2, r2 = params.R**2, params.r**2
    if d2 <= r2:
        raise SafetyViolation((0, 1), float(np.sqrt(d2)), params.r)
    if d2 >= R2:
        return np.zeros_like(diff)
    return 4 * (R2 - r2) * (d2 - R2) / (d2 - r2) ** 3 * diff


def control_collision(
    i: int,
    states: Sequence[AgentState],
    region_i: ConvexRegion,
    g: WeightedGraph,
    k: float,
    params: PotentialParams,
) -> FloatArray:
    Q, _ = _stack(states)
    tau = control_fixed(i, states, region_i, g, k)
    for j in range(Q.shape[0]):
        if j == i:
            continue
        try:
            tau -= potential_gradient(params, Q[i], Q[j])
        except SafetyViolation as exc:
            raise SafetyViolation((i, j), exc.dist, params.r) from None
    return tau


def avoidance_gradients(params: PotentialParams, Q: FloatArray) -> FloatArray:
    """Row ``i`` holds ``sum_j dV_ij/dq_i`` over all other agents."""
    D = Q[:, None, :] - Q[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", D, D)
    np.fill_diagonal(d2, np.inf)
    R2, r2 = params.R**2, params.r**2
    if np.min(d2) <= r2:
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        raise SafetyViolation((int(min(i, j)), int(max(i, j))), float(np.sqrt(d2[i, j])), params.r)
    inside = d2 < R2
    if not np.any(inside):
        return np.zeros_like(Q)
    coef = np.where(inside, 4 * (R2 - r2) * (d2 - R2) / np.where(inside, d2 - r2, 1.0) ** 3, 0.0)
    return np.einsum("ij,ijk->ik", coef, D)


def pair_potentials(params: PotentialParams, Q: FloatArray) -> FloatArray:
    """Matrix of ``V_ij`` (zero diagonal); raises on a safety violation."""
    D = Q[:, None, :] - Q[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", D, D)
    np.fill_diagonal(d2, np.inf)
    R2, r2 = params.R**2, params.r**2
    if np.min(d2) <= r2:
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        raise SafetyViolation((int(min(i, j)), int(max(i, j))), float(np.sqrt(d2[i, j])), params.r)
    inside = d2 < R2
    safe = np.where(inside, d2, 0.0)
    return np.where(inside, ((safe - R2) / (safe - r2)) ** 2, 0.0)


@dataclass(frozen=True)
class GainCondition:
    ok: bool
    threshold: float
    coarse_threshold: float
    coarse_ok: bool
    lambda_max: float


def gain_condition(schedule: GraphSchedule, k: float) -> GainCondition:
    """Damping-gain test ``k > 2 + lambda_max / 4`` over every scheduled graph.

    Also reports the degree-based bound ``2 + (n - 1) a_max / 2``.
    """
    lam = max_laplacian_eigenvalue(schedule)
    threshold = 2.0 + lam / 4.0
    a_max = max(float(np.max(g.adjacency)) for g in schedule.graphs)
    coarse = 2.0 + (schedule.n - 1) * a_max / 2.0
    return GainCondition(k > threshold, threshold, coarse, k > coarse, lam)


@dataclass(frozen=True)
class SpreadDiagnostic:
    hbar: FloatArray
    ell: FloatArray
    max_delta: float


def spread_values(
    Q: FloatArray, V: FloatArray, P: FloatArray, A: FloatArray, k: float
) -> SpreadDiagnostic:
    X = np.concatenate([Q, Q + (2.0 / k) * V])
    lap_v = A.sum(axis=1)[:, None] * V - A @ V
    delta = (4.0 / k**2) * lap_v - (2.0 / k) * (Q - P)
    return SpreadDiagnostic(X.max(axis=0), X.min(axis=0), float(np.max(np.linalg.norm(delta, axis=1))))


def spread_diagnostic(
    states: Sequence[AgentState],
    k: float,
    regions: Sequence[ConvexRegion],
    g: WeightedGraph,
) -> SpreadDiagnostic:
    """Extremes of ``q_i`` and ``q_i + (2/k) qd_i`` per coordinate, and ``max_i |delta_i|``.

    Along the switching closed loop the upper extreme grows no faster than
    ``max_delta`` (and the lower one falls no faster).
    """
    if not k > 0:
        raise ControlError("k must be positive")
    Q, V = _stack(states)
    P = np.array([project(reg, q).point for reg, q in zip(regions, Q)])
    return spread_values(Q, V, P, g.adjacency, k)


class ClosedLoop:
    """Vectorised torque and acceleration evaluation for all agents at once."""

    def __init__(self, spec: ControllerSpec, bank: RegionBank, plant: PlantBank):
        self.spec = spec
        self.bank = bank
        self.plant = plant

    def torques(self, Q: FloatArray, V: FloatArray, L: FloatArray) -> FloatArray:
        k = self.spec.k
        inner_pos = (Q - self.bank.project(Q)) + L @ Q
        if self.spec.law == "switching":
            inner = k * V + inner_pos
            return self.plant.coriolis_times_qdot(Q, V) - self.plant.mass_times(Q, inner)
        tau = -k * V - inner_pos
        if self.spec.law == "collision":
            tau -= avoidance_gradients(self.spec.avoidance, Q)
        return tau

    def accel(self, Q: FloatArray, V: FloatArray, L: FloatArray) -> tuple[FloatArray, FloatArray]:
        tau = self.torques(Q, V, L)
        return self.plant.accel(Q, V, tau), tau
