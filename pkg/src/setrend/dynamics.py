"""Two-link planar manipulator in Euler-Lagrange form, ``M(q) qdd + C(q, qd) qd = tau``.

Only the second coordinate enters the inertia matrix:

    M11 = t1 + 2 t2 cos qy,   M12 = M21 = t3 + t2 cos qy,   M22 = t3
    C11 = -t2 sin qy qdy,     C12 = -t2 sin qy (qdx + qdy)
    C21 = t2 sin qy qdx,      C22 = 0

No gravity term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

DEFAULT_THETA = (1.301, 0.256, 0.096)
SINGULAR_DET = 1e-12


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class ManipulatorParams:
    theta1: float = DEFAULT_THETA[0]
    theta2: float = DEFAULT_THETA[1]
    theta3: float = DEFAULT_THETA[2]

    def __post_init__(self) -> None:
        t1, t2, t3 = self.theta1, self.theta2, self.theta3
        if not all(np.isfinite([t1, t2, t3])) or t3 <= 0:
            raise DynamicsError(f"invalid manipulator parameters {self.theta}")
        if not t1 > 2 * abs(t2) + 1e-9:
            raise DynamicsError("theta1 must exceed 2*theta2 for a positive M11")
        c = np.cos(np.linspace(0.0, np.pi, 181))
        det = t3 * (t1 + 2 * t2 * c) - (t3 + t2 * c) ** 2
        if np.min(det) <= SINGULAR_DET:
            raise DynamicsError("mass matrix is not positive definite for all q_y")

    @property
    def theta(self) -> tuple[float, float, float]:
        return (self.theta1, self.theta2, self.theta3)

    @classmethod
    def from_sequence(cls, theta: Sequence[float]) -> "ManipulatorParams":
        if len(theta) != 3:
            raise DynamicsError(f"theta needs three entries, got {list(theta)}")
        return cls(*map(float, theta))


@dataclass(frozen=True)
class AgentState:
    q: FloatArray
    qdot: FloatArray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        qd = np.asarray(self.qdot, dtype=np.float64).reshape(-1)
        if q.shape != qd.shape:
            raise DynamicsError("q and qdot must share a dimension")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise DynamicsError("agent state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


def mass_matrix(params: ManipulatorParams, q: ArrayLike) -> FloatArray:
    t1, t2, t3 = params.theta
    c = np.cos(np.asarray(q, dtype=np.float64)[1])
    m12 = t3 + t2 * c
    return np.array([[t1 + 2 * t2 * c, m12], [m12, t3]])


def coriolis_matrix(params: ManipulatorParams, q: ArrayLike, qdot: ArrayLike) -> FloatArray:
    t2 = params.theta2
    s = np.sin(np.asarray(q, dtype=np.float64)[1])
    qdx, qdy = np.asarray(qdot, dtype=np.float64)
    return np.array([[-t2 * s * qdy, -t2 * s * (qdx + qdy)], [t2 * s * qdx, 0.0]])


def mass_matrix_dot(params: ManipulatorParams, q: ArrayLike, qdot: ArrayLike) -> FloatArray:
    """Time derivative of ``M(q)`` along ``qdot`` (analytic)."""
    t2 = params.theta2
    s = np.sin(np.asarray(q, dtype=np.float64)[1])
    qdy = float(np.asarray(qdot, dtype=np.float64)[1])
    return np.array([[-2 * t2 * s * qdy, -t2 * s * qdy], [-t2 * s * qdy, 0.0]])


def forward_dynamics(
    params: ManipulatorParams, state: AgentState, tau: ArrayLike
) -> FloatArray:
    """Solve ``M qdd = tau - C qd`` for the generalized acceleration."""
    M = mass_matrix(params, state.q)
    rhs = np.asarray(tau, dtype=np.float64) - coriolis_matrix(params, state.q, state.qdot) @ state.qdot
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if abs(det) < SINGULAR_DET:
        raise DynamicsError(f"near-singular mass matrix (det={det:.3g})")
    return np.array(
        [M[1, 1] * rhs[0] - M[0, 1] * rhs[1], M[0, 0] * rhs[1] - M[1, 0] * rhs[0]]
    ) / det


def check_skew_symmetry(params: ManipulatorParams, q: ArrayLike, qdot: ArrayLike) -> float:
    """Max-abs entry of ``N + N^T`` with ``N = Mdot - 2C``; zero for a valid plant."""
    N = mass_matrix_dot(params, q, qdot) - 2 * coriolis_matrix(params, q, qdot)
    return float(np.max(np.abs(N + N.T)))


class PlantBank:
    """Batched plant for ``n`` agents with (possibly) heterogeneous parameters."""

    def __init__(self, params: Sequence[ManipulatorParams]):
        self.params = tuple(params)
        theta = np.array([p.theta for p in self.params], dtype=np.float64)
        self.t1, self.t2, self.t3 = theta[:, 0], theta[:, 1], theta[:, 2]

    def mass(self, Q: FloatArray) -> FloatArray:
        c = np.cos(Q[:, 1])
        M = np.empty((Q.shape[0], 2, 2))
        M[:, 0, 0] = self.t1 + 2 * self.t2 * c
        M[:, 0, 1] = M[:, 1, 0] = self.t3 + self.t2 * c
        M[:, 1, 1] = self.t3
        return M

    def coriolis_times_qdot(self, Q: FloatArray, V: FloatArray) -> FloatArray:
        h = self.t2 * np.sin(Q[:, 1])
        vx, vy = V[:, 0], V[:, 1]
        out = np.empty_like(V)
        out[:, 0] = -h * (vy * vx + (vx + vy) * vy)
        out[:, 1] = h * vx * vx
        return out

    def mass_times(self, Q: FloatArray, X: FloatArray) -> FloatArray:
        c = np.cos(Q[:, 1])
        m11 = self.t1 + 2 * self.t2 * c
        m12 = self.t3 + self.t2 * c
        out = np.empty_like(X)
        out[:, 0] = m11 * X[:, 0] + m12 * X[:, 1]
        out[:, 1] = m12 * X[:, 0] + self.t3 * X[:, 1]
        return out

    def accel(self, Q: FloatArray, V: FloatArray, tau: FloatArray) -> FloatArray:
        c = np.cos(Q[:, 1])
        m11 = self.t1 + 2 * self.t2 * c
        m12 = self.t3 + self.t2 * c
        m22 = self.t3
        b = tau - self.coriolis_times_qdot(Q, V)
        det = m11 * m22 - m12 * m12
        out = np.empty_like(V)
        out[:, 0] = (m22 * b[:, 0] - m12 * b[:, 1]) / det
        out[:, 1] = (m11 * b[:, 1] - m12 * b[:, 0]) / det
        return out

    def kinetic_energy(self, Q: FloatArray, V: FloatArray) -> float:
        return 0.5 * float(np.sum(V * self.mass_times(Q, V)))
