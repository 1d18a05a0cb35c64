"""Undirected weighted communication graphs and switching schedules.

Scenario files label nodes ``1..n``; everything in this module is 0-based.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

log = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    n: int
    adjacency: FloatArray

    def __post_init__(self) -> None:
        A = np.array(self.adjacency, dtype=np.float64)
        if A.shape != (self.n, self.n):
            raise GraphError(f"adjacency must be {self.n}x{self.n}, got {A.shape}")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise GraphError("weights must be finite and nonnegative")
        if np.any(np.diag(A) != 0):
            raise GraphError("adjacency diagonal must be zero")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency must be symmetric")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[float]]) -> "WeightedGraph":
        """Build from 0-based ``(i, j)`` or ``(i, j, w)`` tuples."""
        A = np.zeros((n, n))
        for e in edges:
            i, j = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"bad edge {tuple(e)} for {n} nodes")
            A[i, j] = A[j, i] = w
        return cls(n, A)

    @classmethod
    def empty(cls, n: int) -> "WeightedGraph":
        return cls(n, np.zeros((n, n)))

    @classmethod
    def complete(cls, n: int, weight: float = 1.0) -> "WeightedGraph":
        return cls(n, weight * (np.ones((n, n)) - np.eye(n)))

    @classmethod
    def star(cls, n: int, center: int = 0, weight: float = 1.0) -> "WeightedGraph":
        return cls.from_edges(n, [(center, j, weight) for j in range(n) if j != center])

    def edges(self) -> list[tuple[int, int, float]]:
        iu, ju = np.nonzero(np.triu(self.adjacency))
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(iu, ju)]

    def neighbors(self, i: int) -> NDArray[np.intp]:
        return np.nonzero(self.adjacency[i])[0]

    def union(self, other: "WeightedGraph") -> "WeightedGraph":
        return WeightedGraph(self.n, np.maximum(self.adjacency, other.adjacency))


def laplacian(g: WeightedGraph) -> FloatArray:
    A = g.adjacency
    return np.diag(A.sum(axis=1)) - A


def connected_components(g: WeightedGraph) -> list[list[int]]:
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        seen[s] = True
        comp, queue = [], deque([s])
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in np.nonzero(g.adjacency[u] > 0)[0]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(int(v))
        comps.append(sorted(comp))
    return comps


def is_connected(g: WeightedGraph) -> bool:
    return len(connected_components(g)) == 1


def largest_eigenvalue(L: FloatArray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Power iteration brings the Rayleigh quotient near the top of the spectrum,
    then Rayleigh-quotient iteration refines it to ``tol``.
    """
    n = L.shape[0]
    if n == 0 or not np.any(L):
        return 0.0
    # deterministic start with a nonzero component along every eigenvector (generic)
    x = np.random.default_rng(12345).standard_normal(n)
    x /= np.linalg.norm(x)
    mu = float(x @ L @ x)
    for _ in range(max_iter):
        y = L @ x
        x_new = y / np.linalg.norm(y)
        mu_new = float(x_new @ L @ x_new)
        x = x_new
        if abs(mu_new - mu) <= 1e-6 * max(1.0, abs(mu_new)):
            mu = mu_new
            break
        mu = mu_new
    eye = np.eye(n)
    for _ in range(50):
        try:
            y = np.linalg.solve(L - mu * eye, x)
        except np.linalg.LinAlgError:
            break
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0:
            break
        x = y / nrm
        mu_new = float(x @ L @ x)
        done = abs(mu_new - mu) <= tol
        mu = mu_new
        if done or np.linalg.norm(L @ x - mu * x) <= tol:
            break
    return mu


@dataclass(frozen=True, eq=False)
class GraphSchedule:
    """Piecewise-constant graph signal ``sigma(t)``.

    ``switch_times[l]`` starts interval ``l`` and ``indices[l]`` names the graph
    active on ``[switch_times[l], switch_times[l+1])``.  Without ``interval``
    the last listed graph stays active forever.  With ``interval`` set, the
    listed times must be evenly spaced by it and the pattern repeats
    indefinitely (one period = ``len(indices) * interval``).
    """

    graphs: tuple[WeightedGraph, ...]
    switch_times: tuple[float, ...]
    indices: tuple[int, ...]
    dwell: float
    interval: float | None = None

    def __post_init__(self) -> None:
        if not self.graphs:
            raise GraphError("schedule needs at least one graph")
        if len({g.n for g in self.graphs}) != 1:
            raise GraphError("all scheduled graphs must share the node count")
        if not self.switch_times or len(self.switch_times) != len(self.indices):
            raise GraphError("switch_times and indices must be nonempty and equally long")
        if any(not 0 <= p < len(self.graphs) for p in self.indices):
            raise GraphError("schedule index out of range")
        if not self.dwell > 0:
            raise GraphError("dwell time must be positive")
        gaps = np.diff(np.asarray(self.switch_times, dtype=np.float64))
        if np.any(gaps <= 0):
            raise GraphError("switch times must be strictly increasing")
        if self.interval is not None:
            if not self.interval > 0:
                raise GraphError("switch interval must be positive")
            if np.any(np.abs(gaps - self.interval) > 1e-9 * self.interval):
                raise GraphError("periodic schedule needs switch times spaced by the interval")
            gaps = np.append(gaps, self.interval)
        if gaps.size and np.min(gaps) < self.dwell - 1e-12:
            raise GraphError(
                f"switching interval {np.min(gaps):g} is shorter than dwell {self.dwell:g}"
            )

    @classmethod
    def constant(cls, g: WeightedGraph, t0: float = 0.0) -> "GraphSchedule":
        return cls((g,), (t0,), (0,), dwell=math.inf)

    @classmethod
    def periodic(
        cls,
        graphs: Sequence[WeightedGraph],
        pattern: Sequence[int],
        interval: float,
        t0: float = 0.0,
        dwell: float | None = None,
    ) -> "GraphSchedule":
        times = tuple(t0 + l * interval for l in range(len(pattern)))
        return cls(
            tuple(graphs),
            times,
            tuple(int(p) for p in pattern),
            dwell=interval if dwell is None else dwell,
            interval=interval,
        )

    @property
    def n(self) -> int:
        return self.graphs[0].n

    @property
    def start(self) -> float:
        return self.switch_times[0]

    def graph_index(self, t: float) -> int:
        if t < self.start:
            raise GraphError(f"time {t} precedes schedule start {self.start}")
        if self.interval is not None:
            l = int(math.floor((t - self.start) / self.interval + 1e-9))
            return self.indices[l % len(self.indices)]
        return self.indices[int(np.searchsorted(self.switch_times, t, side="right") - 1)]

    def switch_times_until(self, horizon: float) -> list[float]:
        """Interval start times in ``[start, horizon)``."""
        if self.interval is None:
            return [t for t in self.switch_times if t < horizon]
        count = int(math.ceil((horizon - self.start) / self.interval - 1e-9))
        return [self.start + l * self.interval for l in range(max(count, 1))]

    def is_switching(self) -> bool:
        return len(set(self.indices)) > 1


def active_graph(schedule: GraphSchedule, t: float) -> WeightedGraph:
    """Right-continuous lookup of the graph active at ``t``."""
    return schedule.graphs[schedule.graph_index(t)]


def union_graph(schedule: GraphSchedule, t_start: float, t_end: float) -> WeightedGraph:
    """Union of the graphs active anywhere in ``[t_start, t_end)``."""
    g = active_graph(schedule, t_start)
    for s in schedule.switch_times_until(t_end):
        if s > t_start:
            g = g.union(active_graph(schedule, s))
    return g


def is_uniformly_jointly_connected(
    schedule: GraphSchedule, horizon: float, window: float
) -> bool:
    """Check that every length-``window`` union graph in ``[start, horizon]`` is connected.

    Window starts are scanned on switch times only: a window that starts
    between two switches covers a superset of the graphs seen by the window
    starting at the preceding switch.
    """
    if not window > 0:
        raise GraphError("window length must be positive")
    if window < schedule.dwell:
        log.warning(
            "window %g is shorter than the dwell time %g; each window sees at most two graphs",
            window,
            schedule.dwell,
        )
    last_start = horizon - window
    starts = [s for s in schedule.switch_times_until(horizon) if s <= last_start + 1e-12]
    if not starts:
        return is_connected(union_graph(schedule, schedule.start, horizon))
    return all(is_connected(union_graph(schedule, s, s + window)) for s in starts)


def max_laplacian_eigenvalue(schedule: GraphSchedule) -> float:
    return max(largest_eigenvalue(laplacian(g)) for g in schedule.graphs)


def algebraic_connectivity(g: WeightedGraph) -> float:
    """Second-smallest Laplacian eigenvalue."""
    if g.n < 2:
        raise GraphError("algebraic connectivity needs at least two nodes")
    return float(np.linalg.eigvalsh(laplacian(g))[1])


def graph_from_dict(spec: dict[str, Any]) -> WeightedGraph:
    n = int(spec["nodes"])
    edges = []
    for e in spec.get("edges", []):
        w = float(e[2]) if len(e) > 2 else 1.0
        edges.append((int(e[0]) - 1, int(e[1]) - 1, w))
    return WeightedGraph.from_edges(n, edges)


def graph_to_dict(g: WeightedGraph) -> dict[str, Any]:
    return {"nodes": g.n, "edges": [[i + 1, j + 1, w] for i, j, w in g.edges()]}


def schedule_from_dict(spec: dict[str, Any]) -> GraphSchedule:
    """Parse ``{"graphs", "period", "switch_times" | "interval", "dwell"}``.

    ``period`` is the cyclic sequence of graph indices applied to consecutive
    intervals.  ``interval`` gives indefinitely repeating uniform switching;
    ``switch_times`` lists interval starts explicitly.
    """
    graphs = tuple(graph_from_dict(g) for g in spec["graphs"])
    pattern = [int(p) for p in spec.get("period", range(len(graphs)))]
    dwell = spec.get("dwell")
    if "interval" in spec:
        return GraphSchedule.periodic(
            graphs,
            pattern,
            float(spec["interval"]),
            float(spec.get("t0", 0.0)),
            None if dwell is None else float(dwell),
        )
    times = [float(t) for t in spec["switch_times"]]
    indices = [pattern[l % len(pattern)] for l in range(len(times))]
    if dwell is None:
        raise GraphError("explicit switch_times need a dwell time")
    return GraphSchedule(graphs, tuple(times), tuple(indices), float(dwell))


def schedule_to_dict(s: GraphSchedule) -> dict[str, Any]:
    out: dict[str, Any] = {"graphs": [graph_to_dict(g) for g in s.graphs], "period": list(s.indices)}
    if s.interval is not None:
        out.update(interval=s.interval, t0=s.start, dwell=s.dwell)
    else:
        out.update(switch_times=list(s.switch_times), dwell=s.dwell)
    return out
