"""Target regions, Euclidean projections and intersection distances.

Every region exposes ``project_many(X)`` which maps a ``(k, m)`` batch of
points to their nearest points in the region.  Balls and boxes are closed
form; polytopes run Dykstra's method over their halfspaces; a union of convex
members returns the nearest member projection (lowest member index on ties).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog, minimize

FEAS_TOL = 1e-8
POLYTOPE_TOL = 1e-10
POLYTOPE_MAX_ITER = 10_000

FloatArray = NDArray[np.float64]


class RegionError(ValueError):
    """Invalid region definition or violated region precondition."""


class NonConvexRegionError(RegionError):
    pass


class EmptyIntersectionError(RegionError):
    """Raised when Dykstra's feasibility residual does not vanish.

    ``pair`` holds the indices of two regions whose intersection is empty (or,
    if every pair intersects, the pair with the largest residual gap).
    """

    def __init__(self, message: str, pair: tuple[int, int]):
        super().__init__(message)
        self.pair = pair


def _as_points(X: ArrayLike) -> FloatArray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X


@dataclass(frozen=True, eq=False)
class Ball:
    center: FloatArray
    radius: float
    convex = True

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0 or not np.all(np.isfinite(c)):
            raise RegionError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project_many(self, X: FloatArray) -> FloatArray:
        d = X - self.center
        nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
        scale = np.minimum(1.0, self.radius / np.maximum(nrm, 1e-300))
        return self.center + d * scale[:, None]


@dataclass(frozen=True, eq=False)
class Box:
    lo: FloatArray
    hi: FloatArray
    convex = True

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape:
            raise RegionError("box lo/hi dimension mismatch")
        if np.any(lo > hi):
            raise RegionError(f"box requires lo <= hi componentwise, got {lo} / {hi}")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def project_many(self, X: FloatArray) -> FloatArray:
        return np.clip(X, self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class Polytope:
    """Intersection of halfspaces ``normal . x <= offset``.

    Normals are rescaled to unit length at construction (offsets follow).
    """

    normals: FloatArray
    offsets: FloatArray
    convex = True

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.normals, dtype=np.float64))
        b = np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        if A.shape[0] < 1 or A.shape[0] != b.shape[0]:
            raise RegionError("polytope needs >= 1 halfspace with matching offsets")
        nrm = np.linalg.norm(A, axis=1)
        if np.any(nrm == 0):
            raise RegionError("polytope halfspace normal must be nonzero")
        A = A / nrm[:, None]
        b = b / nrm
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        if _chebyshev_radius(A, b) is None:
            raise RegionError("polytope is infeasible (empty)")

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def project_point(
        self, x: FloatArray, tol: float = POLYTOPE_TOL, max_iter: int = POLYTOPE_MAX_ITER
    ) -> tuple[FloatArray, int, bool]:
        A, b = self.normals, self.offsets
        y = np.array(x, dtype=np.float64)
        if np.all(A @ y <= b):
            return y, 0, True
        incr = np.zeros_like(A)
        for it in range(1, max_iter + 1):
            y_prev = y
            for j in range(A.shape[0]):
                z = y + incr[j]
                excess = A[j] @ z - b[j]
                y = z - excess * A[j] if excess > 0 else z
                incr[j] = z - y
            if np.linalg.norm(y - y_prev) < tol:
                return y, it, True
        return y, max_iter, False

    def project_many(self, X: FloatArray) -> FloatArray:
        return np.array([self.project_point(x)[0] for x in X]).reshape(X.shape)


def _chebyshev_radius(A: FloatArray, b: FloatArray) -> float | None:
    m = A.shape[1]
    # maximise s subject to A x + s <= b, 0 <= s <= 1
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    bounds = [(None, None)] * m + [(0.0, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return float(res.x[-1])


@dataclass(frozen=True, eq=False)
class UnionOfConvex:
    """Non-convex demonstration region: union of convex members."""

    members: tuple[Ball | Box | Polytope, ...] = field(default_factory=tuple)
    convex = False

    def __post_init__(self) -> None:
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise RegionError("union needs at least one member")
        for mem in members:
            if not getattr(mem, "convex", False):
                raise RegionError("union members must be convex regions")
        if len({mem.dim for mem in members}) != 1:
            raise RegionError("union members must share a dimension")

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def project_many(self, X: FloatArray) -> FloatArray:
        best = None
        best_d = None
        for mem in self.members:
            P = mem.project_many(X)
            d = np.linalg.norm(X - P, axis=1)
            if best is None:
                best, best_d = P, d
            else:
                # strict < keeps the lowest member index on ties
                take = d < best_d
                best = np.where(take[:, None], P, best)
                best_d = np.where(take, d, best_d)
        return best


ConvexRegion = Union[Ball, Box, Polytope, UnionOfConvex]


@dataclass(frozen=True)
class ProjectionResult:
    point: FloatArray
    distance: float
    iterations: int = 0
    converged: bool = True


def project(region: ConvexRegion, x: ArrayLike) -> ProjectionResult:
    """Nearest point of ``region`` to ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if isinstance(region, Polytope):
        p, iters, ok = region.project_point(x)
        return ProjectionResult(p, float(np.linalg.norm(x - p)), iters, ok)
    p = region.project_many(x[None, :])[0]
    return ProjectionResult(p, float(np.linalg.norm(x - p)))


def distance(region: ConvexRegion, x: ArrayLike) -> float:
    return project(region, x).distance


def distances(region: ConvexRegion, X: ArrayLike) -> FloatArray:
    X = _as_points(X)
    return np.linalg.norm(X - region.project_many(X), axis=1)


def contains(region: ConvexRegion, x: ArrayLike, tol: float = FEAS_TOL) -> bool:
    return distance(region, x) <= tol


def _require_convex(regions: Sequence[ConvexRegion]) -> None:
    if not regions:
        raise RegionError("need at least one region")
    for i, reg in enumerate(regions):
        if not reg.convex:
            raise NonConvexRegionError(f"region {i} is not convex")


def _dykstra(
    regions: Sequence[ConvexRegion], X: FloatArray, tol: float, max_iter: int
) -> tuple[FloatArray, int, bool, float]:
    Y = X.copy()
    incr = [np.zeros_like(X) for _ in regions]
    change = np.inf
    for it in range(1, max_iter + 1):
        Y_prev = Y
        for j, reg in enumerate(regions):
            Z = Y + incr[j]
            Y = reg.project_many(Z)
            incr[j] = Z - Y
        change = float(np.max(np.linalg.norm(Y - Y_prev, axis=1)))
        if change < tol:
            resid = _residual(regions, Y)
            if resid <= FEAS_TOL:
                return Y, it, True, resid
    return Y, max_iter, False, _residual(regions, Y)


def _residual(regions: Sequence[ConvexRegion], Y: FloatArray) -> float:
    return max(float(np.max(distances(reg, Y))) for reg in regions)


def _certificate_pair(regions: Sequence[ConvexRegion], y: FloatArray) -> tuple[int, int]:
    best_pair, best_gap = (0, min(1, len(regions) - 1)), -1.0
    for i, j in itertools.combinations(range(len(regions)), 2):
        a = regions[i].project_many(y[None, :])
        for _ in range(2000):
            b = regions[j].project_many(a)
            a = regions[i].project_many(b)
        gap = float(np.linalg.norm(a - regions[j].project_many(a)))
        if gap > 10 * FEAS_TOL:
            return (i, j)
        if gap > best_gap:
            best_pair, best_gap = (i, j), gap
    return best_pair


def _intersection_batch(
    regions: Sequence[ConvexRegion], X: FloatArray, tol: float, max_iter: int
) -> tuple[FloatArray, int, bool]:
    _require_convex(regions)
    Y, iters, ok, resid = _dykstra(regions, X, tol, max_iter)
    if not ok and resid > FEAS_TOL:
        worst = int(np.argmax([np.max(distances(reg, Y)) for reg in regions]))
        row = int(np.argmax(distances(regions[worst], Y)))
        pair = _certificate_pair(regions, Y[row])
        raise EmptyIntersectionError(
            f"intersection appears empty: feasibility residual {resid:.3g} "
            f"after {iters} iterations; regions {pair[0]} and {pair[1]} certify it",
            pair,
        )
    return Y, iters, ok


def project_intersection(
    regions: Sequence[ConvexRegion],
    x: ArrayLike,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> ProjectionResult:
    """Project ``x`` onto the intersection of convex ``regions`` (Dykstra)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    Y, iters, ok = _intersection_batch(regions, x[None, :], tol, max_iter)
    p = Y[0]
    return ProjectionResult(p, float(np.linalg.norm(x - p)), iters, ok)


def intersection_distances(
    regions: Sequence[ConvexRegion],
    X: ArrayLike,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> FloatArray:
    """Distances of each row of ``X`` to the intersection of ``regions``."""
    X = _as_points(X)
    Y, _, _ = _intersection_batch(regions, X, tol, max_iter)
    return np.linalg.norm(X - Y, axis=1)


def estimate_linear_regularity(
    regions: Sequence[ConvexRegion],
    sample_box: Box,
    n_samples: int,
    seed: int,
    refine: int = 8,
) -> float:
    """Sampled lower bound on the linear-regularity constant of ``regions``.

    Returns the largest observed ratio ``dist(x, X0) / max_i dist(x, X_i)``.
    Candidates are ``n_samples`` uniform draws from ``sample_box``; the best
    ``refine`` of them seed a Nelder-Mead ascent kept inside the box, which
    sharpens the estimate where the ratio peaks on a thin ridge.  Every value
    returned is attained at some point, so the result never exceeds the
    true constant.
    """
    _require_convex(regions)
    rng = np.random.default_rng(seed)
    X = rng.uniform(sample_box.lo, sample_box.hi, size=(n_samples, sample_box.dim))
    denom = np.max(np.stack([distances(reg, X) for reg in regions]), axis=0)
    informative = denom > FEAS_TOL
    if not np.any(informative):
        raise RegionError("no informative samples: every sample lies in every region")
    Xi = X[informative]
    ratios = intersection_distances(regions, Xi, tol=1e-12) / denom[informative]
    best = float(np.max(ratios))

    def neg_ratio(x: FloatArray) -> float:
        y = sample_box.project_many(x[None, :])
        d = max(float(distances(reg, y)[0]) for reg in regions)
        if d <= FEAS_TOL:
            return 0.0
        return -float(intersection_distances(regions, y, tol=1e-12)[0]) / d

    for idx in np.argsort(ratios)[::-1][:refine]:
        res = minimize(neg_ratio, Xi[idx], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -float(res.fun))
    return best


def _polytope_bounded(A: FloatArray, b: FloatArray) -> bool:
    m = A.shape[1]
    for k in range(m):
        for sign in (1.0, -1.0):
            c = np.zeros(m)
            c[k] = -sign
            res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * m, method="highs")
            if res.status == 3:
                return False
    return True


def is_bounded(regions: Sequence[ConvexRegion]) -> bool:
    """Whether the intersection of ``regions`` is bounded (assumes it is nonempty)."""
    if any(isinstance(r, (Ball, Box)) for r in regions):
        return True
    polys = [r for r in regions if isinstance(r, Polytope)]
    if len(polys) != len(regions):
        return all(is_bounded([m]) for r in regions for m in getattr(r, "members", (r,)))
    A = np.vstack([p.normals for p in polys])
    b = np.concatenate([p.offsets for p in polys])
    return _polytope_bounded(A, b)


def check_projection_inequality(region: ConvexRegion, x: ArrayLike, y: ArrayLike) -> float:
    """Return ``(P(x) - x) . (P(x) - y)``; nonpositive for convex regions."""
    if not region.convex:
        raise NonConvexRegionError("projection inequality needs a convex region")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if distance(region, y) > FEAS_TOL:
        raise RegionError("y must lie in the region")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    p = project(region, x).point
    return float((p - x) @ (p - y))


class RegionBank:
    """Vectorised projection of agent ``i`` onto its own region ``X_i``.

    Ball and box pieces (including union members) are evaluated in one batch;
    polytope pieces fall back to the per-point Dykstra loop.
    """

    def __init__(self, regions: Sequence[ConvexRegion]):
        self.regions = tuple(regions)
        self.n = len(self.regions)
        self.convex = all(reg.convex for reg in self.regions)
        pieces: list[tuple[int, Ball | Box | Polytope]] = []
        for i, reg in enumerate(self.regions):
            members = reg.members if isinstance(reg, UnionOfConvex) else (reg,)
            pieces.extend((i, mem) for mem in members)
        self._single = len(pieces) == self.n
        dim = self.regions[0].dim if self.regions else 0
        balls = [(i, p) for i, p in pieces if isinstance(p, Ball)]
        boxes = [(i, p) for i, p in pieces if isinstance(p, Box)]
        self._polys = [(i, p) for i, p in pieces if isinstance(p, Polytope)]
        self._ball_owner = np.array([i for i, _ in balls], dtype=np.intp)
        self._ball_c = np.array([p.center for _, p in balls]).reshape(len(balls), dim)
        self._ball_r = np.array([p.radius for _, p in balls])
        self._box_owner = np.array([i for i, _ in boxes], dtype=np.intp)
        self._box_lo = np.array([p.lo for _, p in boxes]).reshape(len(boxes), dim)
        self._box_hi = np.array([p.hi for _, p in boxes]).reshape(len(boxes), dim)
        # piece order within an agent follows member order, for tie-breaking
        order = {id(p): k for k, (_, p) in enumerate(pieces)}
        self._rank = np.array(
            [order[id(p)] for _, p in balls]
            + [order[id(p)] for _, p in boxes]
            + [order[id(p)] for _, p in self._polys]
        )

    def project(self, Q: FloatArray) -> FloatArray:
        outs, owners = [], []
        if self._ball_owner.size:
            d = Q[self._ball_owner] - self._ball_c
            nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
            scale = np.minimum(1.0, self._ball_r / np.maximum(nrm, 1e-300))
            outs.append(self._ball_c + d * scale[:, None])
            owners.append(self._ball_owner)
        if self._box_owner.size:
            outs.append(np.clip(Q[self._box_owner], self._box_lo, self._box_hi))
            owners.append(self._box_owner)
        if self._polys:
            outs.append(np.array([p.project_point(Q[i])[0] for i, p in self._polys]))
            owners.append(np.array([i for i, _ in self._polys], dtype=np.intp))
        P_all = np.concatenate(outs) if len(outs) > 1 else outs[0]
        owner = np.concatenate(owners) if len(owners) > 1 else owners[0]
        if self._single:
            P = np.empty_like(Q)
            P[owner] = P_all
            return P
        dist = np.linalg.norm(Q[owner] - P_all, axis=1)
        order = np.lexsort((self._rank, dist, owner))
        first = np.ones(order.size, dtype=bool)
        first[1:] = owner[order][1:] != owner[order][:-1]
        chosen = order[first]
        P = np.empty_like(Q)
        P[owner[chosen]] = P_all[chosen]
        return P


def region_from_dict(spec: dict[str, Any]) -> ConvexRegion:
    kind = spec.get("type")
    try:
        if kind == "ball":
            return Ball(spec["center"], spec["radius"])
        if kind == "box":
            return Box(spec["lo"], spec["hi"])
        if kind == "polytope":
            hs = spec["halfspaces"]
            return Polytope([h["normal"] for h in hs], [h["offset"] for h in hs])
        if kind == "union":
            return UnionOfConvex(tuple(region_from_dict(m) for m in spec["members"]))
    except KeyError as exc:
        raise RegionError(f"region of type {kind!r} is missing field {exc}") from None
    raise RegionError(f"unknown region type {kind!r}")


def region_to_dict(region: ConvexRegion) -> dict[str, Any]:
    if isinstance(region, Ball):
        return {"type": "ball", "center": region.center.tolist(), "radius": region.radius}
    if isinstance(region, Box):
        return {"type": "box", "lo": region.lo.tolist(), "hi": region.hi.tolist()}
    if isinstance(region, Polytope):
        return {
            "type": "polytope",
            "halfspaces": [
                {"normal": a.tolist(), "offset": float(b)}
                for a, b in zip(region.normals, region.offsets)
            ],
        }
    return {"type": "union", "members": [region_to_dict(m) for m in region.members]}
