"""Scenario model and deterministic fixed-step RK4 simulation of the closed loop."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from . import metrics
from .control import (
    ClosedLoop,
    ControlError,
    ControllerSpec,
    PotentialParams,
    SafetyViolation,
    gain_condition,
)
from .convex import (
    ConvexRegion,
    EmptyIntersectionError,
    RegionBank,
    RegionError,
    is_bounded,
    project_intersection,
    region_from_dict,
    region_to_dict,
)
from .dynamics import DynamicsError, ManipulatorParams, PlantBank
from .graph import (
    GraphError,
    GraphSchedule,
    graph_from_dict,
    graph_to_dict,
    laplacian,
    schedule_from_dict,
    schedule_to_dict,
)

FloatArray = NDArray[np.float64]

SEED_ENV = "SETREND_SEED"
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Scenario fails validation; the message names the violated condition."""


class NumericFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Tolerances:
    distance: float = 1e-2
    consensus: float = 1e-2
    velocity: float = 1e-3
    lyapunov_rel: float = 1e-6
    oscillation_window: float = 20.0
    oscillation_speed: float = 1e-2


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    regions: tuple[ConvexRegion, ...]
    schedule: GraphSchedule
    controller: ControllerSpec
    params: tuple[ManipulatorParams, ...]
    q0: FloatArray
    qdot0: FloatArray
    dt: float = 1e-3
    t_end: float = 100.0
    record_every: int = 100
    seed: int = 0
    nonconvex_demo: bool = False
    tolerances: Tolerances = field(default_factory=Tolerances)
    source: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.q0.shape[0]

    @property
    def m(self) -> int:
        return self.q0.shape[1]

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_overrides(
        self, k: float | None = None, dt: float | None = None, t_end: float | None = None
    ) -> "Scenario":
        if k is not None and self.controller.law == "switching":
            _check_gain(self.schedule, float(k))
        try:
            ctrl = self.controller if k is None else replace(self.controller, k=float(k))
        except ControlError as exc:
            raise ScenarioError(str(exc)) from exc
        out = replace(
            self,
            controller=ctrl,
            dt=self.dt if dt is None else float(dt),
            t_end=self.t_end if t_end is None else float(t_end),
        )
        validate(out)
        return out


def _grid_placement(n: int, spec: dict[str, Any], seed: int) -> tuple[FloatArray, FloatArray]:
    """Seeded jittered placement on a square grid with random velocities."""
    side = int(math.ceil(math.sqrt(n)))
    lo, hi = float(spec.get("lo", -10.0)), float(spec.get("hi", 10.0))
    jitter = float(spec.get("jitter", 0.0))
    speed = float(spec.get("speed", 0.0))
    axis = np.linspace(lo, hi, side) if side > 1 else np.array([(lo + hi) / 2])
    gx, gy = np.meshgrid(axis, axis[::-1])
    pts = np.column_stack([gx.ravel(), gy.ravel()])[:n]
    rng = np.random.default_rng(seed)
    q = pts + rng.uniform(-jitter, jitter, size=pts.shape)
    qd = rng.uniform(-speed, speed, size=pts.shape)
    return q, qd


def scenario_from_dict(doc: dict[str, Any], name: str | None = None) -> Scenario:
    """Build and validate a scenario from its JSON document."""
    try:
        return _scenario_from_dict(doc, name)
    except ScenarioError:
        raise
    except (RegionError, GraphError, ControlError, DynamicsError) as exc:
        raise ScenarioError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from exc


def _scenario_from_dict(doc: dict[str, Any], name: str | None) -> Scenario:
    regions = tuple(region_from_dict(r) for r in doc["regions"])
    n = len(regions)
    if n == 0:
        raise ScenarioError("scenario needs at least one agent")

    if ("graph" in doc) == ("schedule" in doc):
        raise ScenarioError("scenario needs exactly one of 'graph' or 'schedule'")
    if "graph" in doc:
        schedule = GraphSchedule.constant(graph_from_dict(doc["graph"]))
    else:
        schedule = schedule_from_dict(doc["schedule"])

    c = doc["controller"]
    if c.get("law") == "switching":
        # checked before ControllerSpec so that k <= 0 also reports the threshold
        _check_gain(schedule, float(c["k"]))
    avoidance = PotentialParams(float(c["R"]), float(c["r"])) if c["law"] == "collision" else None
    controller = ControllerSpec(c["law"], float(c["k"]), avoidance)

    dyn = doc.get("dynamics", {})
    if "per_agent" in dyn:
        params = tuple(ManipulatorParams.from_sequence(t) for t in dyn["per_agent"])
    else:
        params = (ManipulatorParams.from_sequence(dyn.get("theta", (1.301, 0.256, 0.096))),) * n

    seed = int(doc.get("seed", 0))
    init = doc["initial"]
    if "placement" in init:
        env = os.environ.get(SEED_ENV)
        placement_seed = int(env) if env not in (None, "") else seed
        q0, qdot0 = _grid_placement(n, init["placement"], placement_seed)
    else:
        q0 = np.array(init["q"], dtype=np.float64)
        qdot0 = np.array(init.get("qdot", np.zeros_like(q0)), dtype=np.float64)

    tol = Tolerances(**doc.get("tolerances", {}))
    scen = Scenario(
        name=name or doc.get("name", "scenario"),
        regions=regions,
        schedule=schedule,
        controller=controller,
        params=params,
        q0=q0,
        qdot0=qdot0,
        dt=float(doc.get("dt", 1e-3)),
        t_end=float(doc.get("t_end", 100.0)),
        record_every=int(doc.get("record_every", 100)),
        seed=seed,
        nonconvex_demo=bool(doc.get("nonconvex_demo", False)),
        tolerances=tol,
        source=doc,
    )
    validate(scen)
    return scen


def validate(s: Scenario) -> None:
    n = len(s.regions)
    if n == 0:
        raise ScenarioError("scenario needs at least one agent")
    if s.q0.shape != (n, 2) or s.qdot0.shape != (n, 2):
        raise ScenarioError(
            f"initial states must be {n}x2 (one planar two-link agent per region), "
            f"got q {s.q0.shape} and qdot {s.qdot0.shape}"
        )
    if not (np.all(np.isfinite(s.q0)) and np.all(np.isfinite(s.qdot0))):
        raise ScenarioError("initial states must be finite")
    if len(s.params) != n:
        raise ScenarioError(f"expected {n} dynamics parameter sets, got {len(s.params)}")
    if any(reg.dim != 2 for reg in s.regions):
        raise ScenarioError("every region must be two-dimensional")
    if s.schedule.n != n:
        raise ScenarioError(f"graph has {s.schedule.n} nodes but the scenario has {n} agents")
    if not s.dt > 0 or not s.t_end > 0:
        raise ScenarioError("dt and t_end must be positive")
    if abs(s.n_steps * s.dt - s.t_end) > 1e-9 * max(1.0, s.t_end) or s.n_steps < 1:
        raise ScenarioError(f"t_end={s.t_end} is not a whole number of steps of dt={s.dt}")
    if s.record_every < 1:
        raise ScenarioError("record_every must be >= 1")

    convex = all(reg.convex for reg in s.regions)
    if not convex and not s.nonconvex_demo:
        raise ScenarioError(
            "non-convex target regions need \"nonconvex_demo\": true (convexity is required "
            "for set aggregation)"
        )
    if convex:
        uniq = unique_regions(s.regions)
        try:
            project_intersection(uniq, np.zeros(2))
        except EmptyIntersectionError as exc:
            raise ScenarioError(f"target regions have an empty intersection: {exc}") from exc
        if not is_bounded(uniq):
            raise ScenarioError("the intersection of the target regions must be bounded")

    for t in s.schedule.switch_times_until(s.t_end):
        steps = t / s.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ScenarioError(f"graph switch at t={t:g} does not fall on a step boundary (dt={s.dt:g})")

    if s.controller.law == "switching":
        _check_gain(s.schedule, s.controller.k)

    if s.controller.law == "collision":
        r = s.controller.avoidance.r
        d = _pairwise(s.q0)
        if n > 1 and np.min(d) <= r:
            i, j = np.unravel_index(int(np.argmin(d)), d.shape)
            raise ScenarioError(
                f"agents {min(i, j) + 1} and {max(i, j) + 1} start {d[i, j]:.6g} apart, "
                f"within the safety radius r={r:g}"
            )


def _check_gain(schedule: GraphSchedule, k: float) -> None:
    gc = gain_condition(schedule, k)
    if not gc.ok:
        raise ScenarioError(
            f"gain k={k:g} violates the switching-law gain condition "
            f"k > 2 + lambda_max/4 = {gc.threshold:.6g}"
        )


def unique_regions(regions: Sequence[ConvexRegion]) -> list[ConvexRegion]:
    seen: dict[str, ConvexRegion] = {}
    for reg in regions:
        seen.setdefault(json.dumps(region_to_dict(reg), sort_keys=True), reg)
    return list(seen.values())


def _pairwise(Q: FloatArray) -> FloatArray:
    D = Q[:, None, :] - Q[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", D, D))
    np.fill_diagonal(d, np.inf)
    return d


def min_pairwise(Q: FloatArray) -> float:
    if Q.shape[0] < 2:
        return math.inf
    return float(np.min(_pairwise(Q)))


def load_scenario(path: str | os.PathLike[str]) -> Scenario:
    """Load a scenario file; bare bundled names such as ``paper_4c1_circles`` also resolve."""
    p = resolve_scenario_path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc, name=doc.get("name", p.stem))


def resolve_scenario_path(path: str | os.PathLike[str]) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / p.name, SCENARIO_DIR / f"{p.name}.json"):
        if cand.exists():
            return cand
    raise ScenarioError(f"scenario file not found: {path}")


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    ctrl: dict[str, Any] = {"law": s.controller.law, "k": s.controller.k}
    if s.controller.avoidance is not None:
        ctrl.update(R=s.controller.avoidance.R, r=s.controller.avoidance.r)
    doc: dict[str, Any] = {
        "name": s.name,
        "dynamics": {"per_agent": [list(p.theta) for p in s.params]},
        "regions": [region_to_dict(r) for r in s.regions],
        "controller": ctrl,
        "initial": {"q": s.q0.tolist(), "qdot": s.qdot0.tolist()},
        "dt": s.dt,
        "t_end": s.t_end,
        "record_every": s.record_every,
        "seed": s.seed,
        "nonconvex_demo": s.nonconvex_demo,
    }
    if s.schedule.is_switching() or s.schedule.interval is not None:
        doc["schedule"] = schedule_to_dict(s.schedule)
    else:
        doc["graph"] = graph_to_dict(s.schedule.graphs[0])
    return doc


class SimContext:
    """Precomputed, immutable per-scenario data used at every step."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.bank = RegionBank(scenario.regions)
        self.plant = PlantBank(scenario.params)
        self.loop = ClosedLoop(scenario.controller, self.bank, self.plant)
        self.laplacians = [laplacian(g) for g in scenario.schedule.graphs]
        self.convex = self.bank.convex
        self.x0_regions = unique_regions(scenario.regions) if self.convex else None
        # fixed reference point inside X0 for the switching-law Lyapunov function
        self.q_ref = (
            project_intersection(self.x0_regions, np.zeros(scenario.m)).point
            if self.convex
            else None
        )

    def graph_index(self, t: float, dt: float) -> int:
        # the graph is constant on [t, t + dt) because switches sit on step boundaries
        return self.scenario.schedule.graph_index(t + 0.5 * dt)

    def rhs(self, Q: FloatArray, V: FloatArray, L: FloatArray) -> tuple[FloatArray, FloatArray]:
        acc, _ = self.loop.accel(Q, V, L)
        return V, acc


def step(
    ctx: SimContext, Q: FloatArray, V: FloatArray, t: float, dt: float
) -> tuple[FloatArray, FloatArray]:
    """One classic RK4 step of the coupled closed loop from time ``t``."""
    L = ctx.laplacians[ctx.graph_index(t, dt)]
    k1q, k1v = V, ctx.loop.accel(Q, V, L)[0]
    h = 0.5 * dt
    k2q = V + h * k1v
    k2v = ctx.loop.accel(Q + h * k1q, k2q, L)[0]
    k3q = V + h * k2v
    k3v = ctx.loop.accel(Q + h * k2q, k3q, L)[0]
    k4q = V + dt * k3v
    k4v = ctx.loop.accel(Q + dt * k3q, k4q, L)[0]
    s = dt / 6.0
    return (
        Q + s * (k1q + 2 * k2q + 2 * k3q + k4q),
        V + s * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


@dataclass
class Termination:
    status: str  # "completed" | "safety_violation" | "numeric_failure"
    time: float
    message: str = ""


@dataclass
class Trajectory:
    scenario: Scenario
    times: FloatArray
    q: FloatArray
    qdot: FloatArray
    tau: FloatArray
    samples: list[metrics.StepMetrics]
    termination: Termination
    min_pairwise_all_steps: float
    context: SimContext = field(repr=False)

    @property
    def completed(self) -> bool:
        return self.termination.status == "completed"

    def metric(self, name: str) -> FloatArray:
        return np.array([getattr(m, name) for m in self.samples], dtype=np.float64)


def run(scenario: Scenario, context: SimContext | None = None) -> Trajectory:
    """Integrate ``scenario`` to ``t_end``, sampling every ``record_every`` steps."""
    ctx = context or SimContext(scenario)
    s = scenario
    Q, V = s.q0.copy(), s.qdot0.copy()
    r = s.controller.avoidance.r if s.controller.avoidance is not None else None
    times, qs, vs, taus, samples = [], [], [], [], []
    track_pairs = s.n > 1
    min_pair = min_pairwise(Q) if track_pairs else math.inf

    def record(step_idx: int, Q: FloatArray, V: FloatArray) -> None:
        t = step_idx * s.dt
        L = ctx.laplacians[ctx.graph_index(t, s.dt)]
        tau = ctx.loop.torques(Q, V, L)
        times.append(t)
        qs.append(Q.copy())
        vs.append(V.copy())
        taus.append(tau)
        samples.append(metrics.step_metrics(ctx, Q, V, t))

    termination = Termination("completed", s.t_end)
    try:
        record(0, Q, V)
    except SafetyViolation as exc:
        exc.t = 0.0
        raise
    for k in range(s.n_steps):
        t = k * s.dt
        try:
            Qn, Vn = step(ctx, Q, V, t, s.dt)
        except SafetyViolation as exc:
            termination = Termination("safety_violation", t, _at(exc, t))
            break
        t_next = (k + 1) * s.dt
        if not (np.all(np.isfinite(Qn)) and np.all(np.isfinite(Vn))):
            termination = Termination("numeric_failure", t_next, f"non-finite state at t={t_next:.6g}")
            break
        Q, V = Qn, Vn
        if track_pairs:
            d = min_pairwise(Q)
            min_pair = min(min_pair, d)
            if r is not None and d <= r:
                termination = Termination(
                    "safety_violation",
                    t_next,
                    f"minimum pairwise distance {d:.6g} <= r={r:g} at t={t_next:.6g}",
                )
                break
        if (k + 1) % s.record_every == 0 or k + 1 == s.n_steps:
            try:
                record(k + 1, Q, V)
            except SafetyViolation as exc:
                termination = Termination("safety_violation", t_next, _at(exc, t_next))
                break
    return Trajectory(
        scenario=s,
        times=np.array(times),
        q=np.array(qs),
        qdot=np.array(vs),
        tau=np.array(taus),
        samples=samples,
        termination=termination,
        min_pairwise_all_steps=min_pair,
        context=ctx,
    )


def _at(exc: SafetyViolation, t: float) -> str:
    exc.t = t
    return str(SafetyViolation(exc.pair, exc.dist, exc.r, t))


def spread_rate_check(traj: Trajectory, h: float = 1e-5) -> tuple[bool, float]:
    """Check ``(hbar(t+h) - hbar(t)) / h <= max|delta_i|(t) + 1e-3`` at every sample.

    The extremes of the lifted coordinates ``q_i`` and ``q_i + (2/k) qd_i`` are
    advanced by one RK4 step of size ``h`` from each recorded state; the mirrored
    inequality for the lower extreme is checked too.  Returns the verdict and the
    worst slack (largest ``rate - bound``).
    """
    ctx = traj.context
    k = traj.scenario.controller.k
    worst = -math.inf
    for t, Q, V, sm in zip(traj.times, traj.q, traj.qdot, traj.samples):
        Qh, Vh = step(ctx, Q, V, float(t), h)
        X0 = np.concatenate([Q, Q + (2.0 / k) * V])
        Xh = np.concatenate([Qh, Qh + (2.0 / k) * Vh])
        up = (Xh.max(axis=0) - X0.max(axis=0)) / h
        down = -(Xh.min(axis=0) - X0.min(axis=0)) / h
        worst = max(worst, float(np.max(up)) - sm.max_delta, float(np.max(down)) - sm.max_delta)
    return worst <= 1e-3, worst
