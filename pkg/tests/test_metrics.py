from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from setrend.control import PotentialParams
from setrend.convex import Ball, Box, RegionError, distances
from setrend.dynamics import AgentState
from setrend.graph import GraphError, WeightedGraph
from setrend.metrics import (
    lyapunov_collision,
    lyapunov_fixed,
    lyapunov_switching,
    summarize,
    ultimate_bound,
)
from setrend.sim import load_scenario, run


def at_rest(*qs):
    return [AgentState(q, (0.0, 0.0)) for q in qs]


def test_fixed_lyapunov_zero_at_consensus_in_sets():
    regs = [Ball((0, 0), 1)] * 3
    assert lyapunov_fixed(at_rest((0.2, 0.1), (0.2, 0.1), (0.2, 0.1)), regs, WeightedGraph.complete(3)) == 0.0


def test_fixed_lyapunov_single_agent_projection_term():
    assert lyapunov_fixed(at_rest((4, 0)), [Ball((0, 0), 3)], WeightedGraph.empty(1)) == pytest.approx(0.5)


def test_fixed_lyapunov_kinetic_and_consensus_terms():
    g = WeightedGraph.from_edges(2, [(0, 1)])
    regs = [Ball((0, 0), 10)] * 2
    # 1/4 * (1 + 1) * |(1, 0)|^2 = 0.5
    assert lyapunov_fixed(at_rest((1, 0), (0, 0)), regs, g) == pytest.approx(0.5)
    moving = [AgentState((0, 0), (1, 0))]
    # 1/2 * M11(0) = 0.5 * 1.813
    assert lyapunov_fixed(moving, [Ball((0, 0), 1)], WeightedGraph.empty(1)) == pytest.approx(0.9065)


def test_fixed_lyapunov_nonnegative():
    rng = np.random.default_rng(0)
    regs = [Ball((1.5, 1.5), 3), Box((-1, -1), (2, 3)), Ball((0, -1.5), 3)]
    g = WeightedGraph.from_edges(3, [(0, 1), (1, 2)])
    for _ in range(500):
        sts = [AgentState(q, v) for q, v in zip(rng.normal(size=(3, 2)) * 5, rng.normal(size=(3, 2)))]
        assert lyapunov_fixed(sts, regs, g) >= 0


def test_switching_lyapunov_examples():
    regs = [Ball((0, 0), 3)]
    q0 = np.array([0.5, -0.5])
    assert lyapunov_switching([AgentState(q0, (0, 0))], regs, 5.0, q0) == 0.0
    assert lyapunov_switching(at_rest(q0 + (1, 0)), regs, 5.0, q0) == pytest.approx(2.5)


def test_switching_lyapunov_preconditions():
    with pytest.raises(ValueError):
        lyapunov_switching(at_rest((0, 0)), [Ball((0, 0), 1)], 1.0, (0, 0))
    with pytest.raises(RegionError):
        lyapunov_switching(at_rest((0, 0)), [Ball((0, 0), 1)], 5.0, (3, 0))


def test_switching_lyapunov_positive_definite_sweep():
    rng = np.random.default_rng(42)
    regs = [Box((-1, -1), (3, 2)), Box((-3, -1), (1, 2))]
    q0 = np.zeros(2)
    for _ in range(10_000):
        Q, V = rng.normal(size=(2, 2)) * 3, rng.normal(size=(2, 2)) * 3
        sts = [AgentState(q, v) for q, v in zip(Q, V)]
        assert lyapunov_switching(sts, regs, 5.0, q0) > 0


def test_collision_lyapunov_examples():
    pp = PotentialParams(2.0, 0.2)
    regs = [Ball((0, 0), 5)] * 2
    far = at_rest((0, 0), (3, 0))
    g = WeightedGraph.empty(2)
    assert lyapunov_collision(far, regs, g, pp) == lyapunov_fixed(far, regs, g)
    # one pair counted as (1,2) and (2,1), halved: 9.765625
    assert lyapunov_collision(at_rest((0, 0), (1, 0)), regs, g, pp) == pytest.approx(9.765625)


def test_ultimate_bound_known_spectra():
    assert ultimate_bound(1.0, WeightedGraph.complete(16), 1.0) == pytest.approx(math.sqrt(2) + 0.5)
    assert ultimate_bound(1.0, WeightedGraph.star(16), 1.0) == pytest.approx(math.sqrt(2) + 2)
    assert ultimate_bound(0.0, WeightedGraph.star(16), 1.3) == 0.0
    assert ultimate_bound(4.0, WeightedGraph.complete(16), 2.0) == pytest.approx(4 * (math.sqrt(2) + 0.5))


def test_ultimate_bound_preconditions():
    with pytest.raises(GraphError):
        ultimate_bound(1.0, WeightedGraph.empty(3), 1.0)
    with pytest.raises(ValueError):
        ultimate_bound(1.0, WeightedGraph.complete(3), 0.5)


@pytest.fixture(scope="module")
def circles_dense():
    # short dense-sampled stretch of the circle scenario
    scen = load_scenario("paper_4c1_circles")
    return run(replace(scen, t_end=2.0, record_every=1))


def test_fixed_lyapunov_rate_matches_damping(circles_dense):
    traj = circles_dense
    V = traj.metric("lyapunov")
    dt = traj.scenario.dt
    k = traj.scenario.controller.k
    rate = (V[2:] - V[:-2]) / (2 * dt)
    expect = -k * np.sum(traj.qdot[1:-1] ** 2, axis=(1, 2))
    np.testing.assert_allclose(rate, expect, rtol=0.05)


def test_step_metrics_invariants(circles_dense):
    regions = circles_dense.scenario.regions
    for Q, sm in zip(circles_dense.q, circles_dense.samples):
        assert np.all(sm.dist_to_own_set >= 0) and np.all(sm.velocity_norm >= 0)
        assert sm.consensus_error >= 0 and sm.min_pairwise >= 0 and sm.lyapunov >= 0
        assert np.all(sm.dist_to_intersection >= sm.dist_to_own_set - 1e-8)
        # X0 lies inside every region, so each agent is at least as far from X0
        # as from any single region
        to_any = np.max([distances(reg, Q) for reg in regions], axis=0)
        assert np.all(sm.dist_to_intersection >= to_any - 1e-8)


def test_summary_of_short_run_is_not_aggregated(circles_dense):
    rep = summarize(circles_dense)
    assert not rep.aggregation["achieved"]
    assert rep.lyapunov["monotone"]
    assert rep.safety is None and rep.ultimate_bound is None
    d = rep.to_dict()
    assert d["final"]["time"] == 2.0
    assert d["law"] == "fixed"
