from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setrend.control import (
    ClosedLoop,
    ControlError,
    ControllerSpec,
    PotentialParams,
    SafetyViolation,
    avoidance_gradients,
    control_collision,
    control_fixed,
    control_switching,
    gain_condition,
    pair_potentials,
    potential,
    potential_gradient,
    spread_diagnostic,
)
from setrend.convex import Ball, Box, RegionBank
from setrend.dynamics import AgentState, ManipulatorParams, PlantBank, coriolis_matrix, mass_matrix
from setrend.graph import GraphSchedule, WeightedGraph, laplacian

PP = PotentialParams(R=2.0, r=0.2)
THETA = ManipulatorParams()


def states(Q, V=None):
    V = np.zeros_like(Q) if V is None else V
    return [AgentState(q, v) for q, v in zip(Q, V)]


def test_param_validation():
    with pytest.raises(ControlError):
        PotentialParams(0.2, 2.0)
    with pytest.raises(ControlError):
        ControllerSpec("fixed", 0.0)
    with pytest.raises(ControlError):
        ControllerSpec("collision", 1.0)
    with pytest.raises(ControlError):
        ControllerSpec("fixed", 1.0, PP)
    with pytest.raises(ControlError):
        ControllerSpec("bogus", 1.0)


# --- fixed law -------------------------------------------------------------


def test_fixed_law_vanishes_at_consensus_in_set():
    Q = np.array([[0.1, 0.2]] * 3)
    g = WeightedGraph.complete(3)
    assert np.all(control_fixed(1, states(Q), Ball((0, 0), 1), g, 1.0) == 0)


def test_fixed_law_pure_projection_pull():
    tau = control_fixed(0, states(np.array([[4.0, 0.0]])), Ball((0, 0), 3), WeightedGraph.empty(1), 1.0)
    np.testing.assert_allclose(tau, [-1, 0])


def test_fixed_law_pure_consensus_is_antisymmetric():
    Q = np.array([[1.0, 0.0], [0.0, 0.0]])
    g = WeightedGraph.from_edges(2, [(0, 1)])
    big = Ball((0, 0), 10)
    np.testing.assert_allclose(control_fixed(0, states(Q), big, g, 1.0), [-1, 0])
    np.testing.assert_allclose(control_fixed(1, states(Q), big, g, 1.0), [1, 0])


def test_fixed_law_consensus_terms_sum_to_zero():
    rng = np.random.default_rng(4)
    g = WeightedGraph.complete(6, weight=0.7)
    big = Ball((0, 0), 100)
    for _ in range(50):
        Q = rng.normal(size=(6, 2)) * 3
        total = sum(control_fixed(i, states(Q), big, g, 1.0) for i in range(6))
        np.testing.assert_allclose(total, 0, atol=1e-12)


# --- switching law ---------------------------------------------------------


def test_switching_law_vanishes_at_rest_in_consensus():
    Q = np.array([[0.2, 0.3]] * 2)
    g = WeightedGraph.from_edges(2, [(0, 1)])
    assert np.all(control_switching(0, states(Q), Ball((0, 0), 1), g, 5.0, THETA) == 0)


def test_switching_law_single_agent_at_zero_elbow():
    tau = control_switching(0, states(np.array([[2.0, 0.0]])), Ball((0, 0), 1), WeightedGraph.empty(1), 5.0, THETA)
    np.testing.assert_allclose(tau, [-1.813, -0.352], atol=1e-12)


def test_switching_law_closed_loop_is_double_integrator():
    rng = np.random.default_rng(9)
    g = WeightedGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    regions = [Box((-1, -1), (2, 1)), Ball((0.5, 0), 1.5), Box((-2, -1), (1, 1)), Ball((0, 0), 1)]
    k = 5.0
    for _ in range(200):
        Q, V = rng.normal(size=(4, 2)) * 3, rng.normal(size=(4, 2))
        st_ = states(Q, V)
        for i in range(4):
            tau = control_switching(i, st_, regions[i], g, k, THETA)
            M, C = mass_matrix(THETA, Q[i]), coriolis_matrix(THETA, Q[i], V[i])
            lhs = np.linalg.solve(M, tau - C @ V[i])
            P = regions[i].project_many(Q[i][None])[0]
            cons = sum(g.adjacency[i, j] * (Q[i] - Q[j]) for j in range(4))
            rhs = -k * V[i] - cons - (Q[i] - P)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# --- potential -------------------------------------------------------------


def test_potential_values():
    assert potential(PP, 4.0) == 0.0
    assert potential(PP, 9.0) == 0.0
    # ((1 - 4) / (1 - 0.04))^2 by hand
    assert potential(PP, 1.0) == pytest.approx(9.765625, rel=1e-12)
    with pytest.raises(SafetyViolation):
        potential(PP, 0.04)


def test_potential_gradient_values():
    np.testing.assert_array_equal(potential_gradient(PP, (2, 0), (0, 0)), [0, 0])
    # 4 * 3.96 * (1 - 4) / (1 - 0.04)^3
    np.testing.assert_allclose(potential_gradient(PP, (1, 0), (0, 0)), [-53.7109375, 0], rtol=1e-12)
    with pytest.raises(SafetyViolation):
        potential_gradient(PP, (0.1, 0), (0, 0))


def _pot(qi, qj):
    d = np.asarray(qi) - np.asarray(qj)
    return potential(PP, float(d @ d))


def test_potential_gradient_finite_difference_sweep():
    # separations start at 2r: closer in, the barrier is large enough that a
    # 1e-6 central difference is limited by rounding, not by the gradient
    rng = np.random.default_rng(123)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        qj = rng.uniform(-3, 3, 2)
        ang = rng.uniform(0, 2 * np.pi)
        qi = qj + rng.uniform(2 * PP.r, 2.5) * np.array([np.cos(ang), np.sin(ang)])
        fd = np.array([(_pot(qi + h * e, qj) - _pot(qi - h * e, qj)) / (2 * h) for e in np.eye(2)])
        worst = max(worst, float(np.max(np.abs(fd - potential_gradient(PP, qi, qj)))))
    assert worst <= 1e-5


def test_potential_is_c1_at_sensing_radius():
    h = 1e-10
    for d in (PP.R - h, PP.R, PP.R + h):
        assert potential(PP, d * d) <= 1e-9
    slope_in = (potential(PP, PP.R**2) - potential(PP, (PP.R - h) ** 2)) / h
    slope_out = (potential(PP, (PP.R + h) ** 2) - potential(PP, PP.R**2)) / h
    assert abs(slope_in) <= 1e-9 and abs(slope_out) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), st.floats(0.25, 3.0), st.floats(0, 6.3))
def test_potential_gradient_antisymmetric(qj, dist, ang):
    qj = np.array(qj)
    qi = qj + dist * np.array([np.cos(ang), np.sin(ang)])
    np.testing.assert_allclose(potential_gradient(PP, qi, qj), -potential_gradient(PP, qj, qi), atol=1e-9)


# --- collision law ---------------------------------------------------------


def test_collision_law_reduces_to_fixed_when_far_apart():
    Q = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    g = WeightedGraph.complete(3)
    reg = Ball((1, 1), 1)
    for i in range(3):
        np.testing.assert_array_equal(
            control_collision(i, states(Q), reg, g, 1.0, PP), control_fixed(i, states(Q), reg, g, 1.0)
        )


def test_collision_law_symmetric_pair():
    Q = np.array([[0.5, 0.0], [-0.5, 0.0]])
    g = WeightedGraph.from_edges(2, [(0, 1)])
    reg = Ball((0, 0), 3)
    np.testing.assert_allclose(
        control_collision(0, states(Q), reg, g, 1.0, PP), -control_collision(1, states(Q), reg, g, 1.0, PP)
    )


def test_collision_law_counts_non_neighbours_and_names_pair():
    Q = np.array([[0.0, 0.0], [1.0, 0.0], [9.0, 9.0]])
    g = WeightedGraph.empty(3)
    tau = control_collision(0, states(Q), Ball((0, 0), 1), g, 1.0, PP)
    np.testing.assert_allclose(tau, [-53.7109375, 0], rtol=1e-12)
    Q[2] = [0.05, 0.0]
    with pytest.raises(SafetyViolation) as info:
        control_collision(0, states(Q), Ball((0, 0), 1), g, 1.0, PP)
    assert info.value.pair == (0, 2)
    assert "agents 1 and 3" in str(info.value)


def test_avoidance_terms_cancel_and_match_pairwise_sum():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        Q = rng.uniform(-2, 2, size=(5, 2))
        D = Q[:, None] - Q[None]
        if np.min(np.linalg.norm(D, axis=2) + 10 * np.eye(5)) <= 1.5 * PP.r:
            continue
        G = avoidance_gradients(PP, Q)
        assert np.max(np.abs(G.sum(axis=0))) <= 1e-10
        loop = np.array([sum(potential_gradient(PP, Q[i], Q[j]) for j in range(5) if j != i) for i in range(5)])
        np.testing.assert_allclose(G, loop, atol=1e-9)


def test_pair_potentials_matrix():
    Q = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    V = pair_potentials(PP, Q)
    assert V[0, 1] == V[1, 0] == pytest.approx(9.765625)
    assert V[0, 2] == 0 and V[0, 0] == 0


# --- gain condition --------------------------------------------------------


def test_gain_condition_examples():
    two = GraphSchedule.constant(WeightedGraph.from_edges(2, [(0, 1)]))
    gc = gain_condition(two, 3.0)
    assert gc.threshold == pytest.approx(2.5) and gc.ok
    assert not gain_condition(two, 2.5).ok
    k8 = gain_condition(GraphSchedule.constant(WeightedGraph.complete(8)), 5.0)
    assert k8.threshold == pytest.approx(4.0) and k8.ok


def test_gain_condition_alternating_paths_and_matching():
    paths = WeightedGraph.from_edges(8, [(0, 1), (1, 2), (3, 2), (7, 6), (6, 5), (5, 4)])
    match = WeightedGraph.from_edges(8, [(0, 7), (1, 6), (2, 5), (3, 4)])
    sched = GraphSchedule.periodic([paths, match], [0, 1], interval=5.0)
    lam = max(np.linalg.eigvalsh(laplacian(g)).max() for g in (paths, match))
    gc = gain_condition(sched, 5.0)
    assert gc.lambda_max == pytest.approx(lam, abs=1e-10)
    assert gc.threshold == pytest.approx(2 + lam / 4, abs=1e-10)
    assert gc.ok and not gc.coarse_ok
    assert gc.coarse_threshold == pytest.approx(5.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_exact_threshold_never_exceeds_coarse(n, seed):
    rng = np.random.default_rng(seed)
    A = np.triu(rng.uniform(0, 1, (n, n)) * (rng.uniform(size=(n, n)) < 0.6), 1)
    gc = gain_condition(GraphSchedule.constant(WeightedGraph(n, A + A.T)), 1.0)
    assert gc.threshold <= gc.coarse_threshold + 1e-12


# --- spread diagnostic -----------------------------------------------------


def test_spread_diagnostic_trivial_cases():
    g = WeightedGraph.complete(3)
    regs = [Ball((0, 0), 1)] * 3
    same = [AgentState((0.1, 0.1), (0, 0))] * 3
    d = spread_diagnostic(same, 5.0, regs, g)
    np.testing.assert_array_equal(d.hbar, d.ell)
    assert d.max_delta == 0
    spread = [AgentState(q, (0, 0)) for q in ((0.1, 0.1), (-0.5, 0.2), (0.3, -0.6))]
    assert spread_diagnostic(spread, 5.0, regs, g).max_delta == 0


def test_spread_diagnostic_values():
    g = WeightedGraph.from_edges(2, [(0, 1)])
    regs = [Ball((0, 0), 1), Ball((0, 0), 1)]
    sts = [AgentState((2, 0), (1, 0)), AgentState((0, 0), (0, 0))]
    d = spread_diagnostic(sts, 2.0, regs, g)
    # lifted points (2,0), (0,0), (3,0), (0,0); delta_1 = (1,0) - (1,0) = 0, delta_2 = -(1,0)
    np.testing.assert_allclose(d.hbar, [3, 0])
    np.testing.assert_allclose(d.ell, [0, 0])
    assert d.max_delta == pytest.approx(1.0)


# --- vectorised closed loop ------------------------------------------------


@pytest.mark.parametrize("law", ["fixed", "switching", "collision"])
def test_closed_loop_matches_per_agent_laws(law):
    rng = np.random.default_rng(31)
    regs = [Ball((1.5, 1.5), 3), Box((-1, -1), (2, 2)), Ball((0, -1.5), 3), Box((-3, -1), (1, 2))]
    g = WeightedGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    spec = ControllerSpec(law, 2.0 if law != "switching" else 5.0, PP if law == "collision" else None)
    loop = ClosedLoop(spec, RegionBank(regs), PlantBank([THETA] * 4))
    L = laplacian(g)
    for _ in range(20):
        Q, V = rng.uniform(-4, 4, (4, 2)), rng.normal(size=(4, 2))
        while np.min(np.linalg.norm(Q[:, None] - Q[None], axis=2) + 10 * np.eye(4)) <= 2 * PP.r:
            Q = rng.uniform(-4, 4, (4, 2))
        st_ = states(Q, V)
        tau = loop.torques(Q, V, L)
        for i in range(4):
            if law == "fixed":
                ref = control_fixed(i, st_, regs[i], g, spec.k)
            elif law == "switching":
                ref = control_switching(i, st_, regs[i], g, spec.k, THETA)
            else:
                ref = control_collision(i, st_, regs[i], g, spec.k, PP)
            np.testing.assert_allclose(tau[i], ref, atol=1e-10)
