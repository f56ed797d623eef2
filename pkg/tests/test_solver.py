import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

import oracles
from cyltrack.model import CylinderGeometry, DynamicsParams, InputEvent, OutputEvent
from cyltrack.simulator import simulate_sample
from cyltrack.solver import (
    AssignmentProblem,
    brute_force,
    brute_force_objectives,
    build_problem,
    solve,
    solve_k_best,
)
from cyltrack.stats import CostModel, theoretical_tau_alpha

GEOM = CylinderGeometry.from_ratio(50.0, 30.0, 0.42)
PARAMS = DynamicsParams(0.6, 0.006, 0.2, 0.2, birth_rate=0.08, tau_d=0.004)
PARAMS = PARAMS.with_rates(tau_alpha=theoretical_tau_alpha(PARAMS, GEOM))
CM = CostModel.from_params(PARAMS, GEOM)


@st.composite
def problems(draw, max_size=6):
    p = draw(st.integers(0, max_size))
    q = draw(st.integers(0, max_size))
    costs = draw(arrays(float, (p, q), elements=st.floats(-10, 10, allow_nan=False)))
    forb = draw(arrays(bool, (p, q)))
    return AssignmentProblem(costs, forb)


def _lap_reference(problem):
    # independent optimum: dense assignment on an augmented matrix with big-M holes
    p, q = problem.p, problem.q
    big = 1e9
    n = p + q
    m = np.zeros((n, n))
    m[:p, :q] = np.where(problem.forbidden, big, problem.adjusted_costs)
    m[:p, q:] = big
    m[p:, :q] = big
    m[np.arange(p), q + np.arange(p)] = 0.0
    m[p + np.arange(q), np.arange(q)] = 0.0
    r, c = linear_sum_assignment(m)
    return m[r, c].sum()


def test_build_problem_empty_and_forbidden():
    ins = [InputEvent(float(t), 1.0, k) for k, t in enumerate((1.0, 2.0))]
    pr = build_problem([], ins, CM)
    assert (pr.p, pr.q) == (0, 2)
    res = solve(pr)
    assert res.configuration.spontaneous_inputs == {0, 1} and res.K == 0.0

    outs = [OutputEvent(10.0, 1.0, 5), OutputEvent(11.0, 2.0, 6)]
    pr = build_problem(outs, ins, CM)
    assert pr.forbidden.all()
    res = solve(pr)
    assert res.configuration.pairs == () and res.configuration.dead_outputs == {0, 1}


def test_build_problem_termwise():
    _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=3)
    outs, ins = s.outputs[:3], s.inputs[-3:]
    pr = build_problem(outs, ins, CM, s.T_S)
    for a in range(3):
        for b in range(3):
            g = CM.gamma(outs[a], ins[b])
            if math.isinf(g):
                assert pr.forbidden[a, b]
            else:
                assert pr.adjusted_costs[a, b] == pytest.approx(g - CM.beta - CM.delta, rel=1e-14)
    assert pr.constant == pytest.approx(PARAMS.tau_alpha * 300.0)


def test_solve_trivial_cases():
    pr = AssignmentProblem(np.array([[1.0, 2.0], [0.5, 3.0]]), np.zeros((2, 2), bool))
    assert solve(pr).configuration.pairs == ()
    pr = AssignmentProblem(np.array([[-2.5]]), np.zeros((1, 1), bool))
    res = solve(pr)
    assert res.configuration.pairs == ((0, 0),) and res.K == -2.5


def test_allowed_costs_must_be_finite():
    with pytest.raises(ValueError):
        AssignmentProblem(np.array([[np.inf]]), np.zeros((1, 1), bool))
    with pytest.raises(ValueError):
        AssignmentProblem(np.zeros((2, 2)), np.zeros((2, 3), bool))


def test_brute_force_counts():
    z = lambda p, q: AssignmentProblem(np.zeros((p, q)), np.zeros((p, q), bool))
    assert len(brute_force(z(2, 2))) == 7
    assert len(brute_force(z(3, 3))) == 34
    assert len(brute_force_objectives(z(6, 6))) == sum(
        math.comb(6, k) ** 2 * math.factorial(k) for k in range(7)
    )
    with pytest.raises(ValueError):
        brute_force(z(9, 2))


@settings(max_examples=300, deadline=None)
@given(problems())
def test_solve_matches_oracles(pr):
    res = solve(pr)
    res.configuration.validate(pr.p, pr.q)
    assert all(not pr.forbidden[o, i] for o, i in res.configuration.pairs)
    assert res.K == pytest.approx(pr.objective(res.configuration), abs=1e-9)
    assert abs(res.K - brute_force_objectives(pr)[0]) <= 1e-9
    assert abs(res.K - oracles.brute_force_K(pr.adjusted_costs, pr.forbidden)[0][0]) <= 1e-9
    assert abs(res.K - _lap_reference(pr)) <= 1e-6


@settings(max_examples=150, deadline=None)
@given(problems(max_size=4), st.integers(1, 12))
def test_k_best_matches_brute_force(pr, n_max):
    ranked = solve_k_best(pr, n_max)
    ref = brute_force(pr)
    assert len(ranked) == min(n_max, len(ref))
    assert np.allclose([r.K for r in ranked], [k for _, k in ref[: len(ranked)]], atol=1e-9)
    assert len({r.configuration for r in ranked}) == len(ranked)
    assert [r.rank for r in ranked] == list(range(1, len(ranked) + 1))
    assert ranked[0].K == pytest.approx(solve(pr).K, abs=1e-9)


def test_k_best_tie_break_matches_brute_force():
    pr = AssignmentProblem(np.array([[-1.0, -1.0], [-1.0, -1.0]]), np.zeros((2, 2), bool))
    ranked = solve_k_best(pr, 7)
    assert [r.configuration for r in ranked] == [c for c, _ in brute_force(pr)]


def test_k_best_exhausts_space():
    pr = AssignmentProblem(np.array([[-3.0]]), np.ones((1, 1), bool))
    ranked = solve_k_best(pr, 5)
    assert len(ranked) == 1 and ranked[0].configuration.pairs == ()
    with pytest.raises(ValueError):
        solve_k_best(pr, 0)


def test_k_best_one_is_solve():
    rng = np.random.default_rng(0)
    pr = AssignmentProblem(rng.normal(size=(5, 5)), rng.random((5, 5)) < 0.3)
    assert solve_k_best(pr, 1)[0].configuration == solve(pr).configuration


@settings(max_examples=100, deadline=None)
@given(problems(), st.randoms(use_true_random=False))
def test_permutation_equivariance(pr, rnd):
    po = list(range(pr.p))
    pi = list(range(pr.q))
    rnd.shuffle(po)
    rnd.shuffle(pi)
    perm = AssignmentProblem(pr.adjusted_costs[np.ix_(po, pi)], pr.forbidden[np.ix_(po, pi)])
    a, b = solve(pr), solve(perm)
    assert a.K == pytest.approx(b.K, abs=1e-9)
    mapped = {(po[o], pi[i]) for o, i in b.configuration.pairs}
    assert pr.objective(type(a.configuration).from_matches(mapped, pr.p, pr.q)) == pytest.approx(a.K, abs=1e-9)


def test_log_q_consistent_with_likelihood():
    from cyltrack.stats import log_likelihood

    _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=4)
    pr = build_problem(s.outputs, s.inputs, CM, s.T_S)
    res = solve(pr)
    assert res.log_Q == pytest.approx(log_likelihood(res.configuration, CM, s.outputs, s.inputs, s.T_S), rel=1e-12)
