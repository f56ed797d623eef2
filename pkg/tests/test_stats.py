import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats as sps

import oracles
from cyltrack.model import Configuration, CylinderGeometry, DynamicsParams, InputEvent, OutputEvent
from cyltrack.stats import (
    CostModel,
    connection_cost,
    death_probability,
    first_passage_law,
    ig_cdf,
    ig_pdf,
    log_likelihood,
    theoretical_tau_alpha,
)

LU = 35.2
PARAMS = DynamicsParams(0.6, 0.006, 0.2, 0.2, birth_rate=0.03, tau_d=0.005, tau_alpha=0.02)
MU, LAM = first_passage_law(0.6, 0.2, LU)

# frozen from the Laplace-transform oracle in tests/oracles.py
DEATH_P_REF = 0.2541657564411637
# frozen from a term-by-term hand evaluation (s = 60, h = 1)
COST_REF = 3.7653109500479602


def test_ig_pdf_peak_and_support():
    assert ig_pdf(MU, MU, LAM) == pytest.approx(math.sqrt(LAM / (2 * math.pi * MU**3)), rel=1e-14)
    assert ig_pdf(0.0, MU, LAM) == 0.0
    assert ig_pdf(-1.0, MU, LAM) == 0.0
    assert ig_pdf(1e-6, MU, LAM) == 0.0


def test_ig_pdf_matches_scipy_and_integrates_to_one():
    t = np.linspace(30, 90, 61)
    ref = sps.invgauss(MU / LAM, scale=LAM).pdf(t)
    assert np.allclose(ig_pdf(t, MU, LAM), ref, rtol=1e-10, atol=0)
    total = sum(
        integrate.quad(lambda s: float(ig_pdf(s, MU, LAM)), a, b, epsabs=1e-13)[0]
        for a, b in [(0, 40), (40, 80), (80, np.inf)]
    )
    assert abs(total - 1.0) < 1e-8


def test_ig_cdf_limits_median_and_reference():
    assert ig_cdf(0.0, MU, LAM) == 0.0
    assert ig_cdf(-3.0, MU, LAM) == 0.0
    assert ig_cdf(1e6, MU, LAM) == pytest.approx(1.0, abs=1e-15)
    median = sps.invgauss(MU / LAM, scale=LAM).median()
    assert ig_cdf(median, MU, LAM) == pytest.approx(0.5, abs=1e-10)
    t = np.linspace(1, 200, 100)
    assert np.allclose(ig_cdf(t, MU, LAM), sps.invgauss(MU / LAM, scale=LAM).cdf(t), atol=1e-12)
    # sharply peaked law: the exp(2 lam / mu) factor would overflow
    assert 0.0 <= ig_cdf(10.0, 10.0, 1e6) <= 1.0


@given(st.floats(0.01, 500.0), st.floats(0.01, 500.0))
def test_ig_cdf_monotone(a, b):
    lo, hi = sorted((a, b))
    assert ig_cdf(lo, MU, LAM) <= ig_cdf(hi, MU, LAM)


def test_death_probability_reference():
    assert death_probability(PARAMS, LU) == pytest.approx(DEATH_P_REF, abs=1e-12)
    assert DEATH_P_REF == pytest.approx(oracles.death_probability_laplace(0.005, 0.6, 0.2, LU), abs=1e-15)


@pytest.mark.parametrize("tau_d", [1e-6, 1e-3, 0.004, 0.02, 0.3, 5.0])
@pytest.mark.parametrize("sigma", [0.2, 0.5])
def test_death_probability_against_laplace(tau_d, sigma):
    p = PARAMS.with_rates(tau_d=tau_d, sigma_x=sigma)
    assert death_probability(p, LU) == pytest.approx(
        oracles.death_probability_laplace(tau_d, 0.6, sigma, LU), abs=1e-9
    )


def test_death_probability_limits():
    assert death_probability(PARAMS.with_rates(tau_d=1e-10), LU) < 1e-8
    assert death_probability(PARAMS.with_rates(tau_d=1e3), LU) > 1 - 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 0.05), st.floats(1e-4, 0.05), st.floats(5.0, 80.0), st.floats(5.0, 80.0))
def test_death_probability_monotone(t1, t2, w1, w2):
    (ta, tb), (wa, wb) = sorted((t1, t2)), sorted((w1, w2))
    pa = death_probability(PARAMS.with_rates(tau_d=ta), wa)
    assert pa <= death_probability(PARAMS.with_rates(tau_d=tb), wa) + 1e-12
    assert pa <= death_probability(PARAMS.with_rates(tau_d=ta), wb) + 1e-12


def test_connection_cost_examples():
    o = OutputEvent(10.0, 5.0, 0)
    assert connection_cost(o, InputEvent(10.0, 5.0, 1), PARAMS, LU) == math.inf
    assert connection_cost(o, InputEvent(3.0, 5.0, 1), PARAMS, LU) == math.inf
    assert connection_cost(o, InputEvent(70.0, 6.0, 1), PARAMS, LU) == pytest.approx(COST_REF, rel=1e-14)
    # drift-consistent re-entry: both quadratic penalties vanish
    s = LU / 0.6
    i = InputEvent(10.0 + s, 5.0 + 0.006 * s, 1)
    expected = -math.log(LU / (2 * math.pi * 0.04 * s * s)) + 0.005 * s
    assert connection_cost(o, i, PARAMS, LU) == pytest.approx(expected, rel=1e-12)


def test_connection_cost_termwise():
    o, i = OutputEvent(0.0, 10.0, 0), InputEvent(60.0, 10.5, 1)
    s, h = 60.0, 0.5
    f_T = oracles_ig = sps.invgauss(MU / LAM, scale=LAM).pdf(s)
    f_Y = sps.norm(0.006 * s, 0.2 * math.sqrt(s)).pdf(h)
    ref = -math.log(f_T * f_Y * math.exp(-0.005 * s))
    assert connection_cost(o, i, PARAMS, LU) == pytest.approx(ref, rel=1e-12)


def test_connection_density_mass_equals_survival():
    # integrate exp(-gamma) over re-entry delays and axial shifts
    o = OutputEvent(0.0, 0.0, 0)

    def over_h(s):
        f = lambda h: math.exp(-connection_cost(o, InputEvent(s, h, 1), PARAMS, LU))
        c = 0.006 * s
        w = 12 * 0.2 * math.sqrt(s)
        return integrate.quad(f, c - w, c + w, epsabs=1e-12)[0]

    mass = integrate.quad(over_h, 1e-6, 200.0, points=[MU], limit=200, epsabs=1e-10)[0]
    assert mass == pytest.approx(1.0 - death_probability(PARAMS, LU), abs=1e-3)


def test_cost_model_terms():
    g = CylinderGeometry(50.0, 30.0, 50.0 - LU)
    cm = CostModel.from_params(PARAMS, g)
    assert cm.beta == pytest.approx(-math.log(0.02 / 30.0))
    assert cm.delta == pytest.approx(-math.log(DEATH_P_REF), rel=1e-10)
    outs = [OutputEvent(10.0, 5.0, 0), OutputEvent(40.0, 6.0, 1)]
    ins = [InputEvent(70.0, 6.0, 2), InputEvent(20.0, 5.0, 3)]
    mat = cm.gamma_matrix(outs, ins)
    for a, b in itertools.product(range(2), range(2)):
        assert mat[a, b] == cm.gamma(outs[a], ins[b]) or (math.isinf(mat[a, b]) and math.isinf(cm.gamma(outs[a], ins[b])))


def test_log_likelihood_examples():
    g = CylinderGeometry(50.0, 30.0, 50.0 - LU)
    cm = CostModel.from_params(PARAMS, g)
    T_S = 300.0
    assert log_likelihood(Configuration(), cm, [], [], T_S) == pytest.approx(-0.02 * T_S)
    outs = [OutputEvent(10.0, 5.0, 0), OutputEvent(40.0, 6.0, 1)]
    ins = [InputEvent(70.0, 5.2, 2), InputEvent(100.0, 6.3, 3)]
    empty = Configuration.from_matches([], 2, 2)
    assert log_likelihood(empty, cm, outs, ins, T_S) == pytest.approx(
        -2 * cm.beta - 2 * cm.delta - 0.02 * T_S
    )
    # 2x2: log Q ranks configurations opposite to the adjusted cost
    configs = [
        Configuration.from_matches(m, 2, 2)
        for m in ([], [(0, 0)], [(0, 1)], [(1, 0)], [(1, 1)], [(0, 0), (1, 1)], [(0, 1), (1, 0)])
    ]
    lq = [log_likelihood(c, cm, outs, ins, T_S) for c in configs]
    K = [math.fsum(cm.gamma(outs[a], ins[b]) - cm.beta - cm.delta for a, b in c.pairs) for c in configs]
    for a, b in itertools.combinations(range(7), 2):
        assert np.sign(round(lq[a] - lq[b], 9)) == -np.sign(round(K[a] - K[b], 9))
    best = max(range(7), key=lambda k: lq[k])
    assert best == min(range(7), key=lambda k: K[k])


def test_log_likelihood_infinite_for_reversed_match():
    g = CylinderGeometry(50.0, 30.0, 50.0 - LU)
    cm = CostModel.from_params(PARAMS, g)
    outs = [OutputEvent(50.0, 5.0, 0)]
    ins = [InputEvent(20.0, 5.0, 1)]
    c = Configuration.from_matches([(0, 0)], 1, 1)
    assert log_likelihood(c, cm, outs, ins, 100.0) == -math.inf


def test_theoretical_arrival_rate():
    g = CylinderGeometry.from_ratio(50.0, 30.0, 0.42)
    p = DynamicsParams(0.6, 0.006, 0.2, 0.2, birth_rate=0.04, tau_d=0.004)
    # independent check: integrate reach probabilities over birth positions
    kappa_ref = integrate.quad(
        lambda x: 1 - oracles.death_probability_laplace(0.004, 0.6, 0.2, x), 0, g.hidden_width
    )[0]
    assert theoretical_tau_alpha(p, g) == pytest.approx(0.04 / 50.0 * kappa_ref, rel=1e-10)
    assert theoretical_tau_alpha(p, g) == pytest.approx(0.025, abs=0.001)
