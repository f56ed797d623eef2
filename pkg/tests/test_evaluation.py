import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from cyltrack.evaluation import (
    Partition,
    adjusted_rand_index,
    configuration_to_partition,
    expected_rotations,
    ground_truth_partition,
    k_gap,
    rand_index,
    rotation_counts,
    rotation_histogram,
)
from cyltrack.model import Configuration, CylinderGeometry, DynamicsParams, InvalidConfiguration
from cyltrack.simulator import Trajectory, simulate, simulate_sample, true_configuration
from cyltrack.solver import build_problem, solve
from cyltrack.stats import CostModel, theoretical_tau_alpha

GEOM = CylinderGeometry.from_ratio(50.0, 30.0, 0.42)
PARAMS = DynamicsParams(0.6, 0.006, 0.2, 0.2, birth_rate=0.08, tau_d=0.004)
PARAMS = PARAMS.with_rates(tau_alpha=theoretical_tau_alpha(PARAMS, GEOM))

P = Partition.from_labels
labels = st.lists(st.integers(0, 4), min_size=2, max_size=8)


def test_rand_index_examples():
    assert rand_index(P([1, 1, 2]), P([1, 2, 2])) == 1 / 3
    assert rand_index(P([0, 1, 2]), P([0, 0, 0])) == 0.0
    assert rand_index(P([0, 0, 1, 2]), P([0, 0, 1, 2])) == 1.0
    with pytest.raises(ValueError):
        rand_index(P([0]), P([0]))
    with pytest.raises(ValueError):
        rand_index(P([0, 1]), Partition({0: 0, 5: 1}))


def test_ari_examples_and_degenerate():
    assert adjusted_rand_index(P([0, 0, 1, 1, 2]), P([5, 5, 7, 7, 9])) == 1.0
    assert adjusted_rand_index(P([0, 1, 2]), P([0, 1, 2])) == 1.0
    assert adjusted_rand_index(P([0, 0, 0]), P([1, 1, 1])) == 1.0
    parts, table = oracles.exhaustive_ari_table(4)
    i, j = parts.index((0, 0, 1, 1)), parts.index((0, 0, 0, 1))
    assert adjusted_rand_index(P([1, 1, 2, 2]), P([1, 1, 1, 2])) == pytest.approx(table[i, j], abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_ari_against_exhaustive_permutation_oracle(n):
    parts, table = oracles.exhaustive_ari_table(n)
    for a, ga in enumerate(parts):
        for b, gb in enumerate(parts):
            assert adjusted_rand_index(P(ga), P(gb)) == pytest.approx(table[a, b], abs=1e-9)


@given(labels, st.data())
def test_ari_symmetry_bound_relabel(g, data):
    k = data.draw(st.lists(st.integers(0, 4), min_size=len(g), max_size=len(g)))
    G, K = P(g), P(k)
    a = adjusted_rand_index(G, K)
    assert a == pytest.approx(adjusted_rand_index(K, G), abs=1e-12)
    assert rand_index(G, K) == pytest.approx(rand_index(K, G), abs=1e-12)
    assert a <= 1.0 + 1e-12
    relabel = P([10 * x + 3 for x in k])
    assert adjusted_rand_index(G, relabel) == pytest.approx(a, abs=1e-12)
    same = len(set(zip(g, k))) == len(set(g)) == len(set(k))
    assert (abs(a - 1.0) < 1e-12) == same


def test_ari_random_relabeling_near_zero():
    rng = np.random.default_rng(1)
    g = rng.integers(0, 10, 60)
    vals = [adjusted_rand_index(P(g), P(rng.permutation(g))) for _ in range(10_000)]
    assert abs(np.mean(vals)) < 0.02


def test_partition_no_matches_all_singletons():
    _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=1)
    part = configuration_to_partition(Configuration.from_matches([], len(s.outputs), len(s.inputs)), s)
    assert part.n_clusters == len(s.segments)


def test_partition_chain_transitive():
    from test_simulator import _drift_trajectory
    from cyltrack.simulator import observe, default_border_margin

    s = observe([_drift_trajectory(-5.0, 801)], GEOM, 0.25, default_border_margin(PARAMS, 0.25), 250.0)
    part = configuration_to_partition(true_configuration(s), s)
    assert len(s.segments) == 3 and part.n_clusters == 1


def test_partition_detects_cycle():
    from test_simulator import _drift_trajectory
    from cyltrack.simulator import observe, default_border_margin

    s = observe([_drift_trajectory(-5.0, 801)], GEOM, 0.25, default_border_margin(PARAMS, 0.25), 250.0)
    # outputs are segments 0, 1, 2; inputs are segments 1, 2: output 1 to
    # input 0 links segment 1 to itself
    cyclic = Configuration(frozenset({(1, 0)}), frozenset({0, 2}), frozenset({1}))
    with pytest.raises(InvalidConfiguration):
        configuration_to_partition(cyclic, s)


def test_truth_partition_equals_grouping():
    # seed 0 has no crossing hidden from the detector
    _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=0)
    truth = configuration_to_partition(true_configuration(s), s)
    assert adjusted_rand_index(truth, ground_truth_partition(s)) == 1.0


def test_k_gap_zero_for_true_configuration_and_nonnegative():
    for seed in range(5):
        _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=seed)
        cm = CostModel.from_params(PARAMS, GEOM)
        pr = build_problem(s.outputs, s.inputs, cm, s.T_S)
        res = solve(pr)
        gap, ari = k_gap(s, res, pr)
        assert gap >= -1e-9
        assert -1.0 <= ari <= 1.0
        truth = true_configuration(s)
        from cyltrack.solver import SolverResult

        fake = SolverResult(truth, pr.objective(truth), 0.0)
        g0, a0 = k_gap(s, fake, pr)
        assert g0 == 0.0
        assert a0 == pytest.approx(adjusted_rand_index(configuration_to_partition(truth, s),
                                                       ground_truth_partition(s)))


def test_expected_rotations_value():
    p = DynamicsParams(0.6, 0.006, 0.2, 0.2, tau_d=0.005)
    assert expected_rotations(p, GEOM) == pytest.approx(2.4)


def test_rotation_counts_deterministic_lifetime():
    tr = Trajectory(0, 0.0, 50.0 / 0.6, (-10.0, 1.0), 0.6, 0.0, np.arange(3), np.zeros(3), np.zeros(3), 0.25)
    assert rotation_counts([tr], GEOM)[0] == pytest.approx(1.0)


def test_rotation_counts_mean_and_tail():
    means, tails = [], []
    for tau_d in (0.002, 0.005):
        p = PARAMS.with_rates(tau_d=tau_d, birth_rate=0.5)
        trajs = [t for t in simulate(GEOM, p, 0.25, 0.0, 4000.0, seed=2) if t.birth_time >= 0]
        r = rotation_counts(trajs, GEOM)
        means.append(r.mean())
        tails.append(np.quantile(r, 0.95))
        # lifetimes are not censored by the movie end in rotation counts
        assert r.mean() == pytest.approx(0.6 / (tau_d * 50.0), rel=0.1)
    assert tails[0] > tails[1]
    counts, edges = rotation_histogram(r)
    assert counts.sum() == len(r)


def test_reconstructed_rotation_proxy():
    _, s = simulate_sample(GEOM, PARAMS, 0.25, 300.0, seed=2)
    part = configuration_to_partition(true_configuration(s), s)
    sizes = rotation_counts(part, GEOM)
    assert sizes.sum() == len(s.segments)
