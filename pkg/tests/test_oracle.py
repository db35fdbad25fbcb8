import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualwalk.oracle import (PathExplosion, TabularMdp, compare_mdp, enumerate_paths, policy_return,
                             random_mdp, random_ranking_mrr, random_walk_distribution, random_walk_ranking,
                             shaping_consistency_check, value_iteration)

from conftest import make_graph, random_graph


def _skip_self_loops(graph):
    def fn(ents, rels):
        adj = graph.adjacency[ents[-1]]
        real = [r != graph.no_op for r, _ in adj]
        k = sum(real)
        if k == 0:
            return np.zeros(len(adj))
        return np.array([-math.log(k) if x else -np.inf for x in real])
    return fn


def test_chain_single_real_path():
    g = make_graph([(0, 0, 1), (1, 0, 2)], add_inverse=False)
    paths = enumerate_paths(g, 0, 2)
    real = [p for p in paths if g.no_op not in p.relations]
    assert len(real) == 1 and real[0].entities == (0, 1, 2)


def test_binary_tree_leaves():
    g = make_graph([(0, 0, 1), (0, 0, 2), (1, 0, 3), (1, 0, 4), (2, 0, 5), (2, 0, 6)], add_inverse=False)
    paths = [p for p in enumerate_paths(g, 0, 2, _skip_self_loops(g)) if p.prob > 0]
    assert sorted(p.entities[-1] for p in paths) == [3, 4, 5, 6]
    assert all(p.prob == pytest.approx(0.25, abs=1e-15) for p in paths)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_path_probabilities_sum_to_one(seed, T):
    g = random_graph(np.random.default_rng(seed), n_entities=6, n_relations=2, n_edges=8)
    paths = enumerate_paths(g, 0, T)
    assert abs(sum(p.prob for p in paths) - 1) < 1e-9
    # aggregated arrival probabilities match the forward recursion
    arrive = np.zeros(g.n_entities)
    for p in paths:
        arrive[p.entities[-1]] += p.prob
    assert np.allclose(arrive, random_walk_distribution(g, 0, T), atol=1e-12)


def test_path_explosion():
    g = make_graph([(0, 0, k) for k in range(1, 40)])
    with pytest.raises(PathExplosion, match="exceed"):
        enumerate_paths(g, 0, 4, limit=1000)


def test_random_walk_ranking_order():
    g = make_graph([(0, 0, 1)], add_inverse=False)
    assert random_walk_ranking(g, 0, 1) == [(0, 0.5), (1, 0.5)]


def test_random_ranking_mrr():
    assert random_ranking_mrr(1) == 1.0
    assert random_ranking_mrr(2) == 0.75
    assert random_ranking_mrr(4) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4) / 4)


# ------------------------------------------------------------ tabular MDPs

def _chain():
    return TabularMdp([[0, 1], [1, 2], [2]], [0.0, 0.0, 1.0], [0.2, 0.5, 1.0], horizon=2, target=2)


def test_horizon_one_is_immediate_reward():
    mdp = TabularMdp([[0, 1], [1, 2], [2]], [0.0, 0.3, 1.0], [0.2, 0.5, 1.0], horizon=1)
    Q, _ = value_iteration(mdp)
    assert [q.tolist() for q in Q[0]] == [[0.0, 0.0], [0.3, 0.3], [1.0]]


def test_zero_alpha_matches_default():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mdp = random_mdp(rng)
        Q, _ = value_iteration(mdp)
        Qs, _ = value_iteration(mdp, 0.0)
        assert all(np.array_equal(a, b) for qt, qst in zip(Q, Qs) for a, b in zip(qt, qst))


def test_chain_shaping_bonus():
    Q, _ = value_iteration(_chain())
    Qs, _ = value_iteration(_chain(), 0.1)
    assert Qs[0][0][1] - Q[0][0][1] == pytest.approx(0.1 * (1.0 - 0.2), abs=1e-12)


@given(st.integers(0, 10_000))
def test_default_values_nondecreasing_in_horizon(seed):
    mdp = random_mdp(np.random.default_rng(seed))
    longer = TabularMdp(mdp.actions, mdp.reward, mdp.phi, mdp.horizon + 1, mdp.target)
    Q, _ = value_iteration(mdp)
    Ql, _ = value_iteration(longer)
    for a, b in zip(Q[0], Ql[0]):
        assert np.all(b >= a - 1e-12)


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_per_policy_identity(seed, alpha):
    mdp = random_mdp(np.random.default_rng(seed), max_states=4, max_horizon=3)
    assert compare_mdp(mdp, alpha, check_identity=True).identity_error <= 1e-12


def test_policy_return_follows_policy():
    R, sT = policy_return(_chain(), [1, 1, 0], 0, None)
    assert sT == 2 and R == 0.0
    Rs, _ = policy_return(_chain(), [1, 1, 0], 0, 0.1)
    assert Rs == pytest.approx(0.1 * (1.0 - 0.2), abs=1e-15)


def test_consistency_check_asserts_identity():
    report = shaping_consistency_check(0.05, trials=100, max_states=4, max_horizon=3, check_identity=True)
    assert report.max_identity_error <= 1e-12
    with pytest.raises(ValueError):
        shaping_consistency_check(0.05, trials=1, max_states=6, check_identity=True)


def test_constant_potential_full_agreement():
    report = shaping_consistency_check(0.3, trials=100, constant_phi=True)
    assert report.agreement == 1.0 and report.exact_agreement == 1.0


def test_zero_alpha_full_agreement():
    assert shaping_consistency_check(0.0, trials=100).agreement == 1.0


def test_agreement_report_is_recorded():
    report = shaping_consistency_check(0.05, trials=100)
    assert 0.0 <= report.agreement <= 1.0
    assert len(report.trials) == 100
    assert "agreement" in report.table().splitlines()[-1]


def test_mdp_validation():
    with pytest.raises(ValueError):
        TabularMdp([[0], []], [0, 0], [0, 0], 1)
    with pytest.raises(ValueError):
        TabularMdp([[0], [1]], [0, 1], [0, 0.5], 1, target=1)
