import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualwalk.embed import ClusterModel
from dualwalk.env import (ClusterState, DualRollout, EntityState, IllegalAction, TRACE_COLUMNS, cosine,
                          default_reward, guidance_label, potential, reset, shaped_reward, shaping_delta,
                          state_distance, step_cluster, step_entity, write_trace)
from dualwalk.kg import QuerySample

from conftest import make_graph


def _clusters(assignment, centroids, adjacency):
    centroids = np.asarray(centroids, float)
    return ClusterModel(np.asarray(assignment), centroids, np.zeros_like(centroids), adjacency)


def test_reset_states():
    cm = _clusters([0, 3, 1, 2], np.eye(4), [[0], [1], [2], [3]])
    e, c = reset(QuerySample(0, 0, frozenset({1})), cm)
    assert e == EntityState(0, 0, 0, 0)
    assert c.current == 0 and c.targets == {3} and c.step == 0


def test_reset_multiple_answer_clusters():
    cm = _clusters([0, 1, 2, 2], np.eye(3), [[0], [1], [2]])
    _, c = reset(QuerySample(0, 0, frozenset({1, 2, 3})), cm)
    assert c.targets == {1, 2}
    _, c = reset(QuerySample(0, 0, frozenset({1})), cm, training=False)
    assert c.targets is None


def test_step_entity():
    g = make_graph([(0, 0, 1)])
    s = EntityState(0, 0, 0)
    assert step_entity(g, s, (g.no_op, 0)) == EntityState(0, 0, 0, 1)
    assert step_entity(g, s, (0, 1)).current == 1
    for _ in range(3):
        s = step_entity(g, s, (g.no_op, 0))
    assert s.current == 0 and s.step == 3
    with pytest.raises(IllegalAction):
        step_entity(g, EntityState(1, 0, 0), (0, 0))


def test_step_cluster():
    cm = _clusters([0, 1], np.eye(2), [[0, 1], [1]])
    assert step_cluster(cm, ClusterState(0), 1) == ClusterState(1, None, 1)
    with pytest.raises(IllegalAction):
        step_cluster(cm, ClusterState(1), 0)


def test_default_reward():
    assert default_reward(2, {2}) == 1
    assert default_reward(1, {2}) == 0
    assert default_reward(5, {2, 5}) == 1


def test_state_distance_examples():
    E = np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    C = np.array([[1.0, 0.0]])
    assert state_distance(0, 0, E, C) == pytest.approx(1.0, abs=1e-15)
    assert state_distance(0, 1, E, C) == 0.0
    assert state_distance(0, 2, E, C) == pytest.approx(0.70710678, abs=1e-8)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


def test_guidance_label_examples():
    assert guidance_label(0.9, 1, 0.20, 0.1) == 0
    assert 0.20 / 1.1 == pytest.approx(0.1818, abs=1e-4)
    for D in (-1.0, 0.0, 0.99, 1.0):
        assert guidance_label(D, 0, 0.20, 0.1) == 1
    threshold = 0.20 / (1 + 0.1)
    assert guidance_label(threshold, 1, 0.20, 0.1) == 0
    with pytest.raises(ValueError):
        guidance_label(0.5, 1, 0.2, 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([0, 1]))
def test_guidance_label_monotone(d1, d2, r_c):
    lo, hi = sorted((d1, d2))
    assert guidance_label(hi, r_c, 0.2, 0.1) <= guidance_label(lo, r_c, 0.2, 0.1)


def test_guidance_label_vectorised():
    y = guidance_label(np.array([0.1, 0.5]), np.array([1, 1]), 0.2, 0.1)
    assert y.tolist() == [1, 0]


def test_shaping_examples():
    C = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert shaping_delta(2, 2, [0], C) == 0.0
    assert shaping_delta(1, 0, [0], C) == -1.0
    assert shaping_delta(2, 0, [0], C) == pytest.approx(cosine(C[2], C[0]) - 1)
    # Phi(c_t)=0.3, Phi(c_t+1)=0.8 -> delta -0.5, bonus +0.075 at alpha 0.15
    delta = 0.3 - 0.8
    assert shaped_reward(0.0, delta, 0.15) == pytest.approx(0.075, abs=1e-15)


def test_potential_takes_closest_target():
    C = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.1]])
    assert potential(2, [0, 1], C) == pytest.approx(cosine(C[2], C[0]))


@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0, 1))
def test_telescoping(seed, T, alpha):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(5, 3))
    path = rng.integers(0, 5, size=T + 1)
    targets = [int(rng.integers(5))]
    r_c = np.zeros(T)
    r_c[-1] = float(path[-1] in targets)
    total = sum(shaped_reward(r_c[t], shaping_delta(path[t], path[t + 1], targets, C), alpha) for t in range(T))
    phi = lambda c: potential(c, targets, C)
    assert total == pytest.approx(r_c.sum() - alpha * (phi(path[0]) - phi(path[-1])), abs=1e-12)


def test_trace_csv(tmp_path):
    ro = DualRollout(QuerySample(0, 0, frozenset({1})), np.array([0, 1]), np.array([0, 1]), np.array([0]),
                     np.array([-0.5]), np.array([-0.1]), np.array([1.0]), np.array([1.0]), np.array([0.7]),
                     np.array([0.4]), np.array([-0.2]), np.array([0]))
    write_trace(tmp_path / "t.csv", [ro])
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(rows[0]) == ("rollout",) + TRACE_COLUMNS
    assert rows[1][:5] == ["0", "0", "1", "1", "0"]
    assert float(rows[1][7]) == 0.7
