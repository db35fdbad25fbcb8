import numpy as np
import pytest
from hypothesis import settings

from dualwalk.embed import EmbeddingTable, build_cluster_model
from dualwalk.kg import Triple, Vocab, build_graph

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_graph(edges, n_entities=None, n_relations=None, **kw):
    """Graph from integer (h, r, t) triples with names e0.. and r0.."""
    n_entities = n_entities or (max(max(h, t) for h, _, t in edges) + 1 if edges else 0)
    n_relations = n_relations or (max(r for _, r, _ in edges) + 1 if edges else 1)
    ents = Vocab(f"e{i}" for i in range(n_entities))
    rels = Vocab(f"r{i}" for i in range(n_relations))
    return build_graph([Triple(*e) for e in edges], ents, rels, **kw)


def random_graph(rng, n_entities=8, n_relations=3, n_edges=10):
    edges = set()
    while len(edges) < n_edges:
        h, t = rng.integers(n_entities, size=2)
        if h != t:
            edges.add((int(h), int(rng.integers(n_relations)), int(t)))
    return make_graph(sorted(edges), n_entities, n_relations)


def random_policy_inputs(graph, d=4, n_clusters=3, seed=0):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng.normal(size=(graph.n_entities, d)),
                           rng.normal(size=(graph.n_base_relations, d)))
    clusters = build_cluster_model(graph, table, n_clusters, seed=seed)
    return table, clusters


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_policy():
    from dualwalk.agents import DualPolicy, relation_init_from_transe
    g = random_graph(np.random.default_rng(3), n_entities=7, n_relations=2, n_edges=9)
    table, clusters = random_policy_inputs(g, d=3, n_clusters=3, seed=3)
    rel = relation_init_from_transe(table.relation_vectors, g.n_relations)
    return DualPolicy(g, table.entity_vectors, clusters, rel, seed=3)
