"""TransE pre-training, K-means clustering and the cluster-level graph."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, Triple

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray

    @property
    def d(self) -> int:
        return self.entity_vectors.shape[1]


@dataclass
class TransEConfig:
    d: int = 50
    margin: float = 1.0
    lr: float = 0.01
    epochs: int = 1000
    neg_samples: int = 1
    seed: int = 0
    batch_size: int = 128


def transe_score(h: int, r: int, t: int, table: EmbeddingTable) -> float:
    """``-||h + r - t||_2``; zero means an exact translation."""
    diff = table.entity_vectors[h] + table.relation_vectors[r] - table.entity_vectors[t]
    return -float(np.linalg.norm(diff))


def transe_scores(triples: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E, R = table.entity_vectors, table.relation_vectors
    diff = E[triples[:, 0]] + R[triples[:, 1]] - E[triples[:, 2]]
    return -np.linalg.norm(diff, axis=1)


def corrupt(triples: np.ndarray, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """Replace head or tail (fair coin) with a uniformly drawn *different* entity."""
    if n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    out = np.array(triples, dtype=np.int64, copy=True).reshape(-1, 3)
    heads = rng.random(len(out)) < 0.5
    col = np.where(heads, 0, 2)
    rows = np.arange(len(out))
    repl = rng.integers(0, n_entities - 1, size=len(out))
    repl += repl >= out[rows, col]
    out[rows, col] = repl
    return out


def transe_train(facts, n_entities: int, n_relations: int, config: TransEConfig) -> EmbeddingTable:
    """Margin-ranking TransE with minibatch SGD.

    Loss per pair is ``max(0, margin + ||h+r-t|| - ||h'+r-t'||)`` with one
    head-or-tail corruption per positive (``neg_samples`` of them).  Entity
    rows are renormalised to unit length after every epoch.
    """
    if config.d <= 0 or config.epochs <= 0 or config.neg_samples <= 0:
        raise ConfigError("transe: d, epochs and neg_samples must be positive")
    facts = np.asarray([tuple(t) for t in facts], dtype=np.int64).reshape(-1, 3)
    if len(facts) == 0:
        raise ConfigError("transe: no facts to train on")
    rng = np.random.default_rng(config.seed)
    bound = 6.0 / np.sqrt(config.d)
    E = rng.uniform(-bound, bound, size=(n_entities, config.d))
    R = rng.uniform(-bound, bound, size=(n_relations, config.d))
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    E /= np.linalg.norm(E, axis=1, keepdims=True)

    for _ in range(config.epochs):
        order = rng.permutation(len(facts))
        for start in range(0, len(facts), config.batch_size):
            pos = np.repeat(facts[order[start:start + config.batch_size]], config.neg_samples, axis=0)
            neg = corrupt(pos, n_entities, rng)
            dp = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
            dn = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
            np_ = np.linalg.norm(dp, axis=1)
            nn_ = np.linalg.norm(dn, axis=1)
            active = config.margin + np_ - nn_ > 0
            if not active.any():
                continue
            gp = dp[active] / np.maximum(np_[active], 1e-12)[:, None]
            gn = dn[active] / np.maximum(nn_[active], 1e-12)[:, None]
            p, n = pos[active], neg[active]
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            np.add.at(gE, p[:, 0], gp)
            np.add.at(gE, p[:, 2], -gp)
            np.add.at(gR, p[:, 1], gp)
            np.add.at(gE, n[:, 0], -gn)
            np.add.at(gE, n[:, 2], gn)
            np.add.at(gR, n[:, 1], -gn)
            E -= config.lr * gE
            R -= config.lr * gR
        norms = np.linalg.norm(E, axis=1, keepdims=True)
        E /= np.where(norms > 0, norms, 1.0)
    return EmbeddingTable(E, R)


def score_gap(table: EmbeddingTable, triples, n_entities: int, seed: int = 0, samples: int = 10) -> float:
    """Mean score of ``triples`` minus mean score of ``samples`` fresh corruptions each."""
    triples = np.asarray([tuple(t) for t in triples], dtype=np.int64).reshape(-1, 3)
    neg = corrupt(np.repeat(triples, samples, axis=0), n_entities, np.random.default_rng(seed))
    return float(transe_scores(triples, table).mean() - transe_scores(neg, table).mean())


# ------------------------------------------------------------------- K-means

@dataclass
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float]
    reseeded: int = 0


def _inertia(X, assignment, centroids) -> float:
    return float(((X - centroids[assignment]) ** 2).sum())


def kmeans(X: np.ndarray, n_clusters: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm seeded with ``n_clusters`` distinct random rows.

    Stops when the assignment no longer changes or after ``max_iters``.
    The returned centroids are always the means of the returned assignment.
    An emptied cluster is reseeded at the point farthest from its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n_clusters < 1 or n_clusters > n:
        raise ValueError(f"kmeans: need 1 <= N <= {n}, got N={n_clusters}")
    rng = np.random.default_rng(seed)
    centroids = X[rng.choice(n, size=n_clusters, replace=False)].copy()
    assignment = None
    history = []
    reseeded = 0
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        own = d2[np.arange(n), new]
        counts = np.bincount(new, minlength=n_clusters)
        for k in np.flatnonzero(counts == 0):
            # donors must leave a non-empty cluster behind
            movable = counts[new] > 1
            far = int(np.where(movable, own, -1.0).argmax())
            log.info("kmeans: cluster %d empty, reseeding at entity %d", k, far)
            counts[new[far]] -= 1
            counts[k] += 1
            new[far] = k
            own[far] = -1.0
            reseeded += 1
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        centroids = np.stack([X[assignment == k].mean(axis=0) for k in range(n_clusters)])
        history.append(_inertia(X, assignment, centroids))
    centroids = np.stack([X[assignment == k].mean(axis=0) for k in range(n_clusters)])
    return KMeansResult(assignment.astype(np.int64), centroids, history, reseeded)


# ------------------------------------------------------------ cluster graph

def build_cluster_graph(graph: KnowledgeGraph, assignment, n_clusters: int | None = None) -> list[list[int]]:
    """Cluster A links to B iff some entity edge crosses from A to B; every cluster keeps a self-edge."""
    assignment = np.asarray(assignment)
    if n_clusters is None:
        n_clusters = int(assignment.max()) + 1 if len(assignment) else 0
    adj: list[set[int]] = [{k} for k in range(n_clusters)]
    for e, r, t in graph.edges():
        adj[assignment[e]].add(int(assignment[t]))
    return [sorted(s) for s in adj]


@dataclass
class ClusterModel:
    assignment: np.ndarray
    centroids: np.ndarray
    learned_parts: np.ndarray
    adjacency: list[list[int]]

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def embedding(self, learned: np.ndarray | None = None) -> np.ndarray:
        """Per-cluster ``[centroid; learned_part]`` rows (N, 2d)."""
        learned = self.learned_parts if learned is None else learned
        return np.concatenate([self.centroids, learned], axis=1)

    def padded_actions(self):
        width = max(len(a) for a in self.adjacency)
        N = self.n_clusters
        dest = np.tile(np.arange(N)[:, None], (1, width))
        mask = np.zeros((N, width), dtype=bool)
        for c, adj in enumerate(self.adjacency):
            dest[c, :len(adj)] = adj
            mask[c, :len(adj)] = True
        return dest, mask


def build_cluster_model(graph: KnowledgeGraph, table: EmbeddingTable, n_clusters: int,
                        seed: int = 0, max_iters: int = 100) -> ClusterModel:
    km = kmeans(table.entity_vectors, n_clusters, seed=seed, max_iters=max_iters)
    rng = np.random.default_rng(seed + 1)
    bound = 1.0 / np.sqrt(table.d)
    learned = rng.uniform(-bound, bound, size=(n_clusters, table.d))
    return ClusterModel(km.assignment, km.centroids, learned,
                        build_cluster_graph(graph, km.assignment, n_clusters))
