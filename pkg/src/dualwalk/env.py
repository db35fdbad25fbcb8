"""Entity- and cluster-level MDPs, default rewards, similarity and shaping terms."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .embed import ClusterModel
from .kg import KnowledgeGraph, QuerySample


class IllegalAction(ValueError):
    pass


@dataclass(frozen=True)
class EntityState:
    current: int
    source: int
    query: int
    step: int = 0


@dataclass(frozen=True)
class ClusterState:
    current: int
    targets: frozenset[int] | None = None
    step: int = 0


def reset(query: QuerySample, clusters: ClusterModel, training: bool = True):
    targets = frozenset(int(clusters.assignment[a]) for a in query.answers) if training else None
    return (EntityState(query.source, query.source, query.query_relation, 0),
            ClusterState(int(clusters.assignment[query.source]), targets, 0))


def step_entity(graph: KnowledgeGraph, state: EntityState, action: tuple[int, int]) -> EntityState:
    if tuple(action) not in set(graph.adjacency[state.current]):
        raise IllegalAction(f"{action} is not an outgoing edge of entity {state.current}")
    return replace(state, current=int(action[1]), step=state.step + 1)


def step_cluster(clusters: ClusterModel, state: ClusterState, action: int) -> ClusterState:
    if action not in clusters.adjacency[state.current]:
        raise IllegalAction(f"cluster {action} is not adjacent to cluster {state.current}")
    return replace(state, current=int(action), step=state.step + 1)


def default_reward(final: int, answers: Iterable[int]) -> int:
    return int(final in set(answers))


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(u @ v / (nu * nv))


def state_distance(cluster: int, entity: int, entity_vectors, centroids) -> float:
    """Cosine between the current cluster's centroid and the current entity embedding."""
    return cosine(centroids[cluster], entity_vectors[entity])


def potential(cluster: int, targets: Iterable[int], centroids) -> float:
    """Similarity to the closest target cluster (max over targets)."""
    return max(cosine(centroids[cluster], centroids[t]) for t in targets)


def guidance_label(D, r_c, delta: float, eps: float):
    """0 when ``D >= delta / (r_c + eps)`` (guidance satisfied), else 1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    D = np.asarray(D, dtype=np.float64)
    out = np.where(D >= delta / (np.asarray(r_c, dtype=np.float64) + eps), 0, 1)
    return int(out) if out.ndim == 0 else out


def shaping_delta(c_t: int, c_next: int, targets: Iterable[int], centroids) -> float:
    targets = list(targets)
    return potential(c_t, targets, centroids) - potential(c_next, targets, centroids)


def shaped_reward(r_c: float, delta: float, alpha: float) -> float:
    return r_c - alpha * delta


# ------------------------------------------------------------- rollout record

TRACE_COLUMNS = ("step", "entity", "cluster", "action", "logprob_e", "logprob_c",
                 "D", "lambda", "y", "delta")


@dataclass
class DualRollout:
    """One synchronized trajectory of both agents.

    Per-step arrays have length T; index t describes the decision taken at
    step t and the state it leads to.  ``entities`` and ``clusters`` hold the
    T+1 visited nodes.
    """

    query: QuerySample
    entities: np.ndarray
    clusters: np.ndarray
    relations: np.ndarray
    logprob_e: np.ndarray
    logprob_c: np.ndarray
    r_e: np.ndarray
    r_c: np.ndarray
    D: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    y: np.ndarray
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def horizon(self) -> int:
        return len(self.r_e)


def write_trace(path, rollouts: Sequence[DualRollout]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rollout",) + TRACE_COLUMNS)
        for i, ro in enumerate(rollouts):
            for t in range(ro.horizon):
                w.writerow((i, t, int(ro.entities[t + 1]), int(ro.clusters[t + 1]), int(ro.relations[t]),
                            repr(float(ro.logprob_e[t])), repr(float(ro.logprob_c[t])),
                            repr(float(ro.D[t])), repr(float(ro.lam[t])), int(ro.y[t]),
                            repr(float(ro.delta[t]))))
