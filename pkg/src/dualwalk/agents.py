"""Cluster-level (GIANT) and entity-level (DWARF) policies plus the multiplier network.

All step functions are batched over a leading dimension B.  Candidate
actions arrive padded as (B, n, 2d) embeddings with a boolean mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .embed import ClusterModel
from .kg import KnowledgeGraph
from .nn import ParamStore, Tensor


@dataclass
class StepResult:
    logits: Tensor
    mask: np.ndarray
    state: list
    hidden: Tensor

    @property
    def probs(self) -> Tensor:
        return nn.softmax(self.logits, self.mask)

    @property
    def log_probs(self) -> Tensor:
        return nn.log_softmax(self.logits, self.mask)


def expected_shapes(d: int) -> dict[str, tuple[int, ...]]:
    """The projection and scoring matrix shapes every checkpoint must honour."""
    return {
        "giant.W_mix": (2 * d, 4 * d),
        "giant.W1": (4 * d, 4 * d),
        "giant.W2": (4 * d, 4 * d),
        "dwarf.W_mix": (2 * d, 5 * d),
        "dwarf.W1": (6 * d, 6 * d),
        "dwarf.W2": (6 * d, 6 * d),
        "dwarf.att_W": (d, d),
        "dwarf.att_a": (2 * d,),
        "lambda.W1": (2 * d, 4 * d),
        "lambda.W2": (1, 2 * d),
    }


def init_params(store: ParamStore, d: int, n_relations: int, n_clusters: int) -> None:
    H = 2 * d
    nn.init_lstm_stack(store, "giant", 2 * d, H)
    store.uniform("giant.W_mix", (H, 4 * d))
    store.uniform("giant.W1", (4 * d, 4 * d))
    store.uniform("giant.W2", (4 * d, 4 * d))
    store.uniform("giant.cluster_learned", (n_clusters, d))

    nn.init_lstm_stack(store, "dwarf", 2 * d, H)
    store.uniform("dwarf.W_mix", (H, 5 * d))
    store.uniform("dwarf.att_W", (d, d))
    store.uniform("dwarf.att_a", (2 * d,))
    store.uniform("dwarf.W1", (6 * d, 6 * d))
    store.uniform("dwarf.W2", (6 * d, 6 * d))
    store.uniform("dwarf.relation_emb", (n_relations, d))

    store.uniform("lambda.W1", (2 * d, 4 * d))
    store.add("lambda.b1", np.zeros(2 * d))
    store.uniform("lambda.W2", (1, 2 * d))
    store.add("lambda.b2", np.zeros(1))


def check_shapes(params: dict, d: int) -> None:
    for name, shape in expected_shapes(d).items():
        got = tuple(np.shape(params[name]))
        if got != shape:
            raise nn.ShapeError(f"{name}: expected {shape}, got {got}")


def _fold(s: Tensor, width: int, copies: int) -> Tensor:
    # <[x; x; ...], s> == <x, s_1 + s_2 + ...>; avoids materialising tiled rows
    out = nn.slice_last(s, 0, width)
    for k in range(1, copies):
        out = out + nn.slice_last(s, k * width, (k + 1) * width)
    return out


def giant_step(store: ParamStore, prev_state, prev_action_emb: Tensor, prev_h_c: Tensor,
               prev_h_e: Tensor, cluster_emb: Tensor, cand_emb: Tensor, mask) -> StepResult:
    """One cluster-level decision.

    The first LSTM layer's previous hidden is replaced by
    ``W_mix [h_c; h_e]``; the head scores ``s = W2 relu(W1 [c_t; h_c])`` and
    each candidate row ``[emb; emb]`` is dotted with ``s``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or not mask.any(axis=1).all():
        raise ValueError("giant_step: every row needs at least one candidate")
    override = nn.linear(store["giant.W_mix"], nn.concat([prev_h_c, prev_h_e]))
    state, h_c = nn.lstm_stack_step(store, "giant", prev_state, prev_action_emb, override)
    s = nn.linear(store["giant.W2"], nn.relu(nn.linear(store["giant.W1"], nn.concat([cluster_emb, h_c]))))
    logits = nn.batched_dot(cand_emb, _fold(s, cand_emb.shape[-1], 2))
    return StepResult(logits, mask, state, h_c)


def dwarf_attention(store: ParamStore, entity_vecs: np.ndarray, neighbor_vecs: np.ndarray,
                    neighbor_mask) -> Tensor:
    """Graph attention over each entity's distinct out-neighbours.

    ``entity_vecs`` is (B, d), ``neighbor_vecs`` (B, m, d) with mask (B, m).
    Returns ``sum_k softmax_k(leaky(a [W e_i; W e_k])) W e_k`` as (B, d).
    """
    W, a = store["dwarf.att_W"], store["dwarf.att_a"]
    d = W.shape[0]
    Wi = nn.linear(W, Tensor(entity_vecs))
    Wn = nn.linear(W, Tensor(neighbor_vecs))
    a_self = nn.reshape(nn.slice_last(a, 0, d), (1, d))
    a_nb = nn.reshape(nn.slice_last(a, d, 2 * d), (1, d))
    score_i = nn.linear(a_self, Wi)                       # (B, 1)
    score_n = nn.reshape(nn.linear(a_nb, Wn), Wn.shape[:2])  # (B, m)
    alpha = nn.softmax(nn.leaky_relu(score_i + score_n, 0.2), neighbor_mask)
    return nn.weighted_sum(alpha, Wn)


def dwarf_step(store: ParamStore, prev_state, prev_action_emb: Tensor, prev_h_e: Tensor,
               prev_atn: Tensor, prev_h_c: Tensor, e_t, r_last: Tensor, r_q: Tensor,
               atn_t: Tensor, cand_emb: Tensor, mask) -> StepResult:
    """One entity-level decision.

    Override ``W_mix [h_e; atn_prev; h_c]``; head
    ``s = W2 relu(W1 [e_t; r_last; r_q; atn_t; h_e])`` over rows
    ``[r; e; r; e; r; e]``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or not mask.any(axis=1).all():
        raise ValueError("dwarf_step: every row needs at least one candidate")
    override = nn.linear(store["dwarf.W_mix"], nn.concat([prev_h_e, prev_atn, prev_h_c]))
    state, h_e = nn.lstm_stack_step(store, "dwarf", prev_state, prev_action_emb, override)
    head_in = nn.concat([nn.as_tensor(e_t), r_last, r_q, atn_t, h_e])
    s = nn.linear(store["dwarf.W2"], nn.relu(nn.linear(store["dwarf.W1"], head_in)))
    logits = nn.batched_dot(cand_emb, _fold(s, cand_emb.shape[-1], 3))
    return StepResult(logits, mask, state, h_e)


def lambda_value(store: ParamStore, features) -> Tensor:
    """Multiplier in (0, 1) from ``[e_t; r_q; h_e]`` features (B, 4d)."""
    hidden = nn.relu(nn.linear(store["lambda.W1"], nn.as_tensor(features), store["lambda.b1"]))
    out = nn.sigmoid(nn.linear(store["lambda.W2"], hidden, store["lambda.b2"]))
    return nn.reshape(out, out.shape[:-1])


class DualPolicy:
    """Parameters plus the frozen lookup tables both agents read from."""

    def __init__(self, graph: KnowledgeGraph, entity_vectors: np.ndarray, clusters: ClusterModel,
                 relation_init: np.ndarray | None = None, seed: int = 0,
                 params: dict | None = None):
        self.graph = graph
        self.entity_vectors = np.asarray(entity_vectors, dtype=np.float64)
        self.d = self.entity_vectors.shape[1]
        self.clusters = clusters
        self.store = ParamStore(seed)
        init_params(self.store, self.d, graph.n_relations, clusters.n_clusters)
        if params is not None:
            check_shapes(params, self.d)
            for name in self.store.names():
                self.store.set_value(name, params[name])
        else:
            self.store.set_value("giant.cluster_learned", clusters.learned_parts)
            if relation_init is not None:
                self.store.set_value("dwarf.relation_emb", relation_init)
        self.act_rel, self.act_ent, self.act_mask = graph.padded_actions()
        self.cl_dest, self.cl_mask = clusters.padded_actions()
        self.nb_ent, self.nb_mask = _neighbor_table(graph)
        self.centroid_unit = _unit_rows(clusters.centroids)
        self.entity_unit = _unit_rows(self.entity_vectors)

    @property
    def hidden(self) -> int:
        return 2 * self.d

    def relation_table(self) -> Tensor:
        return self.store["dwarf.relation_emb"]

    def cluster_table(self) -> Tensor:
        return nn.concat([Tensor(self.clusters.centroids), self.store["giant.cluster_learned"]])

    def attention(self, entities: np.ndarray) -> Tensor:
        nb = self.nb_ent[entities]
        return dwarf_attention(self.store, self.entity_vectors[entities], self.entity_vectors[nb],
                               self.nb_mask[entities])

    def params_snapshot(self) -> dict[str, np.ndarray]:
        return self.store.state()


def relation_init_from_transe(base_relations: np.ndarray, n_relations: int) -> np.ndarray:
    """Base rows from TransE, inverse rows negated, NO_OP zero."""
    R, d = base_relations.shape
    out = np.zeros((n_relations, d))
    out[:R] = base_relations
    out[R:2 * R] = -base_relations
    return out


def _neighbor_table(graph: KnowledgeGraph):
    nbrs = [sorted({t for _, t in adj}) for adj in graph.adjacency]
    width = max(len(n) for n in nbrs)
    ent = np.zeros((graph.n_entities, width), dtype=np.int64)
    mask = np.zeros((graph.n_entities, width), dtype=bool)
    for e, n in enumerate(nbrs):
        ent[e, :len(n)] = n
        ent[e, len(n):] = e
        mask[e, :len(n)] = True
    return ent, mask


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise nn.NumericError("zero embedding row; cosine similarity undefined")
    return X / norms
