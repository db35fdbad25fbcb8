"""REINFORCE training of both walkers and the multiplier network."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .agents import DualPolicy, dwarf_step, giant_step, lambda_value
from .env import DualRollout, guidance_label
from .kg import QuerySample
from .nn import Adam, Tensor

log = logging.getLogger(__name__)

CHUNK_QUERIES = 32


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d: int = 50
    batch_size: int = 128
    lr: float = 0.01
    n_clusters: int = 75
    path_length: int = 3
    rollouts_train: int = 20
    rollouts_test: int = 100
    beam_size: int = 100
    alpha: float = 0.15
    delta: float = 0.20
    epsilon: float = 0.1
    baseline: bool = True
    guidance: bool = True
    entropy_beta: float = 0.0
    epochs: int = 10
    seed: int = 0
    workers: int = 1
    mask_query_edge: bool = True
    valid_every: int = 1

    def validate(self) -> None:
        if self.alpha < 0 or self.delta < 0:
            raise ValueError("alpha and delta must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.path_length < 1:
            raise ValueError("path_length must be at least 1")


# ------------------------------------------------------------------ rollouts

@dataclass
class RolloutBatch:
    """Batched trajectories plus the tape needed for gradients.

    Row b belongs to query ``b // K``.  Per-step arrays have shape (B, T).
    """

    queries: Sequence[QuerySample]
    K: int
    entities: np.ndarray
    clusters: np.ndarray
    relations: np.ndarray
    logp_e: list[Tensor]
    logp_c: list[Tensor]
    entropy: list[Tensor]
    lam_t: list[Tensor]
    r_e: np.ndarray
    r_c: np.ndarray
    D: np.ndarray
    phi: np.ndarray
    ess: np.ndarray
    lam: np.ndarray = field(default=None)
    y: np.ndarray = field(default=None)

    @property
    def delta(self) -> np.ndarray:
        return self.phi[:, :-1] - self.phi[:, 1:]

    def rollouts(self) -> list[DualRollout]:
        out = []
        for b in range(len(self.r_e)):
            out.append(DualRollout(
                self.queries[b // self.K], self.entities[b], self.clusters[b], self.relations[b],
                np.array([lp.value[b] for lp in self.logp_e]), np.array([lp.value[b] for lp in self.logp_c]),
                self.r_e[b], self.r_c[b], self.D[b], self.lam[b], self.delta[b], self.y[b], self.phi[b]))
        return out


def rollout_uniforms(seed: int, epoch: int, query_index: int, K: int, T: int) -> np.ndarray:
    """Uniform draws keyed by (epoch, query); rows are rollouts, columns (step, agent)."""
    return np.random.default_rng([seed, epoch, query_index]).random((K, T, 2))


def _phi_tables(policy: DualPolicy, queries) -> np.ndarray:
    cu = policy.centroid_unit
    rows = []
    for q in queries:
        targets = sorted({int(policy.clusters.assignment[a]) for a in q.answers})
        rows.append((cu @ cu[targets].T).max(axis=1))
    return np.stack(rows)


def _entity_similarity(policy: DualPolicy, queries, K, final_entities) -> np.ndarray:
    eu = policy.entity_unit
    out = np.empty(len(final_entities))
    for qi, q in enumerate(queries):
        rows = slice(qi * K, (qi + 1) * K)
        ans = np.fromiter(q.answers, dtype=np.int64)
        out[rows] = (eu[final_entities[rows]] @ eu[ans].T).max(axis=1)
    return out


def collect_rollouts(policy: DualPolicy, queries: Sequence[QuerySample], K: int, T: int,
                     uniforms: np.ndarray, config: TrainConfig) -> RolloutBatch:
    """Run K lockstep rollouts of both agents per query.

    ``uniforms`` has shape (len(queries) * K, T, 2): one draw per row, step
    and agent (0 = cluster level, 1 = entity level).
    """
    store = policy.store
    E = policy.entity_vectors
    d, H = policy.d, policy.hidden
    Q = len(queries)
    B = Q * K
    rows = np.arange(B)
    src = np.repeat([q.source for q in queries], K)
    rq = np.repeat([q.query_relation for q in queries], K)
    answers = [np.fromiter(sorted(q.answers), dtype=np.int64) for q in queries]
    no_op = policy.graph.no_op

    rel_table = policy.relation_table()
    cl_table = policy.cluster_table()
    rq_emb = nn.take_rows(rel_table, rq)

    ent = src.copy()
    cl = policy.clusters.assignment[ent].astype(np.int64)
    last_rel = np.full(B, no_op, dtype=np.int64)
    d_state = nn.zero_stack_state(B, H)
    g_state = nn.zero_stack_state(B, H)
    h_e = Tensor(np.zeros((B, H)))
    h_c = Tensor(np.zeros((B, H)))
    atn_prev = Tensor(np.zeros((B, d)))

    ents = [ent]
    cls = [cl]
    rels = []
    logp_e, logp_c, entropy, lam_t = [], [], [], []
    for t in range(T):
        atn = policy.attention(ent)
        c_emb = nn.take_rows(cl_table, cl)
        cdest = policy.cl_dest[cl]
        g = giant_step(store, g_state, c_emb, h_c, h_e, c_emb, nn.take_rows(cl_table, cdest),
                       policy.cl_mask[cl])

        arel, aent = policy.act_rel[ent], policy.act_ent[ent]
        amask = policy.act_mask[ent].copy()
        if config.mask_query_edge:
            for qi in range(Q):
                r = slice(qi * K, (qi + 1) * K)
                at_src = ent[r] == src[r]
                if at_src.any():
                    hit = (arel[r] == rq[r][:, None]) & np.isin(aent[r], answers[qi]) & at_src[:, None]
                    amask[r] &= ~hit
        r_last = nn.take_rows(rel_table, last_rel)
        prev_a = nn.concat([r_last, Tensor(E[ent])])
        cand_e = nn.concat([nn.take_rows(rel_table, arel), Tensor(E[aent])])
        dw = dwarf_step(store, d_state, prev_a, h_e, atn_prev, h_c, E[ent], r_last, rq_emb, atn, cand_e, amask)

        if t > 0 and config.guidance:
            lam_t.append(lambda_value(store, np.concatenate([E[ent], rq_emb.value, dw.hidden.value], axis=1)))

        lp_c, lp_e = g.log_probs, dw.log_probs
        ic = nn.categorical_sample_batch(np.exp(lp_c.value) * g.mask, uniforms[:, t, 0])
        ie = nn.categorical_sample_batch(np.exp(lp_e.value) * dw.mask, uniforms[:, t, 1])
        logp_c.append(nn.pick(lp_c, ic))
        logp_e.append(nn.pick(lp_e, ie))
        if config.entropy_beta:
            entropy.append(_entropy(g) + _entropy(dw))

        g_state, d_state = g.state, dw.state
        h_c, h_e, atn_prev = g.hidden, dw.hidden, atn
        ent = aent[rows, ie]
        last_rel = arel[rows, ie]
        cl = cdest[rows, ic]
        ents.append(ent)
        cls.append(cl)
        rels.append(last_rel)

    if config.guidance:
        # the final state's multiplier needs one more history update
        with nn.no_grad():
            r_last = nn.take_rows(rel_table, last_rel)
            override = nn.linear(store["dwarf.W_mix"], nn.concat([h_e, atn_prev, h_c]))
            _, h_final = nn.lstm_stack_step(store, "dwarf", d_state, nn.concat([r_last, Tensor(E[ent])]), override)
        lam_t.append(lambda_value(store, np.concatenate([E[ent], rq_emb.value, h_final.value], axis=1)))

    ents = np.stack(ents, axis=1)
    cls = np.stack(cls, axis=1)
    phi_tab = _phi_tables(policy, queries)
    phi = phi_tab[np.repeat(np.arange(Q), K)[:, None], cls]
    D = (policy.centroid_unit[cls[:, 1:]] * policy.entity_unit[ents[:, 1:]]).sum(axis=-1)
    r_e = np.zeros((B, T))
    r_c = np.zeros((B, T))
    targets = [np.array(sorted({int(policy.clusters.assignment[a]) for a in q.answers})) for q in queries]
    for qi in range(Q):
        r = slice(qi * K, (qi + 1) * K)
        r_e[r, T - 1] = np.isin(ents[r, T], answers[qi])
        r_c[r, T - 1] = np.isin(cls[r, T], targets[qi])
    batch = RolloutBatch(queries, K, ents, cls, np.stack(rels, axis=1), logp_e, logp_c, entropy, lam_t,
                         r_e, r_c, D, phi, _entity_similarity(policy, queries, K, ents[:, T]))
    if config.guidance:
        batch.lam = np.stack([l.value for l in lam_t], axis=1)
    else:
        batch.lam = np.zeros((B, T))
    batch.y = guidance_label(D, r_c, config.delta, config.epsilon).reshape(B, T)
    return batch


def _entropy(step) -> Tensor:
    p = step.probs
    lp = step.log_probs
    return nn.mul(nn.sum_(nn.mul(p, lp), axis=-1), -1.0)


# ---------------------------------------------------------------- objectives

def giant_objective(r_c, delta, alpha: float) -> float:
    """``sum_t r_c - alpha * Delta`` for one rollout."""
    return float(np.sum(np.asarray(r_c) - alpha * np.asarray(delta)))


def dwarf_objective(r_e, D, lam) -> float:
    """``sum_t (1 - lam) r_e + lam D`` with the multipliers treated as constants."""
    r_e, D, lam = (np.asarray(x, dtype=np.float64) for x in (r_e, D, lam))
    return float(np.sum((1.0 - lam) * r_e + lam * D))


def lambda_objective(lam, y) -> float:
    lam, y = np.asarray(lam, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.sum(-(1.0 - y) * np.log1p(-lam) - y * np.log(lam)))


def returns_to_go(rewards: np.ndarray) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(rewards, axis=-1), axis=-1), axis=-1)


def advantages(rewards: np.ndarray, baseline: bool) -> np.ndarray:
    """Return-to-go minus the per-step batch mean (when ``baseline``)."""
    G = returns_to_go(np.asarray(rewards, dtype=np.float64))
    if baseline:
        G = G - G.mean(axis=0, keepdims=True)
    return G


def dwarf_rewards(batch: RolloutBatch) -> np.ndarray:
    return (1.0 - batch.lam) * batch.r_e + batch.lam * batch.D


def giant_rewards(batch: RolloutBatch, alpha: float) -> np.ndarray:
    return batch.r_c - alpha * batch.delta


def surrogate_loss(logps: Sequence[Tensor], adv: np.ndarray, n_rows: int) -> Tensor:
    """``-sum_t sum_b log pi * adv / n_rows``; its gradient is the REINFORCE estimate."""
    total = None
    for t, lp in enumerate(logps):
        term = nn.sum_(nn.mul(lp, adv[:, t]))
        total = term if total is None else total + term
    return nn.mul(total, -1.0 / n_rows)


def policy_gradient(policy: DualPolicy, batches: Sequence[RolloutBatch], config: TrainConfig,
                    workers: int = 1) -> dict[str, float]:
    """Accumulate gradients of all three objectives into the parameter store.

    Baselines are batch means over every chunk in ``batches``.  Gradients for
    each agent are taken only with respect to that agent's own parameters.
    """
    store = policy.store
    n_rows = sum(len(b.r_e) for b in batches)
    rew_e = [dwarf_rewards(b) for b in batches]
    rew_c = [giant_rewards(b, config.alpha) for b in batches]
    adv_e = _batch_advantages(rew_e, config.baseline)
    adv_c = _batch_advantages(rew_c, config.baseline)
    groups = {"giant": store.names("giant."), "dwarf": store.names("dwarf."), "lambda": store.names("lambda.")}

    def chunk_grads(i):
        b = batches[i]
        loss_e = surrogate_loss(b.logp_e, adv_e[i], n_rows)
        loss_c = surrogate_loss(b.logp_c, adv_c[i], n_rows)
        if config.entropy_beta and b.entropy:
            bonus = nn.mul(nn.sum_(nn.concat(b.entropy)), -config.entropy_beta / n_rows)
            loss_e = loss_e + bonus
            loss_c = loss_c + bonus
        out = {}
        for name, g in zip(groups["giant"], nn.backward(loss_c, [store[n] for n in groups["giant"]])):
            out[name] = g
        for name, g in zip(groups["dwarf"], nn.backward(loss_e, [store[n] for n in groups["dwarf"]])):
            out[name] = g
        if config.guidance and b.lam_t:
            bce = None
            for t, lam in enumerate(b.lam_t):
                term = nn.sum_(nn.cross_entropy_bernoulli(lam, b.y[:, t]))
                bce = term if bce is None else bce + term
            loss_l = nn.mul(bce, 1.0 / n_rows)
            for name, g in zip(groups["lambda"], nn.backward(loss_l, [store[n] for n in groups["lambda"]])):
                out[name] = g
        return out

    def guarded(i):
        try:
            return chunk_grads(i)
        except nn.NumericError as exc:
            raise TrainingError(f"chunk {i}: {exc}") from exc

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(guarded, range(len(batches))))
    else:
        results = [guarded(i) for i in range(len(batches))]
    # fixed chunk order keeps the sum independent of worker scheduling
    for res in results:
        for name, g in res.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name}")
            store.grads[name] += g

    lam = np.concatenate([b.lam for b in batches])
    y = np.concatenate([b.y for b in batches])
    re = np.concatenate(rew_e)
    rc = np.concatenate(rew_c)
    stats = {
        "J_giant": float(rc.sum(axis=1).mean()),
        "J_dwarf": float(re.sum(axis=1).mean()),
        "J_lambda": float(np.mean([lambda_objective(l, yy) for l, yy in zip(lam, y)])) if config.guidance else 0.0,
        "CSS": float(np.concatenate([b.phi[:, -1] for b in batches]).mean()),
        "ESS": float(np.concatenate([b.ess for b in batches]).mean()),
        "mean_lambda": float(lam.mean()),
        "mean_y": float(y.mean()),
        "hit_rate": float(np.concatenate([b.r_e[:, -1] for b in batches]).mean()),
        "cluster_hit_rate": float(np.concatenate([b.r_c[:, -1] for b in batches]).mean()),
    }
    return stats


def _batch_advantages(rewards: list[np.ndarray], baseline: bool) -> list[np.ndarray]:
    G = [returns_to_go(r) for r in rewards]
    if not baseline:
        return G
    allG = np.concatenate(G)
    b = allG.mean(axis=0, keepdims=True)
    return [g - b for g in G]


# --------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    policy: DualPolicy
    metrics: list[dict] = field(default_factory=list)


def train_epoch(policy: DualPolicy, optimizer: Adam, queries: Sequence[QuerySample],
                config: TrainConfig, epoch: int) -> dict[str, float]:
    order = np.random.default_rng([config.seed, epoch]).permutation(len(queries))
    K, T = config.rollouts_train, config.path_length
    sums: dict[str, float] = {}
    n_rows_total = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        chunks = [idx[i:i + CHUNK_QUERIES] for i in range(0, len(idx), CHUNK_QUERIES)]

        def run(chunk):
            qs = [queries[i] for i in chunk]
            u = np.concatenate([rollout_uniforms(config.seed, epoch, int(i), K, T) for i in chunk])
            return collect_rollouts(policy, qs, K, T, u, config)

        if config.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                batches = list(pool.map(run, chunks))
        else:
            batches = [run(c) for c in chunks]
        policy.store.zero_grad()
        stats = policy_gradient(policy, batches, config, workers=config.workers)
        optimizer.step(sign=-1.0)
        rows = len(idx) * K
        n_rows_total += rows
        for k, v in stats.items():
            sums[k] = sums.get(k, 0.0) + v * rows
    return {k: v / n_rows_total for k, v in sums.items()}


def train(policy: DualPolicy, train_queries: Sequence[QuerySample], config: TrainConfig,
          valid_fn=None, progress=None) -> TrainResult:
    """Run ``config.epochs`` epochs of collect -> objectives -> Adam.

    ``valid_fn(policy)`` (optional) returns validation Hits@1, recorded in
    the ``hits1_valid`` column every ``config.valid_every`` epochs.
    """
    config.validate()
    if not train_queries:
        raise TrainingError("no training queries")
    optimizer = Adam(policy.store, config.lr)
    result = TrainResult(policy)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        row = {"epoch": epoch + 1}
        row.update(train_epoch(policy, optimizer, train_queries, config, epoch))
        hv = float("nan")
        if valid_fn is not None and config.valid_every and (epoch + 1) % config.valid_every == 0:
            hv = valid_fn(policy)
        row["hits1_valid"] = hv
        result.metrics.append(row)
        log.info("epoch %d  J_dwarf=%.4f J_giant=%.4f hit=%.3f lambda=%.3f (%.1fs)", epoch + 1,
                 row["J_dwarf"], row["J_giant"], row["hit_rate"], row["mean_lambda"], time.perf_counter() - t0)
        if progress is not None:
            progress(row)
    return result
