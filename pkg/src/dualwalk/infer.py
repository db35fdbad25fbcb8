"""Beam-search decoding and ranking metrics."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .agents import DualPolicy, dwarf_step, giant_step
from .kg import QuerySample
from .nn import Tensor

log = logging.getLogger(__name__)


@dataclass
class BeamHypothesis:
    entities: list[int]
    relations: list[int]
    clusters: list[int]
    logp: float


@dataclass
class BeamOutput:
    ranking: list[tuple[int, float]]
    hypotheses: list[BeamHypothesis]

    def scores(self) -> dict[int, float]:
        return dict(self.ranking)


def _gather_state(state, idx):
    return [(Tensor(h.value[idx]), Tensor(c.value[idx])) for h, c in state]


def beam_search(policy: DualPolicy, query: QuerySample, width: int, T: int) -> BeamOutput:
    """Width-limited decoding of the entity-level walk.

    Each hypothesis carries both agents' recurrent states; the cluster walker
    advances greedily.  Expansions are ranked by cumulative log-probability,
    ties going to the smaller entity id.  An entity's score is the best
    surviving path that ends there.
    """
    if width < 1:
        raise ValueError("beam width must be positive")
    store = policy.store
    E = policy.entity_vectors
    d, H = policy.d, policy.hidden
    with nn.no_grad():
        rel_table = policy.relation_table()
        cl_table = policy.cluster_table()
        ent = np.array([query.source])
        cl = policy.clusters.assignment[ent].astype(np.int64)
        last_rel = np.array([policy.graph.no_op])
        logp = np.zeros(1)
        d_state = nn.zero_stack_state(1, H)
        g_state = nn.zero_stack_state(1, H)
        h_e = Tensor(np.zeros((1, H)))
        h_c = Tensor(np.zeros((1, H)))
        atn_prev = Tensor(np.zeros((1, d)))
        paths_e = [[query.source]]
        paths_r: list[list[int]] = [[]]
        paths_c = [[int(cl[0])]]
        for _ in range(T):
            n = len(ent)
            rq_emb = nn.take_rows(rel_table, np.full(n, query.query_relation))
            atn = policy.attention(ent)
            c_emb = nn.take_rows(cl_table, cl)
            cdest = policy.cl_dest[cl]
            g = giant_step(store, g_state, c_emb, h_c, h_e, c_emb, nn.take_rows(cl_table, cdest),
                           policy.cl_mask[cl])
            arel, aent, amask = policy.act_rel[ent], policy.act_ent[ent], policy.act_mask[ent]
            r_last = nn.take_rows(rel_table, last_rel)
            prev_a = nn.concat([r_last, Tensor(E[ent])])
            cand_e = nn.concat([nn.take_rows(rel_table, arel), Tensor(E[aent])])
            dw = dwarf_step(store, d_state, prev_a, h_e, atn_prev, h_c, E[ent], r_last, rq_emb, atn,
                            cand_e, amask)

            gl = np.where(g.mask, g.logits.value, -np.inf)
            next_cl = cdest[np.arange(n), gl.argmax(axis=1)]
            lp = dw.log_probs.value
            parent, slot = np.nonzero(amask)
            score = logp[parent] + lp[parent, slot]
            dest = aent[parent, slot]
            keep = np.lexsort((np.arange(len(score)), dest, -score))[:width]
            parent, slot = parent[keep], slot[keep]

            ent = aent[parent, slot]
            last_rel = arel[parent, slot]
            logp = score[keep]
            cl = next_cl[parent]
            d_state = _gather_state(dw.state, parent)
            g_state = _gather_state(g.state, parent)
            h_e = Tensor(dw.hidden.value[parent])
            h_c = Tensor(g.hidden.value[parent])
            atn_prev = Tensor(atn.value[parent])
            paths_e = [paths_e[p] + [int(e)] for p, e in zip(parent, ent)]
            paths_r = [paths_r[p] + [int(r)] for p, r in zip(parent, last_rel)]
            paths_c = [paths_c[p] + [int(c)] for p, c in zip(parent, cl)]

    best: dict[int, float] = {}
    for e, s in zip(ent.tolist(), logp.tolist()):
        if e not in best or s > best[e]:
            best[e] = s
    ranking = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    hyps = [BeamHypothesis(pe, pr, pc, float(s)) for pe, pr, pc, s in zip(paths_e, paths_r, paths_c, logp)]
    return BeamOutput(ranking, hyps)


# ------------------------------------------------------------------- ranking

@dataclass
class RankResult:
    query: QuerySample
    gold: int
    rank_raw: int
    rank_filtered: int
    score: float


def rank_gold(ranking: Sequence[tuple[int, float]], gold: int, known: Iterable[int], width: int) -> tuple[int, int, float]:
    """Raw and filtered rank of ``gold``; a gold missing from the ranking gets ``width + 1``."""
    known = set(known) - {gold}
    entities = [e for e, _ in ranking]
    if gold in entities:
        pos = entities.index(gold)
        raw = pos + 1
        filtered = raw - sum(1 for e in entities[:pos] if e in known)
        return raw, filtered, float(ranking[pos][1])
    raw = width + 1
    filtered = raw - sum(1 for e in entities if e in known)
    return raw, max(filtered, 1), float("-inf")


def evaluate(policy: DualPolicy, triples, known_tails: dict, width: int, T: int,
             workers: int = 1) -> list[RankResult]:
    """Rank every test triple's tail; beams are shared across triples with the same (head, relation)."""
    triples = [tuple(int(x) for x in t) for t in triples]
    keys = list(dict.fromkeys((h, r) for h, r, _ in triples))

    def run(key):
        h, r = key
        return beam_search(policy, QuerySample(h, r, frozenset()), width, T).ranking

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rankings = dict(zip(keys, pool.map(run, keys)))
    else:
        rankings = {k: run(k) for k in keys}
    out = []
    for h, r, t in triples:
        raw, filt, score = rank_gold(rankings[(h, r)], t, known_tails.get((h, r), ()), width)
        out.append(RankResult(QuerySample(h, r, frozenset([t])), t, raw, filt, score))
    return out


def mrr_hits(ranks: Sequence[int], ks=(1, 3, 10)) -> dict[str, float]:
    """MRR and Hits@K from one (best) gold rank per query."""
    ranks = np.asarray(list(ranks), dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("mrr_hits: no rank results")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    out = {"MRR": float(np.mean(1.0 / ranks))}
    for k in ks:
        out[f"Hits@{k}"] = float(np.mean(ranks <= k))
    return out


def best_ranks(results: Sequence[RankResult], filtered: bool) -> list[int]:
    """Best gold rank per distinct query."""
    best: dict[tuple, int] = {}
    for r in results:
        key = (r.query.source, r.query.query_relation, r.gold)
        rank = r.rank_filtered if filtered else r.rank_raw
        best[key] = min(rank, best.get(key, rank))
    return list(best.values())


def summarize_results(results: Sequence[RankResult], ks=(1, 3, 10)) -> dict[str, dict[str, float]]:
    return {"raw": mrr_hits(best_ranks(results, False), ks),
            "filtered": mrr_hits(best_ranks(results, True), ks)}


def average_precision(labels: Sequence[bool]) -> float | None:
    """Mean of precision-at-hit over the positives in a ranked label list."""
    hits = 0
    precisions = []
    for i, lab in enumerate(labels, 1):
        if lab:
            hits += 1
            precisions.append(hits / i)
    if not precisions:
        return None
    return float(np.mean(precisions))


def map_score(ranked_labels: Iterable[Sequence[bool]]) -> float:
    """Mean AP over one relation task's queries; queries without positives are skipped."""
    aps = []
    for i, labels in enumerate(ranked_labels):
        ap = average_precision(labels)
        if ap is None:
            log.warning("map_score: query %d has no positives; skipped", i)
            continue
        aps.append(ap)
    if not aps:
        raise ValueError("map_score: no query with positives")
    return float(np.mean(aps))


def css_ess(terminal_cluster_sim, terminal_entity_sim) -> tuple[float, float]:
    return float(np.mean(terminal_cluster_sim)), float(np.mean(terminal_entity_sim))


def write_results(path, results: Sequence[RankResult], entities=None, ks=(1, 3, 10)) -> dict:
    summary = summarize_results(results, ks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("query_id", "gold", "rank_raw", "rank_filtered", "score"))
        for i, r in enumerate(results):
            gold = entities.name(r.gold) if entities is not None else r.gold
            w.writerow((i, gold, r.rank_raw, r.rank_filtered, repr(r.score)))
        fh.write("\n")
        w.writerow(("protocol", "metric", "value"))
        for proto, vals in summary.items():
            for k, v in vals.items():
                w.writerow((proto, k, repr(v)))
    return summary
