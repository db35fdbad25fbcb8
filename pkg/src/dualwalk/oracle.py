"""Brute-force checks: exhaustive walk enumeration and tabular value iteration."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .agents import DualPolicy, dwarf_step, giant_step
from .kg import KnowledgeGraph
from .nn import Tensor


class PathExplosion(RuntimeError):
    pass


# ------------------------------------------------------------ path enumeration

@dataclass
class Path:
    entities: tuple[int, ...]
    relations: tuple[int, ...]
    logp: float

    @property
    def prob(self) -> float:
        return math.exp(self.logp)


def uniform_policy(graph: KnowledgeGraph) -> Callable:
    def fn(entities, relations):
        n = len(graph.adjacency[entities[-1]])
        return np.full(n, -math.log(n))
    return fn


def count_walks(graph: KnowledgeGraph, source: int, T: int) -> int:
    """Number of length-T walks from ``source`` (dead ends end a walk early)."""
    memo: dict[tuple[int, int], int] = {}

    def walks(e, t):
        if t == 0 or not graph.adjacency[e]:
            return 1
        key = (e, t)
        if key not in memo:
            memo[key] = sum(walks(dst, t - 1) for _, dst in graph.adjacency[e])
        return memo[key]

    return walks(source, T)


def enumerate_paths(graph: KnowledgeGraph, source: int, T: int, policy: Callable | None = None,
                    limit: int = 10 ** 6) -> list[Path]:
    """Every length-T walk from ``source`` with its log-probability under ``policy``.

    ``policy(entities, relations)`` receives the prefix walked so far and
    returns log-probabilities over ``graph.adjacency[entities[-1]]`` in
    adjacency order.  The default is the uniform walk.
    """
    n = count_walks(graph, source, T)
    if n > limit:
        raise PathExplosion(f"{n} paths of length {T} from entity {source} exceed the limit {limit}")
    policy = policy or uniform_policy(graph)
    out: list[Path] = []

    def dfs(ents, rels, logp):
        if len(rels) == T or not graph.adjacency[ents[-1]]:
            out.append(Path(tuple(ents), tuple(rels), logp))
            return
        lp = np.asarray(policy(tuple(ents), tuple(rels)), dtype=np.float64)
        for (r, e), l in zip(graph.adjacency[ents[-1]], lp):
            dfs(ents + [e], rels + [r], logp + float(l))

    dfs([source], [], 0.0)
    return out


def path_ranking(paths: Sequence[Path]) -> list[tuple[int, float]]:
    """Entities ranked by their best path log-probability, ties to the smaller id."""
    best: dict[int, float] = {}
    for p in paths:
        e = p.entities[-1]
        if e not in best or p.logp > best[e]:
            best[e] = p.logp
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))


class DualPathPolicy:
    """Entity-walker probabilities for one prefix at a time.

    Runs both agents with batch size 1 along each prefix, the cluster walker
    greedy, and caches the recurrent state per prefix so a depth-first
    enumeration costs one step per tree node.
    """

    def __init__(self, policy: DualPolicy, query_relation: int):
        self.policy = policy
        self.rq = query_relation
        self.cache: dict[tuple, dict] = {}

    def _root(self, source: int) -> dict:
        p = self.policy
        H, d = p.hidden, p.d
        return {"d_state": nn.zero_stack_state(1, H), "g_state": nn.zero_stack_state(1, H),
                "h_e": Tensor(np.zeros((1, H))), "h_c": Tensor(np.zeros((1, H))),
                "atn": Tensor(np.zeros((1, d))), "cl": int(p.clusters.assignment[source]),
                "last_rel": p.graph.no_op}

    def __call__(self, entities, relations) -> np.ndarray:
        p = self.policy
        key = (entities, relations)
        st = self.cache.get(key)
        if st is None:
            st = self._root(entities[0])
            self.cache[key] = st
        e = entities[-1]
        with nn.no_grad():
            rel_table, cl_table = p.relation_table(), p.cluster_table()
            ent = np.array([e])
            cl = np.array([st["cl"]])
            atn = p.attention(ent)
            c_emb = nn.take_rows(cl_table, cl)
            cdest = p.cl_dest[cl]
            g = giant_step(p.store, st["g_state"], c_emb, st["h_c"], st["h_e"], c_emb,
                           nn.take_rows(cl_table, cdest), p.cl_mask[cl])
            r_last = nn.take_rows(rel_table, np.array([st["last_rel"]]))
            prev_a = nn.concat([r_last, Tensor(p.entity_vectors[ent])])
            arel, aent, amask = p.act_rel[ent], p.act_ent[ent], p.act_mask[ent]
            cand = nn.concat([nn.take_rows(rel_table, arel), Tensor(p.entity_vectors[aent])])
            rq = nn.take_rows(rel_table, np.array([self.rq]))
            dw = dwarf_step(p.store, st["d_state"], prev_a, st["h_e"], st["atn"], st["h_c"],
                            p.entity_vectors[ent], r_last, rq, atn, cand, amask)
        gl = np.where(g.mask, g.logits.value, -np.inf)
        next_cl = int(cdest[0, gl[0].argmax()])
        lp = dw.log_probs.value[0]
        n = int(amask[0].sum())
        for slot in range(n):
            child = (entities + (int(aent[0, slot]),), relations + (int(arel[0, slot]),))
            self.cache[child] = {"d_state": dw.state, "g_state": g.state, "h_e": dw.hidden,
                                 "h_c": g.hidden, "atn": atn, "cl": next_cl,
                                 "last_rel": int(arel[0, slot])}
        return lp[:n]


def random_walk_distribution(graph: KnowledgeGraph, source: int, T: int) -> np.ndarray:
    """Probability of standing on each entity after T uniform steps."""
    p = np.zeros(graph.n_entities)
    p[source] = 1.0
    for _ in range(T):
        nxt = np.zeros_like(p)
        for e in np.nonzero(p)[0]:
            adj = graph.adjacency[e]
            if not adj:
                nxt[e] += p[e]
                continue
            share = p[e] / len(adj)
            for _, dst in adj:
                nxt[dst] += share
        p = nxt
    return p


def random_walk_ranking(graph: KnowledgeGraph, source: int, T: int) -> list[tuple[int, float]]:
    p = random_walk_distribution(graph, source, T)
    nz = np.nonzero(p)[0]
    return sorted(((int(e), float(p[e])) for e in nz), key=lambda kv: (-kv[1], kv[0]))


def random_ranking_mrr(n_candidates: int) -> float:
    """Expected reciprocal rank of one gold among ``n`` uniformly shuffled candidates."""
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    return float(sum(1.0 / k for k in range(1, n_candidates + 1)) / n_candidates)


# --------------------------------------------------------------- tabular MDPs

@dataclass
class TabularMdp:
    """Deterministic finite-horizon MDP; ``actions[s]`` lists successor states."""

    actions: list[list[int]]
    reward: np.ndarray
    phi: np.ndarray
    horizon: int
    target: int | None = None

    def __post_init__(self):
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        n = len(self.actions)
        if n == 0 or n > 20:
            raise ValueError("state count must be in 1..20")
        if any(len(a) == 0 for a in self.actions):
            raise ValueError("every state needs an action")
        if self.reward.shape != (n,) or self.phi.shape != (n,):
            raise ValueError("reward and potential need one entry per state")
        if np.any(np.abs(self.phi) > 1):
            raise ValueError("potential must lie in [-1, 1]")
        if self.target is not None and self.phi[self.target] != 1.0:
            raise ValueError("potential of the target must be 1")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    @property
    def n_states(self) -> int:
        return len(self.actions)


def step_reward(mdp: TabularMdp, s: int, s_next: int, alpha: float | None) -> float:
    r = mdp.reward[s]
    if alpha is None:
        return float(r)
    return float(r - alpha * (mdp.phi[s] - mdp.phi[s_next]))


def value_iteration(mdp: TabularMdp, alpha: float | None = None):
    """Backward induction.  ``alpha=None`` is the default reward, otherwise shaped.

    Returns ``(Q, greedy)`` where ``Q[t][s]`` is an array over the actions of
    ``s`` and ``greedy[t][s]`` the set of maximising action indices.
    """
    T = mdp.horizon
    V_next = np.zeros(mdp.n_states)
    Q: list[list[np.ndarray]] = [None] * T
    for t in range(T - 1, -1, -1):
        Qt = []
        for s, succ in enumerate(mdp.actions):
            Qt.append(np.array([step_reward(mdp, s, s2, alpha) + V_next[s2] for s2 in succ]))
        Q[t] = Qt
        V_next = np.array([q.max() for q in Qt])
    return Q, greedy_sets(Q)


def greedy_sets(Q, tol: float = 1e-12) -> list[list[frozenset[int]]]:
    return [[frozenset(np.nonzero(q >= q.max() - tol)[0].tolist()) for q in Qt] for Qt in Q]


def policy_return(mdp: TabularMdp, policy: Sequence[int], s0: int, alpha: float | None) -> tuple[float, int]:
    """Return of a stationary deterministic policy from ``s0`` and its final state."""
    s, total = s0, 0.0
    for _ in range(mdp.horizon):
        s2 = mdp.actions[s][policy[s]]
        total += step_reward(mdp, s, s2, alpha)
        s = s2
    return total, s


def all_policies(mdp: TabularMdp):
    return itertools.product(*(range(len(a)) for a in mdp.actions))


def random_mdp(rng: np.random.Generator, max_states: int = 6, max_horizon: int = 4,
               absorbing_target: bool = True, constant_phi: bool = False) -> TabularMdp:
    n = int(rng.integers(2, max_states + 1))
    target = n - 1
    actions = []
    for s in range(n):
        if absorbing_target and s == target:
            actions.append([s])
            continue
        k = int(rng.integers(1, min(3, n - 1) + 1))
        succ = rng.choice([x for x in range(n) if x != s], size=k, replace=False).tolist()
        actions.append([s] + [int(x) for x in succ])
    reward = np.zeros(n)
    reward[target] = 1.0
    if constant_phi:
        phi = np.ones(n)
    else:
        phi = rng.uniform(-1, 1, n)
        phi[target] = 1.0
    return TabularMdp(actions, reward, phi, int(rng.integers(1, max_horizon + 1)), target)


@dataclass
class TrialReport:
    trial: int
    n_states: int
    horizon: int
    alpha: float
    agree: bool
    agree_exact: bool
    gap: float
    identity_error: float = float("nan")


@dataclass
class ShapingReport:
    alpha: float
    trials: list[TrialReport] = field(default_factory=list)

    @property
    def agreement(self) -> float:
        return float(np.mean([t.agree for t in self.trials]))

    @property
    def exact_agreement(self) -> float:
        return float(np.mean([t.agree_exact for t in self.trials]))

    @property
    def max_identity_error(self) -> float:
        errs = [t.identity_error for t in self.trials if not math.isnan(t.identity_error)]
        return max(errs) if errs else float("nan")

    def table(self) -> str:
        lines = [f"{'trial':>5} {'|S|':>3} {'T':>2} {'alpha':>6} {'agree':>5} {'exact':>5} {'gap':>10} {'identity':>10}"]
        for t in self.trials:
            lines.append(f"{t.trial:>5} {t.n_states:>3} {t.horizon:>2} {t.alpha:>6.3f} {int(t.agree):>5} "
                         f"{int(t.agree_exact):>5} {t.gap:>10.3e} {t.identity_error:>10.3e}")
        lines.append(f"agreement {self.agreement:.3f}  exact agreement {self.exact_agreement:.3f}  "
                     f"max identity error {self.max_identity_error:.3e}")
        return "\n".join(lines)


def _greedy_terminal(mdp: TabularMdp, greedy, t: int, s_next: int) -> int:
    # follow the smallest default-greedy action from step t onwards
    s = s_next
    for u in range(t, mdp.horizon):
        s = mdp.actions[s][min(greedy[u][s])]
    return s


def compare_mdp(mdp: TabularMdp, alpha: float, trial: int = 0, check_identity: bool = False,
                tol: float = 1e-12) -> TrialReport:
    """Shaped vs default optimal Q on one MDP.

    ``agree`` holds when at every (t, s) each shaped-greedy action is also
    default-greedy; ``agree_exact`` asks for equal sets.  ``gap`` is the
    largest ``|Q_shaped - (Q - alpha*phi(s) + alpha*phi(s_T))|`` with ``s_T``
    reached by the default-greedy continuation.  With ``check_identity``
    every stationary deterministic policy's shaped return is compared with
    ``default - alpha*(phi(s0) - phi(s_T))``.
    """
    Q, g = value_iteration(mdp)
    Qs, gs = value_iteration(mdp, alpha)
    agree = all(gs[t][s] <= g[t][s] for t in range(mdp.horizon) for s in range(mdp.n_states))
    exact = all(gs[t][s] == g[t][s] for t in range(mdp.horizon) for s in range(mdp.n_states))
    gap = 0.0
    for t in range(mdp.horizon):
        for s, succ in enumerate(mdp.actions):
            for a, s2 in enumerate(succ):
                sT = _greedy_terminal(mdp, g, t + 1, s2)
                ref = Q[t][s][a] - alpha * mdp.phi[s] + alpha * mdp.phi[sT]
                gap = max(gap, abs(Qs[t][s][a] - ref))
    ident = float("nan")
    if check_identity:
        ident = 0.0
        for pol in all_policies(mdp):
            for s0 in range(mdp.n_states):
                R, sT = policy_return(mdp, pol, s0, None)
                Rs, _ = policy_return(mdp, pol, s0, alpha)
                ident = max(ident, abs(Rs - (R - alpha * (mdp.phi[s0] - mdp.phi[sT]))))
    return TrialReport(trial, mdp.n_states, mdp.horizon, alpha, agree, exact, gap, ident)


def shaping_consistency_check(alpha: float, trials: int = 100, seed: int = 0, max_states: int = 6,
                              max_horizon: int = 4, check_identity: bool = False,
                              constant_phi: bool = False, tol: float = 1e-12) -> ShapingReport:
    """Run ``compare_mdp`` on ``trials`` random MDPs.

    When ``check_identity`` is set the per-policy identity is asserted and a
    violation raises ``AssertionError``; agreement is only reported.
    """
    if check_identity and max_states > 4:
        raise ValueError("policy enumeration needs at most 4 states")
    rng = np.random.default_rng(seed)
    report = ShapingReport(alpha)
    for i in range(trials):
        mdp = random_mdp(rng, max_states, max_horizon, constant_phi=constant_phi)
        tr = compare_mdp(mdp, alpha, i, check_identity)
        if check_identity and not tr.identity_error <= tol:
            raise AssertionError(f"trial {i}: per-policy identity off by {tr.identity_error:.3e}")
        report.trials.append(tr)
    return report
