"""Knowledge-graph data model, TSV ingestion and action enumeration."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

NO_OP = "NO_OP"
INVERSE_SUFFIX = "_inv"


class ParseError(ValueError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bidirectional name <-> dense index map, ids by first appearance."""

    def __init__(self, names: Iterable[str] = ()):
        self.index: dict[str, int] = {}
        self.names: list[str] = []
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.index[name] = idx
            self.names.append(name)
        return idx

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def name(self, idx: int) -> str:
        return self.names[idx]

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, n in enumerate(self.names):
                fh.write(f"{n}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError(f"{path}:{lineno}: expected 'name<TAB>index'")
                rows.append((int(parts[1]), parts[0]))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ParseError(f"{path}: indices are not dense")
        return cls(n for _, n in rows)


def load_triples(path, entities: Vocab | None = None, relations: Vocab | None = None):
    """Read ``head<TAB>relation<TAB>tail`` lines.

    Passing existing vocabularies extends them, so several split files can share
    one id space.  Returns ``(triples, entities, relations)``.
    """
    entities = entities if entities is not None else Vocab()
    relations = relations if relations is not None else Vocab()
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            triples.append(Triple(entities.add(h), relations.add(r), entities.add(t)))
    return triples, entities, relations


def write_triples(path, triples: Iterable[Triple], entities: Vocab, relations: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{entities.name(h)}\t{relations.name(r)}\t{entities.name(t)}\n")


@dataclass
class KnowledgeGraph:
    """Adjacency with inverse edges and one NO_OP self-loop per entity.

    Relation ids: ``0..R-1`` base relations, ``R..2R-1`` their inverses and
    ``2R`` for NO_OP.
    """

    entities: Vocab
    relations: Vocab
    n_base_relations: int
    adjacency: list[list[tuple[int, int]]]
    has_inverse: bool = True
    has_self_loop: bool = True
    _padded: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def no_op(self) -> int:
        return self.relations[NO_OP]

    def inverse(self, rel: int) -> int:
        R = self.n_base_relations
        if rel < R:
            return rel + R
        if rel < 2 * R:
            return rel - R
        return rel

    def is_base(self, rel: int) -> bool:
        return rel < self.n_base_relations

    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def edges(self):
        for e, adj in enumerate(self.adjacency):
            for r, t in adj:
                yield e, r, t

    def padded_actions(self):
        """Per-entity action table ``(relations, entities, mask)`` of shape (E, max_degree)."""
        if self._padded is None:
            width = max(len(a) for a in self.adjacency)
            rel = np.full((self.n_entities, width), self.no_op, dtype=np.int64)
            ent = np.zeros((self.n_entities, width), dtype=np.int64)
            mask = np.zeros((self.n_entities, width), dtype=bool)
            for e, adj in enumerate(self.adjacency):
                rel[e, :len(adj)] = [r for r, _ in adj]
                ent[e, :len(adj)] = [t for _, t in adj]
                ent[e, len(adj):] = e
                mask[e, :len(adj)] = True
            self._padded = (rel, ent, mask)
        return self._padded


def build_graph(triples: Iterable[Triple], entities: Vocab, relations: Vocab,
                add_inverse: bool = True, add_self_loop: bool = True) -> KnowledgeGraph:
    """Build the walking substrate from base triples.

    ``relations`` holds the base relation names; the graph gets its own
    relation vocabulary extended with inverses and NO_OP.
    """
    R = len(relations)
    rel_vocab = Vocab(relations.names)
    for name in relations.names:
        rel_vocab.add(name + INVERSE_SUFFIX)
    rel_vocab.add(NO_OP)
    no_op = rel_vocab[NO_OP]

    edges: list[set[tuple[int, int]]] = [set() for _ in range(len(entities))]
    seen: set[Triple] = set()
    dupes = 0
    for tr in triples:
        tr = Triple(*tr)
        if not (0 <= tr.head < len(entities) and 0 <= tr.tail < len(entities) and 0 <= tr.relation < R):
            raise ValueError(f"triple {tr} references an unknown id")
        if tr in seen:
            dupes += 1
            continue
        seen.add(tr)
        edges[tr.head].add((tr.relation, tr.tail))
        if add_inverse:
            edges[tr.tail].add((tr.relation + R, tr.head))
    if dupes:
        log.info("build_graph: dropped %d duplicate triples", dupes)
    if add_self_loop:
        for e in range(len(entities)):
            edges[e].add((no_op, e))
    adjacency = [sorted(s) for s in edges]
    return KnowledgeGraph(entities, rel_vocab, R, adjacency, add_inverse, add_self_loop)


def action_space(graph: KnowledgeGraph, entity: int) -> list[tuple[int, int]]:
    return list(graph.adjacency[entity])


def degree_stats(graph: KnowledgeGraph, triples: Iterable[Triple] | None = None) -> tuple[float, float]:
    """Mean and lower-median out-degree over base edges.

    By default base edges are read from the graph; pass ``triples`` to count a
    different edge source (e.g. train only vs train+valid).
    """
    n = graph.n_entities
    if n == 0:
        raise ValueError("degree_stats on an empty graph")
    deg = np.zeros(n, dtype=np.int64)
    if triples is None:
        for e, adj in enumerate(graph.adjacency):
            deg[e] = sum(1 for r, _ in adj if graph.is_base(r))
    else:
        for h, _, _ in set(Triple(*t) for t in triples):
            deg[h] += 1
    ordered = np.sort(deg)
    return float(deg.mean()), float(ordered[(n - 1) // 2])


@dataclass
class QuerySample:
    source: int
    query_relation: int
    answers: frozenset[int]


def group_queries(triples: Iterable[Triple]) -> list[QuerySample]:
    """One query per (head, relation) with every listed tail as an answer, in first-seen order."""
    grouped: dict[tuple[int, int], list[int]] = {}
    for h, r, t in triples:
        grouped.setdefault((h, r), []).append(t)
    return [QuerySample(h, r, frozenset(ts)) for (h, r), ts in grouped.items()]


def one_query_per_triple(triples: Iterable[Triple]) -> list[QuerySample]:
    return [QuerySample(h, r, frozenset([t])) for h, r, t in triples]


@dataclass
class DatasetSplit:
    entities: Vocab
    relations: Vocab
    facts: list[Triple]
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]

    def known_tails(self) -> dict[tuple[int, int], set[int]]:
        """Every true tail per (head, relation) across all splits, for filtered ranking."""
        known: dict[tuple[int, int], set[int]] = defaultdict(set)
        for split in (self.facts, self.train, self.valid, self.test):
            for h, r, t in split:
                known[(h, r)].add(t)
        return known

    def graph(self) -> KnowledgeGraph:
        test = set(self.test)
        leaked = [t for t in self.facts if t in test]
        if leaked:
            log.warning("dropping %d test triples found among graph facts", len(leaked))
        return build_graph([t for t in self.facts if t not in test], self.entities, self.relations)


def load_dataset(directory) -> DatasetSplit:
    """Read ``train.txt``, optional ``valid.txt``/``test.txt`` and optional ``facts.txt``.

    Without ``facts.txt`` the graph is built from the training triples.
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    ents, rels = Vocab(), Vocab()
    splits = {}
    for name in ("facts", "train", "valid", "test"):
        p = d / f"{name}.txt"
        if p.exists():
            splits[name], ents, rels = load_triples(p, ents, rels)
        elif name == "train":
            raise FileNotFoundError(f"missing {p}")
        else:
            splits[name] = None
    facts = splits["facts"] if splits["facts"] is not None else list(splits["train"])
    return DatasetSplit(ents, rels, facts, splits["train"], splits["valid"] or [], splits["test"] or [])
