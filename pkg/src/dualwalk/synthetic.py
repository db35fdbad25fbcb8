"""Synthetic knowledge graphs with a planted compositional rule."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .kg import DatasetSplit, Triple, Vocab, write_triples


def planted_rule_kg(hops: int = 3, layer_size: int = 60, source_size: int = 120,
                    n_relations: int = 10, distractor_degree: int = 3, test_fraction: float = 0.2,
                    seed: int = 0, isolate_answers: bool = False) -> DatasetSplit:
    """Layered KG where ``query(x) = r_hops(...r_2(r_1(x)))``.

    Layer 0 holds ``source_size`` entities, layers 1..hops ``layer_size``
    each.  Each rule relation ``r_k`` maps layer k-1 functionally into layer
    k.  The remaining relations add ``distractor_degree`` random out-edges
    per entity, never between layer 0 and the final layer, so the only
    route from a source to its answer is the full rule chain.  Query
    triples are split into train and test; none of them enters the graph.
    With ``isolate_answers`` no distractor edge touches the final layer, so
    the last rule edge is the only way in and no shorter route exists.
    """
    n_rule = hops
    n_distract = n_relations - n_rule - 1
    if n_distract < 0 or (n_distract == 0 and distractor_degree > 0):
        raise ValueError("n_relations too small for the rule plus distractors")
    rng = np.random.default_rng(seed)
    ents = Vocab()
    layers = [[ents.add(f"L0_{i}") for i in range(source_size)]]
    for k in range(1, hops + 1):
        layers.append([ents.add(f"L{k}_{i}") for i in range(layer_size)])
    rels = Vocab(["query"] + [f"rule{k}" for k in range(1, hops + 1)] + [f"noise{k}" for k in range(n_distract)])
    query_rel = rels["query"]

    facts: set[Triple] = set()
    step = []
    for k in range(1, hops + 1):
        src, dst = layers[k - 1], layers[k]
        # every target is hit at least once when the source layer is large enough
        targets = rng.permutation(np.resize(rng.permutation(len(dst)), len(src)))
        mapping = {s: dst[int(t)] for s, t in zip(src, targets)}
        step.append(mapping)
        for s, t in mapping.items():
            facts.add(Triple(s, rels[f"rule{k}"], t))

    first, last = set(layers[0]), set(layers[-1])
    n = len(ents)
    for e in range(n):
        if isolate_answers and e in last:
            continue
        for _ in range(distractor_degree):
            r = rels[f"noise{int(rng.integers(n_distract))}"]
            while True:
                t = int(rng.integers(n))
                if t == e:
                    continue
                if (e in first and t in last) or (e in last and t in first):
                    continue
                if isolate_answers and (e in last or t in last):
                    continue
                break
            facts.add(Triple(e, r, t))

    queries = []
    for s in layers[0]:
        x = s
        for mapping in step:
            x = mapping[x]
        queries.append(Triple(s, query_rel, x))
    order = rng.permutation(len(queries))
    n_test = int(round(test_fraction * len(queries)))
    test = [queries[i] for i in sorted(order[:n_test])]
    train = [queries[i] for i in sorted(order[n_test:])]
    facts_sorted = sorted(facts)
    return DatasetSplit(ents, rels, facts_sorted, train, [], test)


def write_dataset(split: DatasetSplit, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_triples(d / "facts.txt", split.facts, split.entities, split.relations)
    write_triples(d / "train.txt", split.train, split.entities, split.relations)
    if split.valid:
        write_triples(d / "valid.txt", split.valid, split.entities, split.relations)
    write_triples(d / "test.txt", split.test, split.entities, split.relations)
    return d
