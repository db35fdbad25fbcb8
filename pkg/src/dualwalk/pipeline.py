"""prepare -> train -> eval glue shared by the CLI and the experiment scripts."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import DualPolicy, relation_init_from_transe
from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .config import Config
from .embed import ClusterModel, EmbeddingTable, TransEConfig, build_cluster_graph, build_cluster_model, transe_train
from .infer import evaluate, summarize_results
from .kg import DatasetSplit, KnowledgeGraph, group_queries, load_dataset
from .train import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "J_giant", "J_dwarf", "J_lambda", "CSS", "ESS", "mean_lambda", "hits1_valid")


@dataclass
class Prepared:
    data: DatasetSplit
    graph: KnowledgeGraph
    embeddings: EmbeddingTable
    clusters: ClusterModel


def train_config(cfg: Config, workers: int = 1) -> TrainConfig:
    return TrainConfig(d=cfg.embedding_size, batch_size=cfg.batch_size, lr=cfg.learning_rate,
                       n_clusters=cfg.cluster_number, path_length=cfg.path_length,
                       rollouts_train=cfg.rollouts_train, rollouts_test=cfg.rollouts_test,
                       beam_size=cfg.beam_size, alpha=cfg.alpha, delta=cfg.delta, epsilon=cfg.epsilon,
                       baseline=cfg.baseline, guidance=cfg.guidance, entropy_beta=cfg.entropy_beta,
                       epochs=cfg.epochs, seed=cfg.seed, workers=workers, valid_every=cfg.valid_every)


def prepare(data: DatasetSplit, cfg: Config) -> Prepared:
    graph = data.graph()
    facts = [t for t in data.facts if t not in set(data.test)]
    table = transe_train(facts, len(data.entities), len(data.relations),
                         TransEConfig(d=cfg.embedding_size, epochs=cfg.transe_epochs, seed=cfg.seed))
    # round through float32 so a fresh run and a reload see identical numbers
    table = EmbeddingTable(table.entity_vectors.astype(np.float32).astype(np.float64),
                           table.relation_vectors.astype(np.float32).astype(np.float64))
    clusters = build_cluster_model(graph, table, cfg.cluster_number, seed=cfg.seed)
    clusters.centroids = clusters.centroids.astype(np.float32).astype(np.float64)
    clusters.learned_parts = clusters.learned_parts.astype(np.float32).astype(np.float64)
    return Prepared(data, graph, table, clusters)


def save_prepared(prep: Prepared, path, seed: int) -> None:
    write_checkpoint(path, Checkpoint(prep.embeddings, seed, prep.clusters))


def load_prepared(data: DatasetSplit, path) -> tuple[Prepared, Checkpoint]:
    ckpt = read_checkpoint(path)
    if ckpt.embeddings is None or ckpt.clusters is None:
        raise FileNotFoundError(f"{path} lacks the embedding or cluster block; run prepare first")
    graph = data.graph()
    if ckpt.embeddings.entity_vectors.shape[0] != graph.n_entities:
        raise ValueError(f"{path}: entity count does not match the dataset")
    ckpt.clusters.adjacency = build_cluster_graph(graph, ckpt.clusters.assignment, ckpt.clusters.n_clusters)
    return Prepared(data, graph, ckpt.embeddings, ckpt.clusters), ckpt


def make_policy(prep: Prepared, seed: int, params: dict | None = None) -> DualPolicy:
    rel_init = relation_init_from_transe(prep.embeddings.relation_vectors, prep.graph.n_relations)
    return DualPolicy(prep.graph, prep.embeddings.entity_vectors, prep.clusters, rel_init, seed=seed,
                      params=params)


def run_training(prep: Prepared, cfg: Config, workers: int = 1, progress=None) -> TrainResult:
    tc = train_config(cfg, workers)
    policy = make_policy(prep, cfg.seed)
    queries = group_queries(prep.data.train)
    known = prep.data.known_tails()
    valid_fn = None
    if prep.data.valid:
        def valid_fn(pol):
            res = evaluate(pol, prep.data.valid, known, cfg.beam_size, cfg.path_length, workers)
            return summarize_results(res)["filtered"]["Hits@1"]
    return train(policy, queries, tc, valid_fn, progress)


def save_trained(prep: Prepared, result: TrainResult, path, seed: int) -> None:
    clusters = ClusterModel(prep.clusters.assignment, prep.clusters.centroids,
                            result.policy.store["giant.cluster_learned"].value, prep.clusters.adjacency)
    write_checkpoint(path, Checkpoint(prep.embeddings, seed, clusters, result.policy.params_snapshot()))


def write_metrics(path, rows, cfg: Config) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# alpha={cfg.alpha!r} delta={cfg.delta!r} epsilon={cfg.epsilon!r} "
                 f"learning_rate={cfg.learning_rate!r} cluster_number={cfg.cluster_number} "
                 f"path_length={cfg.path_length} seed={cfg.seed}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in METRIC_COLUMNS[1:]])


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    reader = csv.DictReader(lines)
    cols: dict[str, list[float]] = {}
    for row in reader:
        for k, v in row.items():
            cols.setdefault(k, []).append(float(v) if v not in ("", None) else math.nan)
    return {k: np.asarray(v) for k, v in cols.items()}


def load_for_eval(dataset_dir, checkpoint_path, seed: int = 0) -> tuple[Prepared, DualPolicy]:
    data = load_dataset(dataset_dir)
    prep, ckpt = load_prepared(data, checkpoint_path)
    params = ckpt.params or None
    if params is not None:
        prep.clusters.learned_parts = params["giant.cluster_learned"]
    return prep, make_policy(prep, seed, params)
