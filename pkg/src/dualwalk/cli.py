"""``dualwalk`` command line: prepare, train, eval, analyze, oracle, synth."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, dump_config, load_config, parse_config

log = logging.getLogger("dualwalk")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> Config:
    overrides = _overrides(args.set)
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} not found")
        cfg = load_config(args.config, overrides)
    else:
        cfg = parse_config("", "<defaults>", overrides)
    if not cfg.dataset_dir:
        raise UsageError("dataset_dir is not set (config file or --set dataset_dir=...)")
    if not Path(cfg.dataset_dir).is_dir():
        raise UsageError(f"dataset_dir {cfg.dataset_dir} does not exist")
    return cfg


def _dataset(cfg: Config):
    from .kg import load_dataset
    try:
        return load_dataset(cfg.dataset_dir)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def cmd_prepare(args) -> int:
    from .kg import degree_stats
    from .pipeline import prepare, save_prepared
    cfg = _config(args)
    print(dump_config(cfg), end="")
    data = _dataset(cfg)
    prep = prepare(data, cfg)
    mean, median = degree_stats(prep.graph)
    print(f"entities={prep.graph.n_entities} relations={len(data.relations)} "
          f"edges={prep.graph.n_edges()} degree_mean={mean:.4f} degree_median={median:g}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_prepared(prep, out / "prepared.ckpt", cfg.seed)
    print(f"wrote {out / 'prepared.ckpt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import load_prepared, read_metrics, run_training, save_trained, write_metrics
    from .plotting import plot_training
    cfg = _config(args)
    out = Path(args.out)
    prepared = out / "prepared.ckpt"
    if not prepared.is_file():
        raise UsageError(f"{prepared} not found; run prepare first")
    data = _dataset(cfg)
    prep, _ = load_prepared(data, prepared)

    def progress(row):
        print(f"epoch {row['epoch']}: J_giant={row['J_giant']:.4f} J_dwarf={row['J_dwarf']:.4f} "
              f"hit={row['hit_rate']:.3f} lambda={row['mean_lambda']:.3f} "
              f"hits1_valid={row['hits1_valid']:.3f}", flush=True)

    result = run_training(prep, cfg, args.workers, progress)
    save_trained(prep, result, out / "model.ckpt", cfg.seed)
    write_metrics(out / "metrics.csv", result.metrics, cfg)
    if result.metrics:
        plot_training(read_metrics(out / "metrics.csv"), out / "training.png")
    print(f"wrote {out / 'model.ckpt'} and {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .infer import evaluate, write_results
    from .pipeline import load_for_eval
    cfg = _config(args)
    out = Path(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    prep, policy = load_for_eval(cfg.dataset_dir, ckpt, cfg.seed)
    triples = prep.data.test if args.split == "test" else prep.data.valid
    if not triples:
        raise UsageError(f"dataset has no {args.split} triples")
    results = evaluate(policy, triples, prep.data.known_tails(), cfg.beam_size, cfg.path_length, args.workers)
    out.mkdir(parents=True, exist_ok=True)
    summary = write_results(out / "results.csv", results, prep.data.entities)
    for proto in ("raw", "filtered"):
        s = summary[proto]
        print(f"{proto:>8}: MRR={s['MRR']:.4f} Hits@1={s['Hits@1']:.4f} Hits@3={s['Hits@3']:.4f} "
              f"Hits@10={s['Hits@10']:.4f}")
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import AnalysisError, analyze
    from .pipeline import read_metrics
    from .plotting import plot_similarity
    path = Path(args.metrics)
    if not path.is_file():
        raise UsageError(f"metrics file {path} not found")
    m = read_metrics(path)
    if "ESS" not in m or "CSS" not in m:
        raise UsageError(f"{path} has no ESS/CSS columns")
    if len(m["ESS"]) < 10:
        raise UsageError(f"length >= 10 required, {path} has {len(m['ESS'])} epochs")
    try:
        report = analyze(m["ESS"], m["CSS"], args.lags)
    except AnalysisError as exc:
        raise UsageError(str(exc)) from None
    print(report.text())
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "analysis.csv")
    (out / "analysis.txt").write_text(report.text() + "\n")
    plot_similarity(m["ESS"], m["CSS"], report.order, out / "similarity.png")
    print(f"wrote {out / 'analysis.csv'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import shaping_consistency_check
    if args.alpha < 0:
        raise UsageError("--alpha must be nonnegative")
    ident = shaping_consistency_check(args.alpha, args.trials, args.seed, max_states=4, max_horizon=3,
                                      check_identity=True)
    report = shaping_consistency_check(args.alpha, args.trials, args.seed)
    print(report.table())
    print(f"per-policy identity: max error {ident.max_identity_error:.3e} over {args.trials} MDPs")
    print(f"agreement: {100 * report.agreement:.1f}%")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import planted_rule_kg, write_dataset
    split = planted_rule_kg(hops=args.hops, seed=args.seed)
    write_dataset(split, args.out)
    print(f"wrote {args.out}: {len(split.entities)} entities, {len(split.facts)} facts, "
          f"{len(split.train)} train / {len(split.test)} test queries")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualwalk", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", default="run", help="artifact directory (default: run)")
        sp.add_argument("--workers", type=int, default=1)
        return sp

    with_config(sub.add_parser("prepare", help="embed entities and cluster them")).set_defaults(fn=cmd_prepare)
    with_config(sub.add_parser("train", help="train both walkers")).set_defaults(fn=cmd_train)
    ev = with_config(sub.add_parser("eval", help="beam-search evaluation"))
    ev.add_argument("--checkpoint")
    ev.add_argument("--split", choices=("test", "valid"), default="test")
    ev.set_defaults(fn=cmd_eval)

    an = sub.add_parser("analyze", help="stationarity and Granger tests on ESS/CSS")
    an.add_argument("metrics")
    an.add_argument("--lags", type=int, default=2)
    an.add_argument("--out")
    an.set_defaults(fn=cmd_analyze)

    orc = sub.add_parser("oracle", help="reward-shaping consistency report")
    orc.add_argument("--trials", type=int, default=100)
    orc.add_argument("--alpha", type=float, default=0.05)
    orc.add_argument("--seed", type=int, default=0)
    orc.set_defaults(fn=cmd_oracle)

    sy = sub.add_parser("synth", help="write a planted-rule toy dataset")
    sy.add_argument("out")
    sy.add_argument("--hops", type=int, default=3)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("dualwalk: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"dualwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic for any runtime failure
        log.debug("failure", exc_info=True)
        print(f"dualwalk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
