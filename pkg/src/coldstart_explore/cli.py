"""Command-line entry point.

Subcommands wire the pieces into reproducible runs:

    simulate    draw a synthetic corpus plus a separate ground-truth file
    train       fit the discoverability model on a training-set file
    allocate    build an allocation plan for a corpus with a trained model
    experiment  run the multi-round loop for one or more strategies and seeds
    eval        score a labeled example file with a model and report metrics

Every command writes a manifest.json capturing the resolved configuration,
the root seed, input digests and output digests, so a run can be replayed and
checked byte for byte. Exit codes: 0 ok, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import allocator, core, metrics, model, simulator
from .core import ConfigError, DataError


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    config_snapshot: dict,
    root_seed: int,
    inputs: list[Path],
    outputs: list[Path],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "config": config_snapshot,
        "root_seed": root_seed,
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {str(p): _sha256(p) for p in sorted(outputs)},
        "duration_seconds": time.monotonic() - started,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_alloc_config(args) -> tuple[core.AllocationConfig, core.BucketSchema]:
    raw: dict = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    # CLI flags override file values which override built-in defaults.
    overrides = {
        "total_budget": getattr(args, "budget", None),
        "max_cost": getattr(args, "max_cost", None),
        "min_cap": getattr(args, "min_cap", None),
        "max_cap": getattr(args, "max_cap", None),
        "cf_high": getattr(args, "cf_high", None),
        "cf_low": getattr(args, "cf_low", None),
        "low_region_fraction": getattr(args, "low_fraction", None),
        "unit_cost": getattr(args, "unit_cost", None),
    }
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    config, schema = core.config_from_dict(raw)
    core.validate_config(config, schema)
    return config, schema


def _sim_config(args) -> simulator.SimConfig:
    cfg = simulator.SimConfig(
        seed=args.seed,
        items_per_round=args.items,
        rounds=args.rounds,
        feature_dim=args.feature_dim,
        feature_noise=args.feature_noise,
    )
    return cfg.validate()


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    cfg = _sim_config(args)
    all_latents = []
    all_records = []
    for round_index in range(cfg.rounds):
        latents, records = simulator.generate_corpus(cfg, round_index)
        all_latents.extend(latents)
        all_records.extend(records)
    corpus_path = out / "corpus.jsonl"
    latents_path = out / "latents.jsonl"
    core.save_corpus(all_records, corpus_path)
    simulator.save_latents(all_latents, latents_path)
    _write_manifest(
        out,
        "simulate",
        {
            "items_per_round": cfg.items_per_round,
            "rounds": cfg.rounds,
            "feature_dim": cfg.feature_dim,
            "feature_noise": cfg.feature_noise,
            "archetype_mix": list(cfg.archetype_mix),
        },
        cfg.seed,
        [],
        [corpus_path, latents_path],
        started,
    )
    print(f"wrote {len(all_records)} items to {corpus_path}")
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    _, schema = _load_alloc_config(args)
    examples = model.load_examples(args.train_set)
    params = model.Hyperparams(
        learning_rate=args.learning_rate, epochs=args.epochs, seed=args.seed
    )
    fitted = model.train(examples, schema, params)
    model_path = out / "model.json"
    model.save_model(fitted, model_path)
    _write_manifest(
        out,
        "train",
        {
            "learning_rate": params.learning_rate,
            "epochs": params.epochs,
            "schema_edges": list(schema.edges),
        },
        args.seed,
        [Path(args.train_set)],
        [model_path],
        started,
    )
    print(f"final loss {fitted.meta.final_loss:.6f} on {len(examples)} examples")
    return 0


def cmd_allocate(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    config, schema = _load_alloc_config(args)
    corpus = core.load_corpus(args.corpus)
    fitted = model.load_model(args.model)
    growth = None
    adapted = None
    if args.item_growth is not None or args.traffic_growth is not None:
        if args.item_growth is None or args.traffic_growth is None:
            raise ConfigError("--item-growth and --traffic-growth go together")
        growth = allocator.GrowthStats(
            item_growth=args.item_growth, traffic_growth=args.traffic_growth
        )
        adapted = allocator.adapt_low_fraction(config.low_region_fraction, growth)
    plan = allocator.allocate(corpus, fitted, config, schema, growth)
    plan_path = out / "plan.csv"
    summary_path = out / "summary.json"
    allocator.write_plan_csv(plan, plan_path)
    allocator.write_plan_summary(plan, config, summary_path, adapted)
    _write_manifest(
        out,
        "allocate",
        core.config_to_dict(config, schema),
        args.seed,
        [Path(args.corpus), Path(args.model)],
        [plan_path, summary_path],
        started,
    )
    print(
        f"allocated {plan.total_allocated} impressions across "
        f"{sum(1 for e in plan.entries if e.granted > 0)} items"
    )
    return 0


def _parse_seeds(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",") if s]


def cmd_experiment(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    config, schema = _load_alloc_config(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for strategy in strategies:
        if strategy not in simulator.STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
    seeds = _parse_seeds(args.seeds) if args.seeds else [args.seed]
    params = model.Hyperparams(
        learning_rate=args.learning_rate, epochs=args.epochs, seed=args.seed
    )
    outputs = []
    totals: dict[str, list[int]] = {s: [] for s in strategies}
    for seed in sorted(seeds):
        for strategy in strategies:
            sim_cfg = simulator.SimConfig(
                seed=seed,
                items_per_round=args.items,
                rounds=args.rounds,
                feature_dim=args.feature_dim,
                feature_noise=args.feature_noise,
            ).validate()
            report = simulator.run_experiment(sim_cfg, config, schema, params, strategy)
            json_path = out / f"report_{strategy}_seed{seed}.json"
            csv_path = out / f"report_{strategy}_seed{seed}.csv"
            simulator.write_report_json(report, json_path)
            simulator.write_report_csv(report, csv_path)
            outputs.extend([json_path, csv_path])
            totals[strategy].append(report.total_discovered)

    comparison: dict = {
        "seeds": sorted(seeds),
        "strategies": strategies,
        "total_discovered": {s: totals[s] for s in strategies},
        "mean_total_discovered": {
            s: sum(totals[s]) / len(totals[s]) for s in strategies
        },
    }
    if {"uniform", "model", "oracle"} <= set(strategies):
        wins = sum(
            1
            for u, m, o in zip(totals["uniform"], totals["model"], totals["oracle"])
            if u <= m <= o
        )
        comparison["ordering_wins"] = wins
        mean_u = comparison["mean_total_discovered"]["uniform"]
        mean_m = comparison["mean_total_discovered"]["model"]
        comparison["model_gain_over_uniform"] = (
            (mean_m - mean_u) / mean_u if mean_u else 0.0
        )
    comparison_path = out / "comparison.json"
    comparison_path.write_text(
        json.dumps(comparison, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    outputs.append(comparison_path)
    _write_manifest(
        out,
        "experiment",
        {
            "alloc": core.config_to_dict(config, schema),
            "items_per_round": args.items,
            "rounds": args.rounds,
            "strategies": strategies,
            "seeds": sorted(seeds),
            "learning_rate": params.learning_rate,
            "epochs": params.epochs,
        },
        args.seed,
        [],
        outputs,
        started,
    )
    for strategy in strategies:
        print(
            f"{strategy}: mean total discovered "
            f"{comparison['mean_total_discovered'][strategy]:.1f}"
        )
    return 0


def cmd_eval(args) -> int:
    started = time.monotonic()
    out = _out_dir(args)
    fitted = model.load_model(args.model)
    examples = model.load_examples(args.examples)
    if not examples:
        raise DataError("no examples to evaluate")
    scored = [
        metrics.ScoredLabel(
            score=model.predict(fitted, ex.features, ex.bucket),
            label=ex.label,
            bucket=ex.bucket,
        )
        for ex in examples
    ]
    report = metrics.metrics_report(scored, threshold=args.threshold)
    metrics_path = out / "metrics.json"
    curve_path = out / "pr_curve.csv"
    metrics.write_metrics_json(report, metrics_path)
    metrics.write_pr_curve_csv(report, curve_path)
    _write_manifest(
        out,
        "eval",
        {"threshold": args.threshold},
        args.seed,
        [Path(args.model), Path(args.examples)],
        [metrics_path, curve_path],
        started,
    )
    print(f"auc {report.auc:.4f} pr_auc {report.pr_auc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldstart-explore",
        description="Exploration traffic allocation for cold-start items.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with allocation config values")
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--out-dir", default="out", help="output directory")

    def add_alloc_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--budget", type=int, help="total traffic budget")
        p.add_argument("--max-cost", type=float, dest="max_cost")
        p.add_argument("--min-cap", type=int, dest="min_cap")
        p.add_argument("--max-cap", type=int, dest="max_cap")
        p.add_argument("--cf-high", type=float, dest="cf_high")
        p.add_argument("--cf-low", type=float, dest="cf_low")
        p.add_argument("--low-fraction", type=float, dest="low_fraction")
        p.add_argument("--unit-cost", type=float, dest="unit_cost")

    def add_sim_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--items", type=int, default=1000, help="items per round")
        p.add_argument("--rounds", type=int, default=3)
        p.add_argument("--feature-dim", type=int, default=8, dest="feature_dim")
        p.add_argument(
            "--feature-noise", type=float, default=0.5, dest="feature_noise"
        )

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--learning-rate", type=float, default=0.05, dest="learning_rate"
        )
        p.add_argument("--epochs", type=int, default=1000)

    p_sim = sub.add_parser("simulate", help="generate a synthetic corpus")
    add_common(p_sim)
    add_sim_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train the discoverability model")
    add_common(p_train)
    add_alloc_flags(p_train)
    add_train_flags(p_train)
    p_train.add_argument("--train-set", required=True, dest="train_set")
    p_train.set_defaults(func=cmd_train)

    p_alloc = sub.add_parser("allocate", help="build an allocation plan")
    add_common(p_alloc)
    add_alloc_flags(p_alloc)
    p_alloc.add_argument("--corpus", required=True)
    p_alloc.add_argument("--model", required=True)
    p_alloc.add_argument("--item-growth", type=float, dest="item_growth")
    p_alloc.add_argument("--traffic-growth", type=float, dest="traffic_growth")
    p_alloc.set_defaults(func=cmd_allocate)

    p_exp = sub.add_parser("experiment", help="run the multi-round loop")
    add_common(p_exp)
    add_alloc_flags(p_exp)
    add_sim_flags(p_exp)
    add_train_flags(p_exp)
    p_exp.add_argument(
        "--strategies", default="uniform,model,oracle", help="comma-separated"
    )
    p_exp.add_argument("--seeds", help="either lo:hi (half-open) or a comma list")
    p_exp.set_defaults(func=cmd_experiment)

    p_eval = sub.add_parser("eval", help="score labeled examples with a model")
    add_common(p_eval)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--examples", required=True)
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
