"""Command-line surface.

Subcommands: gen-data, train, eval, compare, report. One JSON config file
describes an experiment; flags override only paths, method, seed, and the
worker count. Exit codes are a stable contract: 0 success, 2 usage or
config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from .config import (
    ExperimentConfig,
    config_hash,
    default_experiment_config,
    load_experiment_config,
    resolved_dict,
)
from .core import AttributeSpace, DatasetSplit
from .dataset import generate_dataset, load_split, save_split, split_digest
from .environment import Environment, RoleplayerConfig, ScorerConfig
from .errors import NumericsError, TogateError
from .evaluation import EvalConfig, evaluate_checkpoint
from .trajectory import save_dp
from .training import (
    METHODS,
    list_checkpoints,
    load_checkpoint,
    load_manifest,
    load_metrics,
    save_run,
    train_run,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return default_experiment_config()
    return load_experiment_config(path)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    split = generate_dataset(
        seed=config.dataset.seed,
        space=config.space,
        num_personas=config.dataset.num_personas,
        num_tasks=config.dataset.num_tasks,
        relevant_per_task=config.dataset.relevant_per_task,
        train_fraction=config.dataset.train_fraction,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split_path = out / "split.jsonl"
    save_split(split, split_path)
    manifest = {
        "version": 1,
        "kind": "data-manifest",
        "config": resolved_dict(config),
        "config_hash": config_hash(config),
        "split_digest": split_digest(split),
        "counts": {
            "personas": len(split.personas),
            "tasks": len(split.tasks),
            "train_pairs": len(split.train),
            "test_pairs": len(split.test),
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {split_path} ({len(split.train)} train pairs, {len(split.test)} test pairs)")
    return EXIT_OK


def _check_space(split: DatasetSplit, config: ExperimentConfig) -> None:
    if split.space != config.space:
        raise TogateError(
            f"dataset attribute space ({split.space.num_attributes} attributes, "
            f"{split.space.num_values} values) does not match the config "
            f"({config.space.num_attributes}, {config.space.num_values})"
        )


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data_path = Path(args.data)
    if not data_path.exists():
        print(f"error: dataset not found: {data_path}", file=sys.stderr)
        return EXIT_CONFIG
    split = load_split(data_path)
    _check_space(split, config)

    env = config.environment()
    train_config = config.train_config(method=args.method, seed=args.seed, workers=args.workers)

    run_name = args.run_name or (
        time.strftime("%Y%m%d-%H%M%S") + f"-{train_config.method}-{config_hash(config)[:8]}"
    )
    run_dir = Path(args.out) / run_name

    artifacts = train_run(split, env, train_config)
    artifacts.manifest.update(
        {
            "experiment_config": resolved_dict(config),
            "config_hash": config_hash(config),
            "data_path": str(data_path),
        }
    )
    save_run(artifacts, run_dir)
    if args.dump_dp:
        for iteration, dp in sorted(artifacts.dp_by_iteration.items()):
            save_dp(dp, run_dir / "dp" / f"dp_iteration_{iteration:03d}.jsonl")
    for row in artifacts.metrics:
        mark = f"iter {row['iteration']}"
        clar = row.get("clarification_normalized")
        win = row.get("win_average")
        clar_text = f"clarification={clar:.3f}" if clar is not None else "clarification=n/a"
        win_text = f"win={win:.2f}" if win is not None else "win=n/a"
        print(f"[{train_config.method}] {mark}: {clar_text} {win_text}")
    print(f"run written to {run_dir}")
    return EXIT_OK


def _env_from_manifest(manifest: dict) -> Environment:
    env = manifest["environment"]
    return Environment(
        AttributeSpace(**env["space"]),
        ScorerConfig(**env["scorer"]),
        RoleplayerConfig(**env["roleplayer"]),
    )


def _eval_config_from_manifest(manifest: dict) -> EvalConfig:
    return EvalConfig(**manifest["train_config"]["eval"])


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    manifest = load_manifest(run_dir)
    available = list_checkpoints(run_dir)
    if not available:
        print(f"error: no checkpoints under {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    if args.checkpoint == "all":
        selected = available
    elif args.checkpoint == "last":
        selected = [available[-1]]
    else:
        try:
            index = int(args.checkpoint)
        except ValueError:
            print(
                f"error: --checkpoint must be an index, 'last', or 'all'; got {args.checkpoint!r}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        if index not in available:
            print(
                f"error: checkpoint {index} not found; available: {available}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        selected = [index]

    data_path = Path(args.data) if args.data else Path(manifest["data_path"])
    split = load_split(data_path)
    env = _env_from_manifest(manifest)
    eval_config = _eval_config_from_manifest(manifest)
    baseline = load_checkpoint(run_dir, 0)

    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for index in selected:
        checkpoint = load_checkpoint(run_dir, index)
        record = evaluate_checkpoint(checkpoint, split, env, eval_config, baseline)
        rows.append({"iteration": index, **record})
        with open(eval_dir / f"checkpoint_{index:03d}_winrate.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"version": 1, "kind": "win-rate-report", "iteration": index, **record}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        _write_verdict_log(eval_dir / f"checkpoint_{index:03d}_verdicts.jsonl", checkpoint, baseline, split, env, eval_config)
        print(
            f"checkpoint {index}: clarification_normalized={record['clarification_normalized']:.3f} "
            f"win A-B={record['win_ab']:.2f} B-A={record['win_ba']:.2f} avg={record['win_average']:.2f}"
        )
    _write_eval_csv(eval_dir / "summary.csv", manifest["method"], rows)
    return EXIT_OK


def _write_verdict_log(path, checkpoint, baseline, split, env, eval_config) -> None:
    from .evaluation import DeterministicJudge, dual_pass_win_rate, eval_responses

    trained = eval_responses(checkpoint, split, env, eval_config)
    base = eval_responses(baseline, split, env, eval_config)
    golds = [split.gold_for(*key) for key in sorted(split.test)]
    report = dual_pass_win_rate(DeterministicJudge(eval_config.wrong_penalty), trained, base, golds)
    pairs = sorted(split.test)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"version": 1, "kind": "verdict-log"}, sort_keys=True, separators=(",", ":")) + "\n")
        for verdict, (task_id, persona_id) in zip(report.verdicts, pairs):
            row = {"task_id": task_id, "persona_id": persona_id, **verdict}
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


_CSV_FIELDS = [
    "method",
    "iteration",
    "clarification_raw",
    "clarification_normalized",
    "win_ab",
    "win_ba",
    "win_average",
]


def _write_eval_csv(path, method: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({"method": method, **{k: row.get(k) for k in _CSV_FIELDS if k != "method"}})


def cmd_compare(args: argparse.Namespace) -> int:
    rows = []
    for run in args.runs:
        header, metrics = load_metrics(run)
        final = metrics[-1]
        if "win_average" not in final:
            print(f"error: {run} has no evaluation results in its final iteration", file=sys.stderr)
            return EXIT_CONFIG
        # the average column is recomputed on read, never trusted
        recomputed = (final["win_ab"] + final["win_ba"]) / 2.0
        if final["win_average"] != recomputed:
            print(
                f"error: {run}: stored win average {final['win_average']} is not "
                f"(A-B + B-A)/2 = {recomputed}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        rows.append(
            {
                "method": header["method"],
                "A-B": final["win_ab"],
                "B-A": final["win_ba"],
                "Average": final["win_average"],
            }
        )
    width = max(len(r["method"]) for r in rows)
    print(f"{'Models'.ljust(width)}  {'A-B':>7}  {'B-A':>7}  {'Average':>7}")
    for row in rows:
        print(
            f"{row['method'].ljust(width)}  {row['A-B']:>7.2f}  {row['B-A']:>7.2f}  {row['Average']:>7.2f}"
        )
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["method", "A-B", "B-A", "Average"])
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    header, metrics = load_metrics(run_dir)
    out_path = Path(args.out) if args.out else run_dir / "report.csv"
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for row in metrics:
            writer.writerow(
                {"method": header["method"], **{k: row.get(k) for k in _CSV_FIELDS if k != "method"}}
            )
    print(f"report written to {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="togate",
        description="Preference elicitation through clarifying dialogue on a synthetic game.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a dataset split from a config")
    gen.add_argument("--config", help="experiment config JSON (defaults apply if omitted)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="train a method and write a run directory")
    train.add_argument("--config", help="experiment config JSON")
    train.add_argument("--data", required=True, help="path to split.jsonl")
    train.add_argument("--out", required=True, help="directory to create the run under")
    train.add_argument("--method", choices=METHODS, help="override the config's method")
    train.add_argument("--seed", type=int, help="override the config's training seed")
    train.add_argument("--workers", type=int, default=1, help="exploration worker threads")
    train.add_argument("--run-name", help="fixed run directory name (default: timestamp + config hash)")
    train.add_argument("--dump-dp", action="store_true", help="dump the per-iteration contrastive datasets")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate checkpoints of an existing run")
    ev.add_argument("--run", required=True, help="run directory")
    ev.add_argument("--checkpoint", default="all", help="checkpoint index, 'last', or 'all'")
    ev.add_argument("--data", help="override the dataset path recorded in the manifest")
    ev.set_defaults(func=cmd_eval)

    comp = sub.add_parser("compare", help="tabulate final win rates of several runs")
    comp.add_argument("runs", nargs="+", help="run directories")
    comp.add_argument("--csv", help="also write the table as CSV")
    comp.set_defaults(func=cmd_compare)

    rep = sub.add_parser("report", help="per-iteration metric curves as CSV")
    rep.add_argument("--run", required=True, help="run directory")
    rep.add_argument("--out", help="CSV output path (default: <run>/report.csv)")
    rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (TogateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
