"""Command-line surface: gen-data, gen-tree, train, eval, report, run.

Exit codes: 0 ok, 2 config/IO error, 3 LLM error, 4 numeric failure.
Errors are emitted as one JSON object on stderr so callers can parse them.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import DataError, LlmUnavailable, NumericError, TaillightError, TreeError
from .experiment import prepare_assets, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_LLM = 3
EXIT_NUMERIC = 4


def _emit_error(exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    if isinstance(exc, LlmUnavailable):
        return EXIT_LLM
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, TreeError, OSError, json.JSONDecodeError)):
        return EXIT_CONFIG
    if isinstance(exc, TaillightError):
        return EXIT_CONFIG
    raise exc


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    return config


def cmd_gen_data(args) -> int:
    config = _load(args)
    assets = prepare_assets(config)
    print(f"bundle ready under {assets.out_dir}")
    return EXIT_OK


def cmd_gen_tree(args) -> int:
    config = _load(args)
    assets = prepare_assets(config)
    print(f"trees written to {assets.out_dir} ({len(assets.trees)} tasks)")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load(args)
    result = run_experiment(config)
    print(f"training complete; checkpoints under {result.out_dir / 'checkpoints'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load(args)
    result = run_experiment(config)
    print(json.dumps({"a_last": result.metrics["a_last"], "f_avg": result.metrics["f_avg"]}))
    return EXIT_OK


def cmd_report(args) -> int:
    config = _load(args)
    result = run_experiment(config)
    for name in ("metrics.json", "per_class.csv", "weight_centers.csv", "text_similarity.csv"):
        print(result.out_dir / name)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load(args)
    result = run_experiment(config)
    print(json.dumps({"a_last": result.metrics["a_last"], "out_dir": str(result.out_dir)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taillight",
        description="Long-tail class-incremental learning on frozen embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": (cmd_gen_data, "generate the synthetic bundle, fixture and split"),
        "gen-tree": (cmd_gen_tree, "generate and merge the language trees"),
        "train": (cmd_train, "run per-task training and write checkpoints"),
        "eval": (cmd_eval, "train then print final metrics"),
        "report": (cmd_report, "produce metrics.json and the report CSVs"),
        "run": (cmd_run, "full pipeline: data, trees, training, reports"),
    }
    for name, (fn, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the experiment JSON")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--out", default=None, help="override config out_dir")
        cmd.set_defaults(handler=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        return _emit_error(exc)


if __name__ == "__main__":
    sys.exit(main())
