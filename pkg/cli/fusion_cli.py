#!/usr/bin/env python3
"""
Command-line interface for the gatefuse toolkit.

Subcommands: generate, train, evaluate, gradcheck, list-models and compare.
Usage errors exit with status 2; runtime failures print a JSON error object
to stderr and exit with status 1.
"""

import os
import sys
import json
import logging
import argparse
from typing import List, Optional

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.errors import ConfigError, FusionError
from core.utils import error_payload, format_error_message, load_json_file
from dataset.generator import generate, load_generator_spec
from dataset.io import DatasetHeader, read_dataset, write_dataset
from dataset.batching import SPLIT_NAMES
from engine.gradcheck import DEFAULT_TOLERANCE
from engine.nn import count_parameters
from models.registry import REGISTRY, build_model
from training.config import ModelConfig, load_config
from training.gradcheck_suite import run_suite
from training.trainer import compare, evaluate_checkpoint, train

logger = logging.getLogger(__name__)

# Input dimensions used when listing parameter counts (the toy ARF generator preset).
REFERENCE_HEADER = DatasetHeader(task="binary", d1=8, l=12, d2=6, d3_max=32, vocab=200, n_labels=1, n_samples=0)


def generate_cmd(args: argparse.Namespace) -> int:
    """
    Generate a dataset file from a generator spec.

    Args:
        args: The command-line arguments.
    """
    try:
        data = load_json_file(args.spec)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(f"Cannot load generator spec {args.spec}: {e}")
    if args.seed is not None:
        data["seed"] = args.seed
    dataset = generate(load_generator_spec(data))
    write_dataset(dataset, args.out)
    print(json.dumps({"out": str(args.out), "n_samples": len(dataset)}))
    return 0


def train_cmd(args: argparse.Namespace) -> int:
    """
    Train one model and write the run directory.

    Args:
        args: The command-line arguments.
    """
    config = load_config(args.config, seed=args.seed)
    dataset = read_dataset(args.data)
    result = train(config, dataset, args.out)
    test = result.test_report.to_flat_dict() if result.test_report is not None else None
    print(json.dumps({"best_epoch": result.best_epoch, "test": test}, sort_keys=True))
    return 0


def evaluate_cmd(args: argparse.Namespace) -> int:
    """
    Print the MetricsReport of a checkpoint on one split.

    Args:
        args: The command-line arguments.
    """
    dataset = read_dataset(args.data)
    report = evaluate_checkpoint(args.checkpoint, dataset, args.split)
    print(json.dumps(report.to_flat_dict(), sort_keys=True))
    return 0


def gradcheck_cmd(args: argparse.Namespace) -> int:
    """
    Run the finite-difference suite; exit 0 only if every check passes.

    Args:
        args: The command-line arguments.
    """
    results = run_suite(tolerance=args.tolerance)
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name:<40} {result.max_relative_error:.3e}  {status}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} passed (tolerance {args.tolerance:g})")
    return 0 if failed == 0 else 1


def list_models_cmd(args: argparse.Namespace) -> int:
    """
    Print every registry model with its modalities, fusion and toy parameter count.

    Args:
        args: The command-line arguments.
    """
    print(f"{'Model':<20} {'Modalities':<40} {'Fusion':<15} {'Main':<12} {'Parameters':>10}")
    print("-" * 101)
    for name, spec in REGISTRY.items():
        config = ModelConfig(model_name=name, dropout=0.0).bind_dataset(REFERENCE_HEADER)
        params = count_parameters(build_model(config))
        print(f"{name:<20} {'+'.join(spec.modalities):<40} {spec.fusion:<15} {spec.main or '-':<12} {params:>10}")
    return 0


def compare_cmd(args: argparse.Namespace) -> int:
    """
    Train several models on one dataset and print one JSON line per model.

    Args:
        args: The command-line arguments.
    """
    base = load_config(args.config, seed=args.seed)
    dataset = read_dataset(args.data)
    names = [n.strip() for n in args.models.split(",") if n.strip()]
    for record in compare(names, base, dataset, args.out):
        print(json.dumps(record, sort_keys=True))
    return 0


COMMANDS = {
    "generate": generate_cmd,
    "train": train_cmd,
    "evaluate": evaluate_cmd,
    "gradcheck": gradcheck_cmd,
    "list-models": list_models_cmd,
    "compare": compare_cmd,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatefuse", description="Gated multimodal fusion toolkit.")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    generate_parser = subparsers.add_parser("generate", help="Generate a synthetic dataset")
    generate_parser.add_argument("--spec", required=True, help="Generator spec JSON file")
    generate_parser.add_argument("--out", required=True, help="Dataset file to write")
    generate_parser.add_argument("--seed", type=int, help="Override the spec's seed")

    train_parser = subparsers.add_parser("train", help="Train a model")
    train_parser.add_argument("--config", required=True, help="Model config JSON file")
    train_parser.add_argument("--data", required=True, help="Dataset file")
    train_parser.add_argument("--out", required=True, help="Run directory")
    train_parser.add_argument("--seed", type=int, help="Override the config's seed")

    evaluate_parser = subparsers.add_parser("evaluate", help="Evaluate a checkpoint")
    evaluate_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
    evaluate_parser.add_argument("--data", required=True, help="Dataset file")
    evaluate_parser.add_argument("--split", choices=SPLIT_NAMES, default="test", help="Split to evaluate")

    gradcheck_parser = subparsers.add_parser("gradcheck", help="Run the finite-difference gradient suite")
    gradcheck_parser.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="Max relative error")

    subparsers.add_parser("list-models", help="List registry models")

    compare_parser = subparsers.add_parser("compare", help="Train and compare several models")
    compare_parser.add_argument("--config", required=True, help="Base model config JSON file")
    compare_parser.add_argument("--data", required=True, help="Dataset file")
    compare_parser.add_argument("--out", required=True, help="Output directory")
    compare_parser.add_argument("--models", required=True, help="Comma-separated registry names")
    compare_parser.add_argument("--seed", type=int, help="Override the config's seed")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI.

    Returns:
        The process exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    try:
        return COMMANDS[args.command](args)
    except (FusionError, OSError) as e:
        logger.error(format_error_message(e))
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
