"""Command-line entry point for the full experiment lifecycle.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric/check failure.
Every command writes a ``<output>.manifest.json`` with the configuration
hash, seed, and package version next to its primary output, and the same
inputs plus seed always produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from . import __version__
from .checkpoint import load_model, save_model
from .config import load_experiment_config
from .datagen import generate, load_gen_config, read_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    FoldError,
    NumericError,
    StarError,
)
from .gradcheck import check_model, run_all, tiny_model_config
from .metrics import pcoc_scatter_svg
from .model import StarModel
from .serve import fold, load_folded, save_folded, score_file
from .train import evaluate_model, run_ablation, train_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

GRADCHECK_TOLERANCE = 1e-4


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(primary_output: str, command: str, seed,
                    inputs: dict[str, str], outputs: list[str]):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "inputs": {name: _sha256_file(path) for name, path in inputs.items()},
        "outputs": sorted(outputs),
    }
    with open(primary_output + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    config = load_gen_config(args.config)
    result = generate(config, args.out)
    _write_manifest(args.out, "gen-data", config.seed,
                    {"config": args.config}, [args.out])
    for p in sorted(result.realized_ctr):
        print(f"domain {p}: realized_ctr={result.realized_ctr[p]:.5f} "
              f"target={config.profiles[p - 1].base_ctr:.5f}")
    print(f"wrote {config.n_examples} examples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_experiment_config(args.config, _overrides(args.set))
    examples = read_dataset(args.data)
    log_path = args.checkpoint_out + ".log"
    with open(log_path, "w", encoding="ascii", newline="\n") as log:
        result = train_model(config, examples, log=log)
    save_model(result.model, args.checkpoint_out)
    _write_manifest(args.checkpoint_out, "train", config.seed,
                    {"config": args.config, "data": args.data},
                    [args.checkpoint_out, log_path])
    print(f"trained {result.steps} steps, final epoch mean loss "
          f"{result.final_epoch_loss:.6f}")
    print(f"checkpoint: {args.checkpoint_out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    examples = read_dataset(args.data)
    report = evaluate_model(model, examples)
    kv_path = args.report_out
    json_path = args.report_out + ".json"
    with open(kv_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(report.to_kv_text())
    with open(json_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(report.to_json())
    outputs = [kv_path, json_path]
    if args.svg:
        with open(args.svg, "w", encoding="ascii", newline="\n") as fh:
            fh.write(pcoc_scatter_svg(report.per_domain_pcoc))
        outputs.append(args.svg)
    _write_manifest(kv_path, "eval", model.config.seed,
                    {"checkpoint": args.checkpoint, "data": args.data},
                    outputs)
    print(report.to_kv_text(), end="")
    return EXIT_OK


def cmd_ablation(args) -> int:
    config = load_experiment_config(args.config, _overrides(args.set))
    examples = read_dataset(args.data)
    if args.eval_data:
        eval_examples = read_dataset(args.eval_data)
        train_examples = examples
    else:
        split = int(len(examples) * 0.8)
        train_examples = examples[:split]
        eval_examples = examples[split:]
    if not eval_examples:
        raise DataError("no evaluation examples available for the ablation")
    rows = run_ablation(config, train_examples, eval_examples)
    lines = [row.format() for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        inputs = {"config": args.config, "data": args.data}
        if args.eval_data:
            inputs["eval_data"] = args.eval_data
        _write_manifest(args.out, "ablation", config.seed, inputs, [args.out])
    print(text, end="")
    return EXIT_OK


def cmd_fold(args) -> int:
    model = load_model(args.checkpoint)
    if not isinstance(model, StarModel):
        raise ConfigError(
            f"fold requires a star checkpoint, got variant "
            f"{model.config.variant!r}"
        )
    folded = fold(model)
    save_folded(folded, args.folded_out)
    _write_manifest(args.folded_out, "fold", model.config.seed,
                    {"checkpoint": args.checkpoint}, [args.folded_out])
    print(f"folded {folded.num_domains} domains into {args.folded_out}")
    return EXIT_OK


def cmd_score(args) -> int:
    folded = load_folded(args.folded)
    summary = score_file(folded, args.data, args.predictions_out)
    _write_manifest(args.predictions_out, "score", None,
                    {"folded": args.folded, "data": args.data},
                    [args.predictions_out])
    print(summary.message())
    if summary.n_skipped:
        raise DataError(summary.message())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all()
    if args.config:
        config = load_experiment_config(args.config, _overrides(args.set))
        name = f"model_{config.variant}_{config.normalizer}"
        results[name] = check_model(tiny_model_config(
            config.variant, config.normalizer, config.aux))
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name}\t{err:.3e}\t{status}")
    if worst >= GRADCHECK_TOLERANCE:
        raise NumericError(f"max gradient error {worst:.3e} >= "
                           f"{GRADCHECK_TOLERANCE}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starctr",
        description="Multi-domain CTR experiments: generate, train, evaluate, "
                    "ablate, fold, score, gradcheck.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("config")
    p.add_argument("out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a dataset")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("checkpoint_out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("report_out")
    p.add_argument("--svg", help="also write a per-domain PCOC scatter SVG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation",
                       help="train and score the architecture/normalizer grid")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("--eval-data")
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("fold", help="pre-compute per-domain serving weights")
    p.add_argument("checkpoint")
    p.add_argument("folded_out")
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("score", help="batch-score a dataset with a folded model")
    p.add_argument("folded")
    p.add_argument("data")
    p.add_argument("predictions_out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every backward pass")
    p.add_argument("config", nargs="?")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FoldError) as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except StarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
