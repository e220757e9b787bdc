"""Command-line entry point: train, eval, verify, bench, compile.

Exit codes: 0 success, 1 bad input or configuration, 2 numeric abort during
training, 3 verification or certification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import automata, verify
from .errors import MinMaxError, NumericError
from .training import ModelConfig, TaskConfig, TrainConfig, evaluate, load_model, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
LOG_ENV = "MINMAX_SEQ_LOG"

log = logging.getLogger("minmax_rnc")


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class EvalOptions:
    checkpoint: str | None = None
    lengths: list[int] = dataclasses.field(default_factory=lambda: [512, 2048, 16384])
    samples: int = 1000
    seed: int = 0


@dataclasses.dataclass
class BenchOptions:
    T: list[int] = dataclasses.field(default_factory=lambda: [8, 16, 32, 64, 128, 256])
    N: list[int] = dataclasses.field(default_factory=lambda: [1, 2, 4, 8])
    mode: list[str] = dataclasses.field(default_factory=lambda: ["sequential", "scan"])
    seed: int = 0


@dataclasses.dataclass
class CompileOptions:
    automaton: str | None = None
    cascade: str | None = None
    max_len: int = 8  # exhaustive words up to this length
    random_words: int = 1000
    random_len: int = 64
    epsilon: float = 0.25
    seed: int = 0


def read_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return data


def build(cls, data: dict, where: str):
    """Instantiate a config dataclass, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(map(str, unknown))}")
    try:
        return cls(**data)
    except (TypeError, ValueError, MinMaxError) as e:
        raise ConfigError(f"invalid {where}: {e}") from e


def train_config(data: dict) -> TrainConfig:
    data = dict(data)
    for key, cls in (("model", ModelConfig), ("task", TaskConfig)):
        if key in data:
            if not isinstance(data[key], dict):
                raise ConfigError(f"'{key}' must be a mapping")
            data[key] = build(cls, data[key], key)
    cfg = build(TrainConfig, data, "train config")
    try:
        cfg.task.spec(8)
    except MinMaxError as e:
        raise ConfigError(f"invalid task: {e}") from e
    return cfg


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _options(cls, args, fields: dict):
    data = read_yaml(args.config) if args.config else {}
    for key, value in fields.items():
        if value is not None:
            data[key] = value
    return build(cls, data, f"{args.command} config")


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    if not args.config:
        raise ConfigError("train needs --config")
    data = read_yaml(args.config)
    for key, value in (("seed", args.seed), ("budget_seconds", args.budget_seconds),
                       ("max_steps", args.max_steps)):
        if value is not None:
            data[key] = value
    cfg = train_config(data)
    out_dir = Path(args.out_dir or "runs/train")
    init = None
    if args.init:
        init, _, _ = load_model(args.init)
    try:
        result = train(cfg, out_dir=out_dir, init=init)
    except NumericError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"steps": result.steps, "stopped": result.stopped,
               "best_val": {str(k): v for k, v in result.best_val.items()},
               "metrics": str(out_dir / "metrics.jsonl"), "checkpoint": str(out_dir / "checkpoint.npz")}
    if cfg.eval_lengths and args.evaluate:
        acc = evaluate(result.model, cfg.task, cfg.eval_lengths, cfg.eval_samples, seed=cfg.seed + 2)
        summary["eval"] = {str(k): v for k, v in acc.items()}
    print(json.dumps(summary))
    return EXIT_OK


def accuracy_table(acc: dict) -> str:
    return "length\taccuracy\n" + "".join(f"{L}\t{a:.6f}\n" for L, a in acc.items())


def cmd_eval(args) -> int:
    opts = _options(EvalOptions, args, {"checkpoint": args.checkpoint, "seed": args.seed,
                                        "samples": args.samples,
                                        "lengths": _int_list(args.lengths) if args.lengths else None})
    if not opts.checkpoint:
        raise ConfigError("eval needs a checkpoint")
    if not opts.lengths or min(opts.lengths) < 1 or opts.samples < 1:
        raise ConfigError("lengths and samples must be positive")
    try:
        model, cfg, _ = load_model(opts.checkpoint)
    except (OSError, KeyError, ValueError, MinMaxError) as e:
        raise ConfigError(f"cannot load checkpoint {opts.checkpoint}: {e}") from e
    table = accuracy_table(evaluate(model, cfg.task, opts.lengths, opts.samples, seed=opts.seed))
    sys.stdout.write(table)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "accuracy.tsv").write_text(table)
    return EXIT_OK


def cmd_verify(args) -> int:
    kwargs = {}
    if args.suite == "automata":
        kwargs = {"workers": args.workers, "inject": args.inject}
    elif args.inject:
        raise ConfigError("--inject applies to the automata suite only")
    res = verify.run_suite(args.suite, seed=args.seed or 0, **kwargs)
    text = res.to_text()
    print(text)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / f"verify_{args.suite}.txt").write_text(text + "\n")
    return EXIT_OK if res.passed else EXIT_VERIFY


def cmd_bench(args) -> int:
    opts = _options(BenchOptions, args, {"T": _int_list(args.T) if args.T else None,
                                         "N": _int_list(args.N) if args.N else None,
                                         "mode": [args.mode] if args.mode else None, "seed": args.seed})
    if min(opts.T) < 1 or min(opts.N) < 1 or set(opts.mode) - {"sequential", "scan"}:
        raise ConfigError("bench needs positive sizes and modes in {sequential, scan}")
    table = verify.bench_table(verify.bench(opts.T, opts.N, opts.mode, opts.seed))
    sys.stdout.write(table)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "bench.tsv").write_text(table)
    return EXIT_OK


def cmd_compile(args) -> int:
    opts = _options(CompileOptions, args, {"automaton": args.automaton, "cascade": args.cascade,
                                           "max_len": args.max_len, "seed": args.seed})
    if (opts.automaton is None) == (opts.cascade is None):
        raise ConfigError("give exactly one of --automaton or --cascade")
    try:
        if opts.automaton is not None:
            ref = automata.load(opts.automaton)
            target = automata.compile_auto(ref, epsilon=opts.epsilon)
            n_sym, summary = ref.alphabet_size, f"class={automata.classify(ref).kind} state_dim={target.state_dim}"
        else:
            ref = automata.load_cascade(opts.cascade)
            target = automata.compile_cascade(ref.levels, ref.n_external, epsilon=opts.epsilon)
            n_sym, summary = ref.n_external, f"levels={len(ref.levels)}"
    except (OSError, ValueError, MinMaxError) as e:
        raise ConfigError(str(e)) from e
    words = list(automata.all_words(n_sym, opts.max_len))
    words += list(automata.random_words(n_sym, opts.random_words, opts.random_len, opts.seed))
    report = automata.certify(target, ref, words, workers=args.workers)
    text = summary + "\n" + report.to_text()
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.txt").write_text(text + "\n")
        if opts.automaton is not None:
            np.savez(out / "unit.npz", reset=target.reset_table, set=target.set_table,
                     state_points=target.state_points, init=target.init_vector)
    return EXIT_OK if report.certified else EXIT_VERIFY


# -- parser --------------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--budget-seconds", type=float)
    common.add_argument("--out-dir")

    p = argparse.ArgumentParser(prog="minmax-rnc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on a synthetic task")
    t.add_argument("--init", help="checkpoint to start from")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--evaluate", action="store_true", help="evaluate at eval_lengths afterwards")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="accuracy per length for a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--lengths", help="comma separated")
    e.add_argument("--samples", type=int)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", parents=[common], help="run an invariant suite")
    v.add_argument("suite", choices=verify.SUITES)
    v.add_argument("--inject", choices=["anchor-spacing"], help="negative control for the automata suite")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", parents=[common], help="operation counts and timings")
    b.add_argument("--T", help="comma separated lengths")
    b.add_argument("--N", help="comma separated state dimensions")
    b.add_argument("--mode", choices=["sequential", "scan"])
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("compile", parents=[common], help="compile and certify a semiautomaton or cascade")
    c.add_argument("--automaton")
    c.add_argument("--cascade")
    c.add_argument("--max-len", type=int)
    c.set_defaults(func=cmd_compile)
    return p


def configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    configure_logging()
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
