"""Latching(4) desk run: train to 0.99 validation accuracy at length 2048, then evaluate at 16384."""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from minmax_rnc.cli import read_yaml, train_config
from minmax_rnc.training import evaluate, model_params, train

ROOT = Path(__file__).resolve().parents[1]


def run(config_path: Path, out_dir: Path, eval_samples: int | None = None) -> dict:
    cfg = train_config(read_yaml(config_path))
    t0 = time.monotonic()
    result = train(cfg, out_dir=out_dir)
    train_s = time.monotonic() - t0
    n_eval = cfg.eval_samples if eval_samples is None else eval_samples
    acc = evaluate(result.model, cfg.task, cfg.eval_lengths, n_eval, seed=cfg.seed + 2)
    summary = {"params": model_params(cfg.model, cfg.task), "steps": result.steps, "stopped": result.stopped,
               "val": {str(k): v for k, v in result.best_val.items()},
               "eval": {str(k): v for k, v in acc.items()}, "eval_samples": n_eval,
               "train_seconds": train_s, "total_seconds": time.monotonic() - t0}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "latching4.yaml")
    p.add_argument("--out-dir", type=Path, default=ROOT / "runs" / "latching4")
    p.add_argument("--eval-samples", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    print(json.dumps(run(args.config, args.out_dir, args.eval_samples), indent=2))


if __name__ == "__main__":
    main()
