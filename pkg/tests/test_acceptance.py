"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary and
to stdout). Criterion 8 trains a model for roughly 15-20 minutes; criterion 9
runs only when MINMAX_EXTENDED=1.
"""
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from minmax_rnc.algebra import MonoidBounds, StepPair, compose, identity_element
from minmax_rnc.autodiff import grad_max, grad_min
from minmax_rnc.automata import compile_permutation, parity
from minmax_rnc.cli import read_yaml, train_config
from minmax_rnc.network import Linear, MLPWeights, NeuronWeights, neuron_step
from minmax_rnc.recurrence import op_counter_eval
from minmax_rnc.training import evaluate, model_params, train
from minmax_rnc.verify import (bench, bench_table, calibrate_scan_constant, fd_agreement, nonvanishing_gradient,
                               random_recurrence, verify_automata, verify_scan, verify_stability)

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "runs" / "acceptance"


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def affine(W, b):
    return MLPWeights([Linear(np.array(W, dtype=float), np.array(b, dtype=float))])


def test_c01_scan_oracle_equivalence():
    t0 = time.monotonic()
    res = verify_scan(seed=0, instances=500, max_T=129, max_N=8)
    dt = time.monotonic() - t0
    record(1, res.passed and res.checks == 500 and dt < 10,
           f"{res.checks} instances, {res.failures} mismatches, {dt:.2f}s (limit 10s)")


def test_c02_worked_examples():
    ex1 = NeuronWeights(affine([[1, 0]], [0]), affine([[0, 1]], [0]), np.array([0.0]))
    x, traj1 = ex1.initial_state, []
    for u in [(0, 2), (7, 0), (5, 0), (0, 1)]:
        x = neuron_step(ex1, x, u)
        traj1.append(x.tolist())
    ex2 = NeuronWeights(affine([[-1], [1], [1], [-1]], [1, 0, 0, 1]), affine([[0], [0]], [0, 0]),
                        np.array([1.0, 0.0]))
    x, traj2 = ex2.initial_state, []
    for u in [[1], [0], [1]]:
        x = neuron_step(ex2, x, u)
        traj2.append(x.tolist())
    unit = compile_permutation(parity(), anchors=(0.0, 1.0), initial_tuple=(1, 0))
    traj3 = unit.run([1, 0, 1]).tolist()
    want2 = [[0, 1], [0, 1], [1, 0]]
    ok = traj1 == [[2], [2], [2], [1]] and traj2 == want2 and traj3 == want2
    record(2, ok, f"example 1 {[v[0] for v in traj1]}, parity neuron {traj2}, compiled unit {traj3}")


def test_c03_monoid_laws():
    bad = 0
    for n in (1, 2, 4):
        rng = np.random.default_rng([3, n])
        for _ in range(10_000):
            A, b = rng.uniform(-10, 10, (3, n, n)), rng.uniform(-10, 10, (3, n))
            M1, M2, M3 = (StepPair(A[i], b[i]) for i in range(3))
            E = identity_element(MonoidBounds.of(A, b), n)
            bad += compose(compose(M1, M2), M3) != compose(M1, compose(M2, M3))
            bad += compose(E, M1) != M1 or compose(M1, E) != M1
    record(3, bad == 0, f"3 x 10^4 triples (n = 1, 2, 4), {bad} violations")


def test_c04_gradient_rules_and_finite_differences():
    bad = checked = 0
    for n in range(1, 6):
        for x in itertools.product(range(n), repeat=n):
            for fn, pick in ((grad_max, max), (grad_min, min)):
                hits = [i for i, v in enumerate(x) if v == pick(x)]
                want = [1 / len(hits) if i in hits else 0.0 for i in range(n)]
                checked += 1
                bad += fn(x).tolist() != want
    special = (grad_max([3.0, 3.0]).tolist() == [0.5, 0.5]
               and abs(np.linalg.norm(grad_max([1.0, 1.0, 1.0])) - 1 / np.sqrt(3)) < 1e-15)
    fd = fd_agreement(seed=0, cascades=20, tol=1e-4, epsilon=1e-5)
    record(4, bad == 0 and special and fd.passed,
           f"{checked} tie patterns, {bad} wrong; {fd.notes[0]} (tol 1e-4)")


def test_c05_nonvanishing_gradient():
    res = nonvanishing_gradient(seed=0, long_T=10_000, neurons=50, neuron_T=1000)
    record(5, res.passed, "; ".join(res.notes))


def test_c06_stability():
    t0 = time.monotonic()
    res = verify_stability(seed=0, T=100_000)
    dt = time.monotonic() - t0
    record(6, res.passed and dt < 60, f"{res.notes[0]}; {dt:.1f}s (limit 60s)")


def test_c07_automaton_realization():
    res = verify_automata(seed=0, exhaustive_len=8, random_count=20, words=1000, max_len=64)
    record(7, res.passed, f"{res.checks} certifications, {res.failures} with mismatches")


@pytest.mark.slow
def test_c08_latching_desk_run():
    cfg = train_config(read_yaml(ROOT / "configs" / "latching4.yaml"))
    n_params = model_params(cfg.model, cfg.task)
    t0 = time.monotonic()
    result = train(cfg, out_dir=OUT / "latching4")
    val = result.best_val.get(2048, 0.0)
    acc = evaluate(result.model, cfg.task, [16384], cfg.eval_samples, seed=cfg.seed + 2)[16384]
    dt = time.monotonic() - t0
    (OUT / "latching4" / "summary.json").write_text(json.dumps(
        {"params": n_params, "steps": result.steps, "val_2048": val, "eval_16384": acc, "seconds": dt}) + "\n")
    ok = (abs(n_params - 125_000) <= 12_500 and cfg.batch_size == 64 and cfg.lr == 1e-3
          and cfg.weight_decay == 1e-4 and max(cfg.train_lengths) <= 512
          and val >= 0.99 and acc >= 0.995 and dt <= 45 * 60)
    record(8, ok, f"{n_params} params, {result.steps} steps, val@2048 {val:.4f} (>= 0.99), "
                  f"eval@16384 {acc:.4f} (>= 0.995) on {cfg.eval_samples} samples, {dt / 60:.1f} min (<= 45)")


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("MINMAX_EXTENDED") != "1", reason="extended tier; set MINMAX_EXTENDED=1")
def test_c09_induction_heads_desk_run():
    import sys
    sys.path.insert(0, str(ROOT / "scripts"))
    from desk_induction_heads16 import sweep
    summary = sweep(ROOT / "configs" / "induction_heads16.yaml", OUT / "induction_heads16", (8, 64))
    best = summary["runs"][str(summary["best_batch_size"])]
    val, ev = min(best["val"].values()), min(best["eval"].values())
    record(9, val >= 0.99 and ev >= 0.99,
           f"best batch size {summary['best_batch_size']}: val {val:.4f}, eval (marker window "
           f"{summary['eval_window']}) {ev:.4f}")


def test_c10_complexity_scaling():
    seq_ok = True
    for N in (1, 2, 3, 4, 8):
        for T in (8, 16, 32, 64):
            _, c = op_counter_eval(random_recurrence(np.random.default_rng([N, T]), T, N), "sequential")
            seq_ok &= c.oplus_count == T * N * N
    c = calibrate_scan_constant(N=2, T=8)
    worst = (0.0, None)
    for N in range(2, 9):
        for T in (16, 32, 64, 128, 256, 512, 1024):
            _, cnt = op_counter_eval(random_recurrence(np.random.default_rng([N, T, 1]), T, N), "scan")
            worst = max(worst, (cnt.oplus_count / (T * N ** 3), (T, N)), key=lambda p: p[0])
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "bench.tsv").write_text(bench_table(bench([8, 64, 512], [1, 2, 4, 8])))
    scan_ok = worst[0] <= c
    record(10, seq_ok and scan_ok,
           f"sequential count T*N^2 exact: {seq_ok}; scan c={c:.4f} calibrated at (N=2, T=8), largest ratio "
           f"{worst[0]:.4f} at (T, N)={worst[1]}; bench table written")
