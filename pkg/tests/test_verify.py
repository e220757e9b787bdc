import numpy as np

from minmax_rnc.recurrence import op_counter_eval
from minmax_rnc.verify import (bench, bench_table, calibrate_scan_constant, random_recurrence, run_suite,
                               verify_automata, verify_grad, verify_scan)


def test_scan_suite_small():
    res = verify_scan(seed=3, instances=50)
    assert res.passed and res.checks == 50


def test_grad_suite_small():
    res = verify_grad(seed=1, cascades=3, long_T=200, neurons=5, neuron_T=50)
    assert res.passed, res.to_text()
    assert any("excluded_params" in n for n in res.notes)


def test_automata_negative_control():
    res = verify_automata(exhaustive_len=3, random_count=2, words=20, max_len=8, inject="anchor-spacing")
    assert not res.passed and res.counterexample is not None
    assert "counterexample" in res.to_text()


def test_stability_suite_small():
    res = run_suite("stability", seed=2, T=2000, calib_T=100)
    assert res.passed and res.seconds >= 0


def test_bench_rows_and_exact_sequential_counts():
    rows = bench([4, 8], [1, 3], modes=("sequential",))
    assert [(r.T, r.N, r.oplus) for r in rows] == [(4, 1, 4), (8, 1, 8), (4, 3, 36), (8, 3, 72)]
    assert bench_table(rows).count("\n") == 5


def test_calibration_constant_is_exact_ratio():
    c = calibrate_scan_constant()
    _, counts = op_counter_eval(random_recurrence(np.random.default_rng(0), 8, 2), "scan")
    assert c == counts.oplus_count / 64
