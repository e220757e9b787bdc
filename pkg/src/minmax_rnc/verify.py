"""Seeded invariant suites and the operation-count benchmark.

Each suite returns a SuiteResult; the first failing instance is kept in a
JSON-serialisable form so it can be replayed.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .automata import (Semiautomaton, certify, classify, compile_general, compile_identity_reset,
                       compile_permutation, all_words, parity, random_semiautomaton, random_words)
from .autodiff import backward, build_tape, finite_diff_check, loss_and_grad, measure_bound
from .network import (CascadeWeights, Dims, LayerWeights, Linear, MLPWeights, NeuronWeights, cascade_eval, flatten,
                      closure_bound, init_weights, max_state_abs, value_closure_ok)
from .recurrence import RecurrenceInput, op_counter_eval, parallel_rec_eval, seq_rec_eval

SUITES = ("scan", "grad", "automata", "stability")


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: int = 0
    counterexample: dict | None = None
    notes: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def fail(self, example: dict) -> None:
        self.failures += 1
        if self.counterexample is None:
            self.counterexample = example

    def to_text(self) -> str:
        lines = [f"suite={self.name} checks={self.checks} failures={self.failures} "
                 f"passed={str(self.passed).lower()} seconds={self.seconds:.2f}"]
        lines += self.notes
        if self.counterexample is not None:
            lines.append("counterexample " + json.dumps(self.counterexample, default=_jsonable))
        return "\n".join(lines)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def random_recurrence(rng: np.random.Generator, T: int, N: int, scale: float = 10.0) -> RecurrenceInput:
    return RecurrenceInput(rng.uniform(-scale, scale, N), rng.uniform(-scale, scale, (T, N, N)),
                           rng.uniform(-scale, scale, (T, N)))


def verify_scan(seed: int = 0, instances: int = 500, max_T: int = 129, max_N: int = 8) -> SuiteResult:
    res = SuiteResult("scan")
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        T, N = int(rng.integers(1, max_T + 1)), int(rng.integers(1, max_N + 1))
        inp = random_recurrence(rng, T, N)
        res.checks += 1
        if parallel_rec_eval(inp) != seq_rec_eval(inp):
            res.fail({"x_init": inp.x_init.tolist(), "A_seq": inp.A_seq.tolist(), "b_seq": inp.b_seq.tolist()})
    return res


def scalar_cascade(reset: tuple[float, float], set_: tuple[float, float], x0: float) -> CascadeWeights:
    """One unit with d_state 1 and affine R(u) = a u + b, s(u) = c u + d; the output is x_t."""
    def lin(W, b):
        return MLPWeights([Linear(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64))])
    unit = NeuronWeights(lin([[reset[0]]], [reset[1]]), lin([[set_[0]]], [set_[1]]), np.array([float(x0)]))
    return CascadeWeights([LayerWeights([unit], lin([[0.0, 1.0, 0.0]], [0.0]))])


def state_gradient(w: CascadeWeights, u: np.ndarray, t: int) -> float:
    """d x_t / d x_0 for the single scalar unit of ``w`` via the selected derivative."""
    tape = build_tape(w, u)
    result = backward(tape, tape["x", t - 1, 0, 0, 0])
    unit = w.layers[0].units[0]
    off = sum(a.size for a in (unit.reset_mlp.linears[0].W, unit.reset_mlp.linears[0].b,
                               unit.set_mlp.linears[0].W, unit.set_mlp.linears[0].b))
    return float(result.grad_params[off])


def fd_agreement(seed: int = 0, cascades: int = 20, tol: float = 1e-4, epsilon: float = 1e-5,
                 res: SuiteResult | None = None) -> SuiteResult:
    """Finite differences against the selected derivative on small random cascades."""
    res = res or SuiteResult("grad")
    excluded = ties = 0
    worst = 0.0
    for i in range(cascades):
        rng = np.random.default_rng([seed, i])
        dims = Dims(3, 4, 4, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 2, 6, 1)
        w = init_weights(dims, seed * 1000 + i)
        T = int(rng.integers(2, 8))
        u = rng.normal(size=(T, 3))
        target = rng.integers(0, 4, T)
        rep = finite_diff_check(w, u, target, "cross_entropy", epsilon, 20, seed + i)
        res.checks += 1
        excluded += len(rep.excluded)
        ties += rep.tie_count
        worst = max(worst, rep.max_rel_error)
        if rep.max_rel_error > tol:
            res.fail({"check": "finite differences", "cascade": i, "report": rep.to_text()})
    res.notes.append(f"finite differences: max_rel_error={worst:.3e} excluded_params={excluded} "
                     f"tied_nodes={ties}")
    return res


def gradient_bound(seed: int = 0, cascades: int = 20, res: SuiteResult | None = None) -> SuiteResult:
    """L1 norm of the parameter gradient against the measured bound."""
    res = res or SuiteResult("grad")
    ratio = 0.0
    for i in range(cascades):
        rng = np.random.default_rng([seed, i, 1])
        dims = Dims(3, 4, 4, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 2, 6, 1)
        w = init_weights(dims, seed * 1000 + i)
        U = rng.normal(size=(4, int(rng.integers(2, 12)), 3))
        target = rng.integers(0, 4, U.shape[:2])
        mask = np.ones(U.shape[:2], dtype=bool)
        _, grads, *_ = loss_and_grad(w, U, target, mask)
        l1 = float(np.abs(flatten(grads)).sum())
        b = measure_bound(w, U, target, mask).value
        ratio = max(ratio, l1 / b)
        res.checks += 1
        if not l1 <= b:
            res.fail({"check": "gradient bound", "cascade": i, "grad_l1": l1, "bound": b})
    res.notes.append(f"gradient bound: max grad_l1/bound={ratio:.3e}")
    return res


def nonvanishing_gradient(seed: int = 0, long_T: int = 10_000, neurons: int = 50, neuron_T: int = 1000,
                          res: SuiteResult | None = None) -> SuiteResult:
    """d x_t / d x_0 == 1 exactly when x_0 lies between every set value and every reset value."""
    res = res or SuiteResult("grad")
    # constant input 1 with R(u) = u and s(u) = -u keeps any x0 in (-1, 1)
    g = state_gradient(scalar_cascade((1.0, 0.0), (-1.0, 0.0), 0.3), np.ones((long_T, 1)), long_T)
    res.checks += 1
    res.notes.append(f"state gradient at t={long_T}: {g!r}")
    if g != 1.0:
        res.fail({"check": "constant-input state gradient", "state_gradient": g, "t": long_T})
    exact = 0
    for i in range(neurons):
        rng = np.random.default_rng([seed, i, 2])
        reset = (rng.uniform(-1, 1), rng.uniform(1.5, 3.0))
        set_ = (rng.uniform(-1, 1), rng.uniform(-3.0, -1.5))
        t = int(rng.integers(1, neuron_T + 1))
        u = rng.uniform(-1, 1, (t, 1))
        lo, hi = (set_[0] * u + set_[1]).max(), (reset[0] * u + reset[1]).min()
        x0 = float(rng.uniform(lo, hi))
        g = state_gradient(scalar_cascade(reset, set_, x0), u, t)
        res.checks += 1
        exact += g == 1.0
        if g != 1.0:
            res.fail({"check": "state gradient", "reset": reset, "set": set_, "x0": x0,
                      "u": u[:, 0].tolist(), "state_gradient": g})
    res.notes.append(f"random scalar neurons with exact unit state gradient: {exact}/{neurons}")
    return res


def verify_grad(seed: int = 0, cascades: int = 20, tol: float = 1e-4, epsilon: float = 1e-5,
                long_T: int = 10_000, neurons: int = 50, neuron_T: int = 1000) -> SuiteResult:
    res = fd_agreement(seed, cascades, tol, epsilon)
    gradient_bound(seed, cascades, res)
    return nonvanishing_gradient(seed, long_T, neurons, neuron_T, res)


def verify_automata(seed: int = 0, exhaustive_len: int = 8, random_count: int = 20,
                    words: int = 1000, max_len: int = 64, inject: str | None = None,
                    workers: int = 1, fail_fast: bool | None = None) -> SuiteResult:
    """Exhaustive and randomized certification of all three compilers.

    ``inject='anchor-spacing'`` compiles with overlapping anchor intervals
    (a deliberate bug) to exercise the failure path; it implies ``fail_fast``.
    """
    res = SuiteResult("automata")
    fail_fast = inject is not None if fail_fast is None else fail_fast

    def check(unit, a, ws, label):
        if fail_fast and res.failures:
            return
        rep = certify(unit, a, ws, workers=workers)
        res.checks += 1
        if not rep.certified:
            m = rep.mismatches[0]
            res.fail({"case": label, "delta": a.delta.tolist(), "word": list(m.word), "step": m.step,
                      "expected": m.expected, "decoded": m.decoded})

    def ir_unit(a, start=0):
        unit = compile_identity_reset(a, start_state=start)
        if inject == "anchor-spacing" and a.n_states > 1:
            unit.state_points = unit.state_points * 0.1  # intervals now overlap
        return unit

    p = parity()
    check(compile_permutation(p), p, all_words(2, exhaustive_len), "parity/permutation")
    check(compile_general(p), p, all_words(2, exhaustive_len), "parity/general")
    for K in range(1, 4):
        for M in range(1, 4):
            for cols in itertools.product(itertools.product(range(K), repeat=K), repeat=M):
                a = Semiautomaton(K, M, np.array(cols).T)
                if classify(a).kind != "identity-reset":
                    continue
                for start in range(K):
                    check(ir_unit(a, start), a, all_words(M, exhaustive_len), f"identity-reset start={start}")
    compilers = {"identity-reset": ir_unit, "permutation": compile_permutation, "general": compile_general}
    for kind, compiler in compilers.items():
        for i in range(random_count):
            rng = np.random.default_rng([seed, i])
            a = random_semiautomaton(kind, int(rng.integers(1, 7)), int(rng.integers(1, 5)), seed * 100 + i)
            check(compiler(a), a, random_words(a.alphabet_size, words, max_len, seed + i), f"random {kind}")
    return res


def verify_stability(seed: int = 0, T: int = 100_000, calib_T: int = 1000) -> SuiteResult:
    """Value closure and bounded states for a frozen random cascade on long bounded input."""
    res = SuiteResult("stability")
    rng = np.random.default_rng(seed)
    dims = Dims(4, 3, 6, 2, 3, 2, 12, 1)
    w = init_weights(dims, seed)
    u = rng.uniform(-1.0, 1.0, (T, dims.d_in))
    Y, trace = cascade_eval(w, u)
    bound = closure_bound(trace)
    peak = max_state_abs(trace)
    _, early = cascade_eval(w, u[:calib_T])
    res.checks += 3
    if not value_closure_ok(trace):
        res.fail({"check": "value closure", "T": T})
    if peak > bound:
        res.fail({"check": "closure bound", "max_state_abs": peak, "bound": bound})
    if not np.all(np.isfinite(Y)):
        res.fail({"check": "finite outputs"})
    res.notes.append(f"T={T} max_state_abs={peak:.6f} closure_bound={bound:.6f} "
                     f"max_state_abs_first_{calib_T}={max_state_abs(early):.6f} max_output_abs={np.abs(Y).max():.6f}")
    return res


def run_suite(name: str, seed: int = 0, **kwargs) -> SuiteResult:
    fn = {"scan": verify_scan, "grad": verify_grad, "automata": verify_automata,
          "stability": verify_stability}[name]
    t0 = time.monotonic()
    res = fn(seed=seed, **kwargs)
    res.seconds = time.monotonic() - t0
    return res


# -- operation-count benchmark -------------------------------------------------------------

@dataclass
class BenchRow:
    mode: str
    T: int
    N: int
    oplus: int
    odot: int
    seconds: float


def bench(T_list, N_list, modes=("sequential", "scan"), seed: int = 0) -> list[BenchRow]:
    rows = []
    rng = np.random.default_rng(seed)
    for mode in modes:
        for N in N_list:
            for T in T_list:
                inp = random_recurrence(rng, T, N)
                t0 = time.perf_counter()
                _, counts = op_counter_eval(inp, mode)
                rows.append(BenchRow(mode, T, N, counts.oplus_count, counts.odot_count,
                                     time.perf_counter() - t0))
    return rows


def bench_table(rows: list[BenchRow]) -> str:
    lines = ["mode\tT\tN\toplus\todot\tseconds"]
    lines += [f"{r.mode}\t{r.T}\t{r.N}\t{r.oplus}\t{r.odot}\t{r.seconds:.6f}" for r in rows]
    return "\n".join(lines) + "\n"


def calibrate_scan_constant(N: int = 2, T: int = 8, seed: int = 0) -> float:
    """Ratio oplus_count / (T N^3) of the scan on the calibration instance."""
    inp = random_recurrence(np.random.default_rng(seed), T, N)
    return op_counter_eval(inp, "scan")[1].oplus_count / (T * N ** 3)
