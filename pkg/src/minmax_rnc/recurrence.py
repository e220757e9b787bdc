"""Sequential and parallel-scan evaluation of the MinMax recurrence.

    x_t = (A_t (x) x_{t-1}) (+) b_t,   t = 1..T

``parallel_scan`` follows the recursive pairing of the classic exclusive
scan: adjacent steps are composed pairwise, the half-length sequence is
scanned recursively, and odd positions are patched up with one extra
composition. Each "in parallel for" block is executed as a single vectorised
numpy operation over the loop index, so the combine tree (and therefore
every intermediate) is fixed and the result is bit-identical to the
sequential loop.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .algebra import MonoidBounds, OpCounter, StepPair, as_matrix
from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class RecurrenceInput:
    x_init: np.ndarray  # (N,)
    A_seq: np.ndarray  # (T, N, N)
    b_seq: np.ndarray  # (T, N)

    def __post_init__(self):
        x = as_matrix(self.x_init, "x_init")
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise ShapeError(f"x_init must be a vector, got {x.shape}")
            x = x[:, 0]
        A = np.asarray(self.A_seq, dtype=np.float64)
        b = np.asarray(self.b_seq, dtype=np.float64)
        if b.ndim == 3 and b.shape[-1] == 1:
            b = b[..., 0]
        n = x.shape[0]
        if A.ndim != 3 or A.shape[1:] != (n, n):
            raise ShapeError(f"A_seq must have shape (T, {n}, {n}), got {A.shape}")
        if b.ndim != 2 or b.shape != (A.shape[0], n):
            raise ShapeError(f"b_seq must have shape ({A.shape[0]}, {n}), got {b.shape}")
        if A.shape[0] < 1:
            raise ShapeError("need at least one step")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise DomainError("recurrence entries must be finite")
        object.__setattr__(self, "x_init", x)
        object.__setattr__(self, "A_seq", A)
        object.__setattr__(self, "b_seq", b)

    @property
    def T(self) -> int:
        return self.A_seq.shape[0]

    @property
    def N(self) -> int:
        return self.x_init.shape[0]

    def bounds(self) -> MonoidBounds:
        return MonoidBounds.of(self.x_init, self.A_seq, self.b_seq)


@dataclass(frozen=True)
class StateTrajectory:
    states: np.ndarray  # (T, N): x_1..x_T

    def __eq__(self, other):
        if not isinstance(other, StateTrajectory):
            return NotImplemented
        return np.array_equal(self.states, other.states)

    __hash__ = None


# -- batched monoid primitives (leading axis = independent instances) --------

def _mm_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # A: (K, m, p), B: (K, p, n) -> (K, m, n)
    return np.max(np.minimum(A[:, :, :, None], B[:, None, :, :]), axis=2)


def _compose_batch(A1, b1, A2, b2, counter: OpCounter | None = None):
    """Vectorised <A1,b1> * <A2,b2> over the leading axis."""
    K, n, _ = A1.shape
    A = _mm_batch(A2, A1)
    b = np.maximum(np.max(np.minimum(A2, b1[:, None, :]), axis=2), b2)
    if counter is not None:
        # A2 (x) A1, A2 (x) b1, then (+) b2
        counter.add(oplus=K * (n * n * (n - 1) + n * (n - 1) + n),
                    odot=K * (n * n * n + n * n))
    return A, b


def _apply_batch(A, b, x, counter: OpCounter | None = None):
    """Vectorised (A (x) x) (+) b; x broadcasts against the leading axis."""
    K, n, _ = A.shape
    if x.ndim == 1:
        x = x[None, :]
    out = np.maximum(np.max(np.minimum(A, x[:, None, :]), axis=2), b)
    if counter is not None:
        counter.add(oplus=K * n * n, odot=K * n * n)
    return out


def _identity_batch(bounds: MonoidBounds, n: int):
    E = np.full((1, n, n), bounds.v_min)
    idx = np.arange(n)
    E[0, idx, idx] = bounds.v_max
    return E, np.full((1, n), bounds.v_min)


# -- public evaluation ---------------------------------------------------------

def seq_rec_eval(inp: RecurrenceInput, counter: OpCounter | None = None) -> StateTrajectory:
    A, b = inp.A_seq, inp.b_seq
    T, N = inp.T, inp.N
    out = np.empty((T, N))
    x = inp.x_init
    for t in range(T):
        x = np.maximum(np.max(np.minimum(A[t], x[None, :]), axis=1), b[t])
        out[t] = x
    if counter is not None:
        # per state component: N (.) and N (+) (the N-term max plus the offset)
        counter.add(oplus=T * N * N, odot=T * N * N)
    return StateTrajectory(out)


def _scan_arrays(A, B, bounds: MonoidBounds, counter: OpCounter | None):
    T, N = B.shape
    if T == 1:
        return _identity_batch(bounds, N)
    m, ell = T // 2, (T + 1) // 2
    X = np.empty((ell, N, N))
    Y = np.empty((ell, N))
    X[:m], Y[:m] = _compose_batch(A[0:2 * m:2], B[0:2 * m:2], A[1:2 * m:2], B[1:2 * m:2], counter)
    if T % 2 == 1:
        X[ell - 1], Y[ell - 1] = A[T - 1], B[T - 1]
    Z, W = _scan_arrays(X, Y, bounds, counter)
    C = np.empty((T, N, N))
    D = np.empty((T, N))
    C[0::2], D[0::2] = Z[: (T + 1) // 2], W[: (T + 1) // 2]
    odd = np.arange(1, T, 2)
    if odd.size:
        k = (odd - 1) // 2
        C[1::2], D[1::2] = _compose_batch(Z[k], W[k], A[odd - 1], B[odd - 1], counter)
    return C, D


def parallel_scan(A_seq, b_seq, bounds: MonoidBounds,
                  counter: OpCounter | None = None) -> list[StepPair]:
    """Exclusive prefixes: out[t] = M_1 * ... * M_t * E, out[0] = E."""
    A = np.asarray(A_seq, dtype=np.float64)
    B = np.asarray(b_seq, dtype=np.float64)
    if A.ndim != 3 or B.ndim != 2 or A.shape[0] != B.shape[0] or A.shape[1:] != (B.shape[1],) * 2:
        raise ShapeError(f"incompatible shapes {A.shape}, {B.shape}")
    if A.shape[0] < 1:
        raise ShapeError("need at least one step")
    if not (bounds.contains(A) and bounds.contains(B)):
        raise DomainError(f"entries fall outside [{bounds.v_min}, {bounds.v_max}]")
    C, D = _scan_arrays(A, B, bounds, counter)
    return [StepPair(C[t], D[t]) for t in range(C.shape[0])]


def parallel_rec_eval(inp: RecurrenceInput, counter: OpCounter | None = None) -> StateTrajectory:
    A, B, x0 = inp.A_seq, inp.b_seq, inp.x_init
    flat = np.concatenate([x0, A.ravel(), B.ravel()])
    bounds = MonoidBounds(float(flat.min()), float(flat.max()))
    if counter is not None:
        counter.add(oplus=flat.size - 1, odot=flat.size - 1)
    C, D = _scan_arrays(A, B, bounds, counter)
    Z, W = _compose_batch(C, D, A, B, counter)
    return StateTrajectory(_apply_batch(Z, W, x0, counter))


@dataclass(frozen=True)
class OpCounts:
    oplus_count: int
    odot_count: int


def op_counter_eval(inp: RecurrenceInput,
                    mode: Literal["sequential", "scan"] = "sequential"):
    counter = OpCounter()
    if mode == "sequential":
        traj = seq_rec_eval(inp, counter)
    elif mode == "scan":
        traj = parallel_rec_eval(inp, counter)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return traj, OpCounts(counter.oplus, counter.odot)


def rec_eval_batched(x_init: np.ndarray, A: np.ndarray, b: np.ndarray,
                     mode: Literal["sequential", "parallel"] = "sequential") -> np.ndarray:
    """Evaluate many independent recurrences at once.

    x_init: (K, N), A: (K, T, N, N), b: (K, T, N) -> states (K, T, N).
    Sequential mode steps all K instances together; parallel mode runs the
    scan per instance. Both give the same bits as ``seq_rec_eval``.
    """
    K, T, N = b.shape
    if mode == "sequential":
        out = np.empty((K, T, N))
        x = x_init
        for t in range(T):
            x = np.maximum(np.max(np.minimum(A[:, t], x[:, None, :]), axis=2), b[:, t])
            out[:, t] = x
        return out
    if mode == "parallel":
        return np.stack([
            parallel_rec_eval(RecurrenceInput(x_init[k], A[k], b[k])).states for k in range(K)
        ])
    raise ValueError(f"unknown mode {mode!r}")
