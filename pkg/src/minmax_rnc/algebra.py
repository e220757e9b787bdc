"""MinMax algebra: a (+) b = max(a, b), a (.) b = min(a, b).

Matrices are plain float64 numpy arrays. Vectors may be given either as 1-D
arrays or as (n, 1) column matrices; results keep the caller's layout.
Every operation is exact: min and max only ever select one of their inputs,
so no rounding happens anywhere in this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class OpCounter:
    """Tally of scalar (+)/(.) operations, filled in by the ``counter=`` hooks."""

    oplus: int = 0
    odot: int = 0

    def add(self, oplus: int = 0, odot: int = 0) -> None:
        self.oplus += int(oplus)
        self.odot += int(odot)


def _check_scalar(a: float) -> float:
    a = float(a)
    if not np.isfinite(a):
        raise DomainError(f"non-finite scalar {a!r}")
    return a


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite float64 array (1-D or 2-D)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ShapeError(f"{name}: expected 1-D or 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: entries must be finite")
    return arr


def oplus(a: float, b: float) -> float:
    return max(_check_scalar(a), _check_scalar(b))


def odot(a: float, b: float) -> float:
    return min(_check_scalar(a), _check_scalar(b))


def mm_matmul(A, B, counter: OpCounter | None = None) -> np.ndarray:
    """MinMax matrix product: C[i, j] = max_k min(A[i, k], B[k, j])."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.ndim != 2:
        raise ShapeError(f"A must be 2-D, got shape {A.shape}")
    vector = B.ndim == 1
    B2 = B[:, None] if vector else B
    if A.shape[1] != B2.shape[0]:
        raise ShapeError(f"inner dimensions differ: {A.shape} x {B.shape}")
    m, p = A.shape
    n = B2.shape[1]
    C = np.max(np.minimum(A[:, :, None], B2[None, :, :]), axis=1)
    if counter is not None:
        counter.add(oplus=m * n * (p - 1), odot=m * n * p)
    return C[:, 0] if vector else C


@dataclass(frozen=True)
class MonoidBounds:
    v_min: float
    v_max: float

    def __post_init__(self):
        lo, hi = _check_scalar(self.v_min), _check_scalar(self.v_max)
        if lo > hi:
            raise DomainError(f"v_min={lo} exceeds v_max={hi}")

    @classmethod
    def of(cls, *arrays) -> "MonoidBounds":
        """Smallest bounds covering every entry of the given arrays."""
        flat = np.concatenate([np.ravel(np.asarray(a, dtype=np.float64)) for a in arrays])
        return cls(float(flat.min()), float(flat.max()))

    def contains(self, arr) -> bool:
        arr = np.asarray(arr)
        return bool(np.all(arr >= self.v_min) and np.all(arr <= self.v_max))


@dataclass(frozen=True)
class StepPair:
    """Recurrence step <A, b>; acts on x as (A (x) x) (+) b."""

    A: np.ndarray
    b: np.ndarray = field()

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        b = as_matrix(self.b, "b")
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got {A.shape}")
        if b.ndim == 2:
            if b.shape[1] != 1:
                raise ShapeError(f"b must be a vector, got {b.shape}")
            b = b[:, 0]
        if b.shape[0] != A.shape[0]:
            raise ShapeError(f"b has length {b.shape[0]}, A has dimension {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepPair):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)

    __hash__ = None


def identity_element(bounds: MonoidBounds, n: int) -> StepPair:
    """Neutral element of the scan monoid over [v_min, v_max]^n.

    Diagonal v_max, off-diagonal v_min, offset v_min: the finite stand-ins
    for +inf and -inf.
    """
    if n < 1:
        raise DomainError(f"dimension must be >= 1, got {n}")
    E = np.full((n, n), bounds.v_min)
    np.fill_diagonal(E, bounds.v_max)
    return StepPair(E, np.full(n, bounds.v_min))


def apply(M: StepPair, x, counter: OpCounter | None = None) -> np.ndarray:
    """Default action (A (x) x) (+) b."""
    x = as_matrix(x, "x")
    column = x.ndim == 2
    if column and x.shape[1] != 1:
        raise ShapeError(f"x must be a vector, got {x.shape}")
    xv = x[:, 0] if column else x
    if xv.shape[0] != M.n:
        raise ShapeError(f"x has length {xv.shape[0]}, step has dimension {M.n}")
    out = np.maximum(mm_matmul(M.A, xv, counter), M.b)
    if counter is not None:
        counter.add(oplus=M.n)
    return out[:, None] if column else out


def compose(M1: StepPair, M2: StepPair, counter: OpCounter | None = None) -> StepPair:
    """<A1, b1> * <A2, b2> = <A2 (x) A1, (A2 (x) b1) (+) b2>; apply M1 first, then M2."""
    if M1.n != M2.n:
        raise ShapeError(f"dimension mismatch: {M1.n} vs {M2.n}")
    A = mm_matmul(M2.A, M1.A, counter)
    b = np.maximum(mm_matmul(M2.A, M1.b, counter), M2.b)
    if counter is not None:
        counter.add(oplus=M1.n)
    return StepPair(A, b)
