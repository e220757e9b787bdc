"""Minimum-norm selections from the sub/superdifferentials of max and min."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError


def _prepare(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("need a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise DomainError("entries must be finite")
    return x


def active_set(x, kind: str) -> np.ndarray:
    """Indices attaining the max (kind='max') or min (kind='min'), by exact equality."""
    x = _prepare(x)
    target = x.max() if kind == "max" else x.min()
    return np.flatnonzero(x == target)


def grad_max(x) -> np.ndarray:
    """Subgradient of max of minimum Euclidean norm: uniform weight on the argmax set."""
    x = _prepare(x)
    hit = x == x.max()
    return hit / np.count_nonzero(hit)


def grad_min(x) -> np.ndarray:
    """Supergradient of min of minimum Euclidean norm: uniform weight on the argmin set."""
    x = _prepare(x)
    hit = x == x.min()
    return hit / np.count_nonzero(hit)
