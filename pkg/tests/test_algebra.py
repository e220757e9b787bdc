import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minmax_rnc.algebra import (MonoidBounds, OpCounter, StepPair, apply, compose, identity_element,
                                mm_matmul, odot, oplus)
from minmax_rnc.errors import DomainError, ShapeError

from conftest import finite, matrices, tieish, vectors


def brute_matmul(A, B):
    m, p = A.shape
    n = B.shape[1]
    C = np.empty((m, n))
    for i, j in itertools.product(range(m), range(n)):
        C[i, j] = max(min(A[i, k], B[k, j]) for k in range(p))
    return C


def test_scalar_examples():
    assert odot(7, 2) == 2 and oplus(2, 0) == 2
    assert oplus(7, 2) == 7 and odot(5, 2) == 2 and odot(0, 0) == 0


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_scalar_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        oplus(bad, 1.0)
    with pytest.raises(DomainError):
        odot(1.0, bad)


@given(finite, finite, finite)
def test_scalar_laws(a, b, c):
    assert oplus(oplus(a, b), c) == oplus(a, oplus(b, c))
    assert odot(odot(a, b), c) == odot(a, odot(b, c))
    assert odot(a, oplus(b, c)) == oplus(odot(a, b), odot(a, c))
    assert oplus(a, b) == oplus(b, a) and odot(a, b) == odot(b, a)


@given(st.integers(1, 4).flatmap(lambda p: st.tuples(matrices(3, p), matrices(p, 2))))
def test_matmul_matches_brute_force(ab):
    A, B = ab
    assert np.array_equal(mm_matmul(A, B), brute_matmul(A, B))


def test_matmul_swap_and_shapes():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(np.maximum(mm_matmul(swap, np.array([0.0, 1.0])), 0.0), [1.0, 0.0])
    col = mm_matmul(swap, np.array([[0.0], [1.0]]))
    assert col.shape == (2, 1)
    with pytest.raises(ShapeError):
        mm_matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_matmul_counts():
    c = OpCounter()
    mm_matmul(np.ones((3, 4)), np.ones((4, 2)), c)
    assert (c.oplus, c.odot) == (3 * 2 * 3, 3 * 2 * 4)


def test_identity_element_formula():
    E = identity_element(MonoidBounds(0.0, 1.0), 2)
    assert np.array_equal(E.A, [[1, 0], [0, 1]]) and np.array_equal(E.b, [0, 0])
    with pytest.raises(DomainError):
        MonoidBounds(2.0, 1.0)


def test_apply_example_step():
    assert np.array_equal(apply(StepPair([[0.0]], [2.0]), [0.0]), [2.0])


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(matrices(n, elements=tieish), vectors(n, tieish),
                                                      matrices(n, elements=tieish), vectors(n, tieish),
                                                      vectors(n, tieish))))
def test_compose_is_sequential_action(args):
    A1, b1, A2, b2, x = args
    M1, M2 = StepPair(A1, b1), StepPair(A2, b2)
    assert np.array_equal(apply(compose(M1, M2), x), apply(M2, apply(M1, x)))


@given(st.integers(1, 4).flatmap(lambda n: st.lists(st.tuples(matrices(n), vectors(n)), min_size=3, max_size=3)))
def test_monoid_laws(triple):
    (A1, b1), (A2, b2), (A3, b3) = triple
    M1, M2, M3 = StepPair(A1, b1), StepPair(A2, b2), StepPair(A3, b3)
    assert compose(compose(M1, M2), M3) == compose(M1, compose(M2, M3))
    E = identity_element(MonoidBounds.of(A1, b1), M1.n)
    assert compose(E, M1) == M1 and compose(M1, E) == M1


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(vectors(n), matrices(n), vectors(n))))
def test_identity_action(args):
    x, A, b = args
    bounds = MonoidBounds.of(x, A, b)
    assert np.array_equal(apply(identity_element(bounds, len(x)), x), x)


def test_step_pair_validation():
    with pytest.raises(ShapeError):
        StepPair(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError):
        StepPair(np.ones((2, 2)), np.ones(3))
    with pytest.raises(DomainError):
        StepPair(np.array([[np.nan]]), np.ones(1))
