import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minmax_rnc.autodiff import (active_set, backward, build_loss_tape, build_tape, finite_diff_check,
                                 grad_max, grad_min, loss_and_grad, masked_mean_loss, measure_bound,
                                 node_count, position_losses, tie_stats)
from minmax_rnc.errors import DomainError
from minmax_rnc.network import Dims, cascade_eval, flatten, init_weights
from minmax_rnc.verify import scalar_cascade, state_gradient


def oracle(x, pick):
    best = pick(x)
    hits = [i for i, v in enumerate(x) if v == best]
    return [1 / len(hits) if i in hits else 0.0 for i in range(len(x))]


@pytest.mark.parametrize("n", range(1, 6))
def test_rules_exhaustive_tie_patterns(n):
    # values in 0..n-1 realise every equality pattern on n entries
    for x in itertools.product(range(n), repeat=n):
        assert grad_max(x).tolist() == oracle(x, max)
        assert grad_min(x).tolist() == oracle(x, min)


def test_rule_examples():
    assert grad_max([3.0, 3.0]).tolist() == [0.5, 0.5]
    g = grad_max([2.0, 2.0, 2.0])
    assert np.linalg.norm(g) == pytest.approx(1 / math.sqrt(3), abs=1e-15)
    assert grad_min([1.0, 4.0, 1.0]).tolist() == [0.5, 0.0, 0.5]
    assert active_set([5.0, 1.0, 5.0], "max").tolist() == [0, 2]
    with pytest.raises(DomainError):
        grad_max([np.nan, 1.0])
    with pytest.raises(DomainError):
        grad_min([])


@given(st.lists(st.sampled_from([-1.0, 0.0, 2.0, 3.5]), min_size=1, max_size=8))
def test_rules_sum_to_one_on_active_set(x):
    for g, kind in ((grad_max(x), "max"), (grad_min(x), "min")):
        assert g.sum() == pytest.approx(1.0)
        assert set(np.flatnonzero(g)) == set(active_set(x, kind))


def small_cascade(seed, T=5):
    rng = np.random.default_rng(seed)
    w = init_weights(Dims(3, 4, 4, int(rng.integers(1, 3)), 2, int(rng.integers(1, 3)), 6, 1), seed)
    return w, rng.normal(size=(T, 3)), rng.integers(0, 4, T)


@pytest.mark.parametrize("seed", range(4))
def test_tape_matches_vectorized(seed):
    w, u, t = small_cascade(seed)
    mask = np.array([True, False, True, True, True])
    r = backward(build_loss_tape(w, u, t, "cross_entropy", mask))
    loss, g, gU, _, _ = loss_and_grad(w, u, t, mask)
    assert np.allclose(r.grad_params, flatten(g), rtol=1e-10, atol=1e-13)
    assert np.allclose(r.grad_inputs[("u", 2)], gU[2], rtol=1e-10, atol=1e-13)
    assert r.grad_norm == pytest.approx(np.abs(flatten(g)).max())


def test_skip_inactive_gives_same_result():
    w, u, t = small_cascade(1)
    tape = build_loss_tape(w, u, t)
    assert np.array_equal(backward(tape).grad_params, backward(tape, skip_inactive=True).grad_params)


@pytest.mark.parametrize("T", [1, 3, 6])
def test_node_count_closed_form(T):
    w, u, t = small_cascade(2, T)
    assert len(build_tape(w, u).nodes) == node_count(w, T)
    assert len(build_loss_tape(w, u, t).nodes) == node_count(w, T, loss=True)


def test_tape_values_match_forward():
    w, u, _ = small_cascade(3)
    tape = build_tape(w, u)
    Y, trace = cascade_eval(w, u)
    assert np.array_equal(tape["y", 4, len(w.layers) - 1].value, Y[4])
    assert tape["x", 2, 0, 1, 0].value == trace.layers[0].x[3, 1, 0]


@pytest.mark.parametrize("loss_kind", ["cross_entropy", "mse"])
def test_finite_differences(loss_kind):
    w, u, t = small_cascade(4)
    target = t if loss_kind == "cross_entropy" else np.random.default_rng(0).normal(size=(5, 4))
    rep = finite_diff_check(w, u, target, loss_kind, subset_size=30, seed=1)
    assert rep.entries and rep.max_rel_error <= 1e-4


def test_constant_input_state_gradient():
    g = state_gradient(scalar_cascade((1.0, 0.0), (-1.0, 0.0), 0.3), np.ones((2000, 1)), 2000)
    assert g == 1.0


@given(st.floats(-1, 1), st.floats(1.5, 3), st.floats(-1, 1), st.floats(-3, -1.5), st.integers(1, 60),
       st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_state_gradient_inside_interval(a, b, c, d, T, frac, seed):
    u = np.random.default_rng(seed).uniform(-1, 1, (T, 1))
    lo, hi = (c * u + d).max(), (a * u + b).min()
    x0 = lo + frac * (hi - lo)
    assert state_gradient(scalar_cascade((a, b), (c, d), x0), u, T) == 1.0


def test_state_gradient_vanishes_after_set():
    # x0 above every R value: the first update overwrites the state
    u = np.ones((5, 1))
    assert state_gradient(scalar_cascade((0.0, 0.5), (0.0, -0.5), 2.0), u, 5) == 0.0


@given(st.integers(0, 10_000))
def test_gradient_bound_holds(seed):
    rng = np.random.default_rng(seed)
    w = init_weights(Dims(3, 4, 4, int(rng.integers(1, 3)), 2, int(rng.integers(1, 3)), 6, 1), seed)
    U = rng.normal(size=(3, 6, 3))
    t = rng.integers(0, 4, (3, 6))
    mask = rng.random((3, 6)) < 0.7
    mask[:, 0] = True
    _, g, *_ = loss_and_grad(w, U, t, mask)
    assert np.abs(flatten(g)).sum() <= measure_bound(w, U, t, mask).value


def test_losses():
    Y = np.array([[[2.0, 0.0], [0.0, 0.0]]])
    losses, dY = position_losses(Y, np.array([[0, 1]]), "cross_entropy")
    assert losses[0, 1] == pytest.approx(math.log(2))
    loss, gY = masked_mean_loss(Y, np.array([[0, 1]]), np.array([[False, True]]), "cross_entropy")
    assert loss == pytest.approx(math.log(2)) and np.all(gY[0, 0] == 0)


def test_tie_stats_counts_nodes():
    w, u, _ = small_cascade(5)
    _, trace = cascade_eval(w, u)
    tied, total = tie_stats(trace)
    assert 0 <= tied <= total and total > 0
