import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minmax_rnc.errors import ShapeError
from minmax_rnc.network import (Dims, LayerWeights, Linear, MLPWeights, NeuronWeights, activation, cascade_eval,
                                closure_bound, count_params, flatten, init_weights, load_checkpoint,
                                max_state_abs, mlp_bank_eval, mlp_eval, neuron_step, num_params,
                                save_checkpoint, unflatten, value_closure_ok)


def affine(W, b):
    return MLPWeights([Linear(np.array(W, dtype=float), np.array(b, dtype=float))])


def example1_neuron():
    return NeuronWeights(affine([[1, 0]], [0]), affine([[0, 1]], [0]), np.array([0.0]))


def parity_neuron():
    # R(u) = [[1-u, u], [u, 1-u]] flattened row-major, s(u) = 0
    return NeuronWeights(affine([[-1], [1], [1], [-1]], [1, 0, 0, 1]), affine([[0], [0]], [0, 0]),
                         np.array([1.0, 0.0]))


def run_neuron(w, inputs):
    x, out = w.initial_state, []
    for u in inputs:
        x = neuron_step(w, x, u)
        out.append(x.tolist())
    return out


def test_example1_neuron():
    assert run_neuron(example1_neuron(), [(0, 2), (7, 0), (5, 0), (0, 1)]) == [[2], [2], [2], [1]]


def test_parity_neuron():
    assert run_neuron(parity_neuron(), [[1], [0], [1]]) == [[0, 1], [0, 1], [1, 0]]


def test_mlp_eval_matches_manual():
    rng = np.random.default_rng(0)
    l1 = Linear(rng.normal(size=(5, 3)), rng.normal(size=5))
    l2 = Linear(rng.normal(size=(2, 5)), rng.normal(size=2))
    x = rng.normal(size=(4, 3))
    want = activation(x @ l1.W.T + l1.b) @ l2.W.T + l2.b
    assert np.allclose(mlp_eval(MLPWeights([l1, l2]), x), want)
    scale, shift = rng.normal(size=3), rng.normal(size=3)
    xn = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * scale + shift
    got = mlp_eval(MLPWeights([l1, l2], scale, shift, residual=True, residual_proj=rng.normal(size=(2, 3))), x)
    assert got.shape == (4, 2) and np.isfinite(got).all()
    no_res = mlp_eval(MLPWeights([l1, l2], scale, shift), x)
    assert np.allclose(no_res, activation(xn @ l1.W.T + l1.b) @ l2.W.T + l2.b)


def test_bank_eval_matches_members():
    w = init_weights(Dims(5, 3, 6, 2, 4, 1, 12, 2), 1)
    mlps = [u.reset_mlp for u in w.layers[0].units]
    x = np.random.default_rng(1).normal(size=(7, 5))
    bank = mlp_bank_eval(mlps, x)
    for k, m in enumerate(mlps):
        assert np.allclose(bank[k], mlp_eval(m, x), rtol=0, atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(1, 9), st.integers(0, 1000))
def test_sequential_equals_parallel(d_state, n_units, n_layers, T, seed):
    w = init_weights(Dims(3, 2, 4, d_state, n_units, n_layers, 6, 1), seed)
    U = np.random.default_rng(seed).normal(size=(2, T, 3))
    Ys, ts = cascade_eval(w, U, "sequential")
    Yp, tp = cascade_eval(w, U, "parallel")
    assert np.array_equal(Ys, Yp)
    assert all(np.array_equal(a.x, b.x) for a, b in zip(ts.layers, tp.layers))
    assert value_closure_ok(ts)
    assert max_state_abs(ts) <= closure_bound(ts)


def test_single_sequence_layout():
    w = init_weights(Dims(3, 2, 4, 1, 2, 2, 6, 1), 0)
    U = np.random.default_rng(0).normal(size=(5, 3))
    Y, trace = cascade_eval(w, U)
    Yb, _ = cascade_eval(w, U[None])
    assert Y.shape == (5, 2) and np.array_equal(Y, Yb[0])
    assert trace.layers[0].x.shape == (6, 2, 1)


def test_closure_detects_foreign_value():
    w = init_weights(Dims(3, 2, 4, 1, 2, 1, 6, 1), 0)
    _, trace = cascade_eval(w, np.random.default_rng(0).normal(size=(1, 4, 3)))
    trace.layers[0].x[0, 2, 0, 0] = 123.456
    assert not value_closure_ok(trace)


@pytest.mark.parametrize("prenorm,residual", [(True, True), (False, False), (True, False)])
def test_count_params_and_checkpoint(tmp_path, prenorm, residual):
    dims = Dims(3, 2, 4, 2, 2, 2, 6, 1)
    w = init_weights(dims, 7, prenorm=prenorm, residual=residual)
    assert num_params(w) == count_params(dims, prenorm=prenorm, residual=residual)
    path = tmp_path / "w.npz"
    save_checkpoint(path, w, dims=dims, seed=7, meta={"arch": {"prenorm": prenorm, "residual": residual}})
    back, header = load_checkpoint(path)
    assert header["seed"] == 7
    assert np.array_equal(flatten(back), flatten(w))
    U = np.random.default_rng(0).normal(size=(6, 3))
    assert np.array_equal(cascade_eval(back, U)[0], cascade_eval(w, U)[0])


def test_flatten_roundtrip():
    w = init_weights(Dims(3, 2, 4, 1, 2, 2, 6, 1), 0)
    v = flatten(w)
    assert np.array_equal(flatten(unflatten(w, v * 2)), v * 2)
    with pytest.raises(ShapeError):
        unflatten(w, v[:-1])


def test_init_is_deterministic():
    dims = Dims(3, 2, 4, 1, 2, 2, 6, 1)
    assert np.array_equal(flatten(init_weights(dims, 3)), flatten(init_weights(dims, 3)))
    assert not np.array_equal(flatten(init_weights(dims, 3)), flatten(init_weights(dims, 4)))


def test_shape_errors():
    with pytest.raises(ShapeError):
        NeuronWeights(affine([[1, 0]], [0]), affine([[0, 1]], [0]), np.zeros(2))
    with pytest.raises(ShapeError):
        MLPWeights([Linear(np.ones((2, 3)), np.ones(2)), Linear(np.ones((1, 4)), np.ones(1))])
    unit = example1_neuron()
    with pytest.raises(ShapeError):
        LayerWeights([unit], affine([[1, 1]], [0]))
    w = init_weights(Dims(3, 2, 4, 1, 2, 1, 6, 1), 0)
    with pytest.raises(ShapeError):
        cascade_eval(w, np.zeros((4, 5)))
    with pytest.raises(ValueError):
        Dims(0, 1, 1, 1, 1, 1, 1, 1)
