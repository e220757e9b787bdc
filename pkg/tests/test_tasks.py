import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minmax_rnc.errors import GenerationError
from minmax_rnc.tasks import (TaskSpec, default_sequence_sets, dump_jsonl, gen_induction_heads, gen_latching,
                              gen_sequences, generate_batch, load_jsonl, make_sequence_sets, relabel_induction,
                              relabel_latching, relabel_sequences, sequences_cascade)

seeds = st.integers(0, 2**31)


@given(st.integers(1, 8), st.integers(1, 100), seeds)
def test_latching(n, T, seed):
    s = gen_latching(n, T, seed)
    assert s.tokens[0] < n and s.tokens.max() < 20 * n and s.loss_mask.all()
    assert np.array_equal(s.targets, relabel_latching(s.tokens))


@given(st.integers(1, 4), st.integers(1, 120), seeds)
def test_sequences_match_relabeler(n, T, seed):
    sets = default_sequence_sets(n)
    s = gen_sequences(n, T, seed, sets=sets)
    assert np.array_equal(s.targets, relabel_sequences(s.tokens, sets))


@given(st.integers(1, 3), st.integers(1, 60), seeds)
def test_sequences_match_cascade(n, T, seed):
    sets = default_sequence_sets(n)
    s = gen_sequences(n, T, seed, sets=sets)
    states = sequences_cascade(n, sets).run_batch(s.tokens[None])[0]
    assert np.array_equal(states[:, [n - 1, 2 * n - 1]], s.targets)


def test_sequences_small_sets_hit_both_labels():
    sets = make_sequence_sets(2, E1=[{0}, {1}], E2=[{2}, {3}], I1={4}, I2={5}, vocab_size=6)
    s = gen_sequences(2, 200, 0, sets=sets)
    assert s.targets[-1].tolist() == [1, 1]
    assert s.targets[0].tolist() == [0, 0]
    assert np.array_equal(s.targets, relabel_sequences(s.tokens, sets))


def test_sequences_reset_interrupts():
    sets = make_sequence_sets(2, E1=[{0}, {1}], E2=[{2}, {3}], I1={4}, I2={5}, vocab_size=6)
    tokens = np.array([0, 4, 1, 0, 1, 4])
    assert relabel_sequences(tokens, sets)[:, 0].tolist() == [0, 0, 0, 0, 1, 1]


@given(st.integers(1, 20), st.integers(3, 200), st.integers(1, 50), seeds)
def test_induction_heads(n, T, window, seed):
    s = gen_induction_heads(n, T, seed, window)
    step, cls = relabel_induction(s.tokens)
    assert s.loss_mask.sum() == 1 and s.loss_mask[step]
    assert s.targets[step] == cls and 0 <= cls < n
    first = int(np.flatnonzero(s.tokens == 0)[0])
    assert first < max(1, min(window, T - 2))
    assert s.tokens.max() < 1 + 2 * n


def test_induction_too_short():
    with pytest.raises(GenerationError):
        gen_induction_heads(4, 2, 0)


def test_spec_properties():
    assert TaskSpec("latching", 4, 10).vocab_size == 80
    ih = TaskSpec("induction_heads", 16, 64)
    assert (ih.vocab_size, ih.d_out, ih.heads) == (33, 16, 1)
    seq = TaskSpec("sequences", 2, 10)
    assert (seq.heads, seq.n_classes, seq.d_out) == (2, 2, 4)
    with pytest.raises(GenerationError):
        TaskSpec("copying", 2, 10)


def test_generation_is_deterministic():
    spec = TaskSpec("sequences", 2, 50)
    assert spec.generate(3) == spec.generate(3)
    assert spec.generate(3) != spec.generate(4)
    a = generate_batch(spec, 4, seed=7)
    b = generate_batch(spec, 4, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_jsonl_roundtrip(tmp_path):
    samples = [gen_induction_heads(4, 20, i) for i in range(5)]
    dump_jsonl(samples, tmp_path / "d.jsonl")
    assert load_jsonl(tmp_path / "d.jsonl") == samples
