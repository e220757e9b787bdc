import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minmax_rnc.automata import (CascadeLevel, Semiautomaton, SemiautomatonCascade, all_words, certify, classify,
                                 compile_auto, compile_cascade, compile_general, compile_identity_reset,
                                 compile_permutation, dumps, load_cascade, loads, parity, random_semiautomaton,
                                 random_words)
from minmax_rnc.errors import CertificationError, ClassError, DomainError


def test_parity_unit_reproduces_swap_trajectory():
    unit = compile_permutation(parity(), anchors=(0.0, 1.0), initial_tuple=(1, 0))
    assert unit.init_vector.tolist() == [1.0, 0.0]
    assert unit.run([1, 0, 1]).tolist() == [[0, 1], [0, 1], [1, 0]]
    assert unit.decode(unit.run([1, 0, 1])).tolist() == [1, 1, 0]


def test_classify():
    assert classify(parity()).kind == "permutation"
    flip_flop = Semiautomaton.from_table([[0, 0, 1], [1, 0, 1]])  # hold, reset-to-0, set-to-1
    assert classify(flip_flop).kind == "identity-reset"
    assert classify(Semiautomaton.from_table([[1], [1], [0]])).kind == "general"


def test_identity_reset_construction():
    flip_flop = Semiautomaton.from_table([[0, 0, 1], [1, 0, 1]])
    unit = compile_identity_reset(flip_flop)
    assert unit.reset_table[:, 0, 0].tolist() == [2, 1, 1]
    assert unit.set_table[:, 0].tolist() == [1, 1, 2]
    assert unit.decode(unit.run([2, 0, 0, 1, 0])).tolist() == [1, 1, 1, 0, 0]
    with pytest.raises(ClassError):
        compile_identity_reset(parity())


@pytest.mark.parametrize("kind,compiler", [("identity-reset", compile_identity_reset),
                                           ("permutation", compile_permutation),
                                           ("general", compile_general)])
@pytest.mark.parametrize("seed", range(5))
def test_random_certification(kind, compiler, seed):
    a = random_semiautomaton(kind, 1 + seed, 3, seed)
    rep = certify(compiler(a), a, random_words(3, 200, 40, seed))
    assert rep.certified and rep.words_tested == 200


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_auto_compiler_realises_any_automaton(K, M, seed):
    a = random_semiautomaton("general", K, M, seed)
    start = seed % K
    unit = compile_auto(a, start_state=start)
    assert certify(unit, a, all_words(M, 4), start=start).certified


@given(st.integers(1, 3), st.integers(0, 10_000))
def test_compiled_values_stay_on_anchors(K, seed):
    a = random_semiautomaton("general", K, 2, seed)
    unit = compile_general(a)
    values = unit.run_batch(np.array(list(itertools.product(range(2), repeat=5))))
    assert set(np.unique(values).tolist()) <= set(unit.state_points.tolist())


def test_exhaustive_small_identity_reset():
    count = 0
    for cols in itertools.product(itertools.product(range(2), repeat=2), repeat=2):
        a = Semiautomaton(2, 2, np.array(cols).T)
        if classify(a).kind == "identity-reset":
            count += 1
            assert certify(compile_identity_reset(a, start_state=1), a, all_words(2, 6), start=1).certified
    assert count == 9  # each symbol: identity or one of two constants


def test_corrupted_unit_fails_certification():
    flip_flop = Semiautomaton.from_table([[0, 0, 1], [1, 0, 1]])
    unit = compile_identity_reset(flip_flop)
    unit.state_points = unit.state_points * 0.1
    rep = certify(unit, flip_flop, all_words(3, 3))
    assert not rep.certified and rep.mismatches[0].decoded == -1


def test_inconsistent_permutation_rep():
    with pytest.raises(CertificationError):
        compile_permutation(parity(), perm_rep=[(0, 1), (0, 1)])


def test_anchor_spacing_validated():
    with pytest.raises(DomainError):
        compile_identity_reset(Semiautomaton.from_table([[0, 1], [1, 1]]), anchors=(1.0, 1.4), epsilon=0.25)


def test_text_roundtrip():
    a = random_semiautomaton("general", 3, 2, 0)
    assert loads(dumps(a)) == a
    with pytest.raises(ValueError):
        loads("states 2 symbols 1\ndelta 0 0 1\n")


def latch_cascade():
    # level 0: parity of symbol 1; level 1: latches once symbol 1 arrives while level 0 was odd
    latch = Semiautomaton.from_table([[0, 1], [1, 1]])
    return SemiautomatonCascade([CascadeLevel(parity(), {(0,): 0, (1,): 1}),
                                 CascadeLevel(latch, lambda sym, q0: int(sym == 1 and q0 == 1))], 2)


def test_cascade_routing_reads_previous_lower_state():
    cascade = latch_cascade()
    assert cascade.run([1, 1, 0]) == [(1, 0), (0, 1), (0, 1)]


def test_compiled_cascade_certifies():
    cascade = latch_cascade()
    assert certify(compile_cascade(cascade.levels, 2), cascade, all_words(2, 8)).certified


def test_cascade_file(tmp_path):
    (tmp_path / "parity.txt").write_text(dumps(parity()))
    (tmp_path / "latch.txt").write_text(dumps(Semiautomaton.from_table([[0, 1], [1, 1]])))
    (tmp_path / "c.txt").write_text(
        "external 2\nlevel parity.txt\nlevel latch.txt\n"
        "map 0 0 -> 0\nmap 0 1 -> 1\n"
        "map 1 0 0 -> 0\nmap 1 0 1 -> 0\nmap 1 1 0 -> 0\nmap 1 1 1 -> 1\n")
    c = load_cascade(tmp_path / "c.txt")
    words = list(all_words(2, 6))
    assert np.array_equal(c.run_batch(np.array(words[-64:])), latch_cascade().run_batch(np.array(words[-64:])))


def test_incomplete_routing_rejected():
    with pytest.raises(DomainError):
        SemiautomatonCascade([CascadeLevel(parity(), {(0,): 0})], 2)
