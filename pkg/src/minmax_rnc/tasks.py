"""Seeded generators for the synthetic benchmarks.

Latching(n)         return the first token at every step; n tokens may come first.
Sequences(n)        two binary heads; head i turns on once the input contains a
                    subsequence a_1..a_n with a_t in E_{i,t} that no token of I_i
                    interrupts, and stays on.
InductionHeads(n)   at the second occurrence of a marker, recall the token that
                    followed its first occurrence (one of n candidates).

Every generator is a pure function of its arguments; ``seed`` may be an int or
a sequence of ints (as accepted by ``numpy.random.default_rng``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GenerationError

TASK_KINDS = ("latching", "sequences", "induction_heads")
SEQ_EVENT_SIZE = 3
SEQ_RESET_SIZE = 2
SEQ_FILLER = 6


@dataclass(frozen=True, eq=False)
class TaskSample:
    tokens: np.ndarray  # (T,)
    targets: np.ndarray  # (T,) class ids, or (T, 2) bits for sequences
    loss_mask: np.ndarray  # (T,) bool

    def __post_init__(self):
        if not self.loss_mask.any():
            raise GenerationError("mask must select at least one step")

    def __eq__(self, other):
        if not isinstance(other, TaskSample):
            return NotImplemented
        return (np.array_equal(self.tokens, other.tokens) and np.array_equal(self.targets, other.targets)
                and np.array_equal(self.loss_mask, other.loss_mask))

    __hash__ = None

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])


@dataclass(frozen=True)
class SequenceSets:
    events: tuple[tuple[frozenset, ...], tuple[frozenset, ...]]  # E_1, E_2, each of length n
    resets: tuple[frozenset, frozenset]  # I_1, I_2
    vocab_size: int


def default_sequence_sets(n: int) -> SequenceSets:
    """2n disjoint event sets of 3 tokens, then two reset sets of 2 tokens, then filler."""
    tok = 0
    events = []
    for _ in range(2):
        head = []
        for _ in range(n):
            head.append(frozenset(range(tok, tok + SEQ_EVENT_SIZE)))
            tok += SEQ_EVENT_SIZE
        events.append(tuple(head))
    resets = []
    for _ in range(2):
        resets.append(frozenset(range(tok, tok + SEQ_RESET_SIZE)))
        tok += SEQ_RESET_SIZE
    return SequenceSets((events[0], events[1]), (resets[0], resets[1]), tok + SEQ_FILLER)


def make_sequence_sets(n: int, E1=None, E2=None, I1=None, I2=None, vocab_size=None) -> SequenceSets:
    base = default_sequence_sets(n)
    ev = [base.events[0] if E1 is None else tuple(frozenset(s) for s in E1),
          base.events[1] if E2 is None else tuple(frozenset(s) for s in E2)]
    rs = [base.resets[0] if I1 is None else frozenset(I1),
          base.resets[1] if I2 is None else frozenset(I2)]
    for head in ev:
        if len(head) != n or any(not s for s in head):
            raise GenerationError(f"each head needs {n} non-empty event sets")
    if any(not s for s in rs):
        raise GenerationError("reset sets must be non-empty")
    used = max(max(max(s) for head in ev for s in head), max(max(s) for s in rs)) + 1
    vocab = max(base.vocab_size, used) if vocab_size is None else int(vocab_size)
    if vocab < used or min(min(min(s) for head in ev for s in head), min(min(s) for s in rs)) < 0:
        raise GenerationError("event and reset sets must lie inside the vocabulary")
    return SequenceSets((ev[0], ev[1]), (rs[0], rs[1]), vocab)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n: int
    length: int
    seed: int = 0
    window: int = 30  # induction heads: first marker within the first `window` steps
    n_filler: int | None = None  # induction heads filler symbols (default n)
    sets: SequenceSets | None = None  # sequences: event/reset sets (default carve-up)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise GenerationError(f"unknown task kind {self.kind!r}")
        if self.n < 1 or self.length < 1:
            raise GenerationError("n and length must be >= 1")
        if self.window < 1:
            raise GenerationError("window must be >= 1")
        if self.kind == "sequences" and self.sets is None:
            object.__setattr__(self, "sets", default_sequence_sets(self.n))

    @property
    def vocab_size(self) -> int:
        if self.kind == "latching":
            return 20 * self.n
        if self.kind == "sequences":
            return self.sets.vocab_size
        return 1 + self.n + self.filler

    @property
    def filler(self) -> int:
        return self.n if self.n_filler is None else self.n_filler

    @property
    def heads(self) -> int:
        return 2 if self.kind == "sequences" else 1

    @property
    def n_classes(self) -> int:
        return 2 if self.kind == "sequences" else self.n

    @property
    def d_out(self) -> int:
        return self.heads * self.n_classes

    def with_(self, **changes) -> "TaskSpec":
        return replace(self, **changes)

    def generate(self, seed=None) -> TaskSample:
        seed = self.seed if seed is None else seed
        if self.kind == "latching":
            return gen_latching(self.n, self.length, seed)
        if self.kind == "sequences":
            return gen_sequences(self.n, self.length, seed, sets=self.sets)
        return gen_induction_heads(self.n, self.length, seed, self.window, self.n_filler)


# -- generators ---------------------------------------------------------------------

def gen_latching(n: int, T: int, seed=0) -> TaskSample:
    if n < 1 or T < 1:
        raise GenerationError("need n >= 1 and T >= 1")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, 20 * n, T)
    tokens[0] = rng.integers(0, n)
    return TaskSample(tokens, np.full(T, tokens[0]), np.ones(T, dtype=bool))


def sequence_labels(tokens: np.ndarray, n: int, sets: SequenceSets) -> np.ndarray:
    """Progress counters per head: reset on I_i (unless complete), then advance on E_{i,c+1}."""
    T = len(tokens)
    out = np.zeros((T, 2), dtype=np.int64)
    for i in range(2):
        events, reset = sets.events[i], sets.resets[i]
        c = 0
        for t, tok in enumerate(tokens):
            tok = int(tok)
            if c < n and tok in reset:
                c = 0
            if c < n and tok in events[c]:
                c += 1
            out[t, i] = int(c == n)
    return out


def gen_sequences(n: int, T: int, seed=0, E1=None, E2=None, I1=None, I2=None,
                  sets: SequenceSets | None = None) -> TaskSample:
    if n < 1 or T < 1:
        raise GenerationError("need n >= 1 and T >= 1")
    sets = make_sequence_sets(n, E1, E2, I1, I2) if sets is None else sets
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, sets.vocab_size, T)
    return TaskSample(tokens, sequence_labels(tokens, n, sets), np.ones(T, dtype=bool))


def gen_induction_heads(n: int, T: int, seed=0, first_marker_window: int = 30,
                        n_filler: int | None = None) -> TaskSample:
    """Token 0 is the marker, 1..n the recall candidates, the rest filler.

    The first marker sits uniformly in the first ``first_marker_window`` steps
    (clipped so that the payload and second marker fit), the payload follows
    it, and the second marker is placed uniformly among the later steps.
    """
    n_filler = n if n_filler is None else n_filler
    if n < 1 or n_filler < 1:
        raise GenerationError("need n >= 1 candidates and at least one filler symbol")
    if T < 3:
        raise GenerationError(f"length {T} cannot fit marker, payload and second marker")
    if first_marker_window < 1:
        raise GenerationError("window must be >= 1")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(1 + n, 1 + n + n_filler, T)
    p1 = int(rng.integers(0, min(first_marker_window, T - 2)))
    payload = int(rng.integers(0, n))
    p2 = int(rng.integers(p1 + 2, T))
    tokens[p1], tokens[p1 + 1], tokens[p2] = 0, 1 + payload, 0
    targets = np.zeros(T, dtype=np.int64)
    targets[p2] = payload
    mask = np.zeros(T, dtype=bool)
    mask[p2] = True
    return TaskSample(tokens, targets, mask)


def generate_batch(spec: TaskSpec, count: int, seed=None, length: int | None = None):
    """Stacked (tokens, targets, mask) for ``count`` samples with per-sample seeds."""
    base = spec.seed if seed is None else seed
    s = spec if length is None else spec.with_(length=length)
    samples = [s.generate((base, i)) for i in range(count)]
    return (np.stack([x.tokens for x in samples]), np.stack([x.targets for x in samples]),
            np.stack([x.loss_mask for x in samples]))


# -- independent relabelers ---------------------------------------------------------

def relabel_latching(tokens) -> np.ndarray:
    return np.full(len(tokens), int(tokens[0]))


def relabel_sequences(tokens, sets: SequenceSets) -> np.ndarray:
    """Direct search for uninterrupted matching subsequences within each prefix."""
    T = len(tokens)
    out = np.zeros((T, 2), dtype=np.int64)
    for i in range(2):
        events, reset = sets.events[i], sets.resets[i]
        n = len(events)
        first_done = T
        for p1 in range(T):
            if int(tokens[p1]) not in events[0]:
                continue
            k, done = 1, p1 if n == 1 else None
            for q in range(p1 + 1, T):
                if done is not None:
                    break
                tok = int(tokens[q])
                if tok in events[k]:
                    k += 1
                    if k == n:
                        done = q
                        break
                if tok in reset:
                    break
            if done is not None:
                first_done = min(first_done, done)
        out[first_done:, i] = 1
    return out


def relabel_induction(tokens, marker: int = 0) -> tuple[int, int]:
    """(recall step, target class) read off the two marker occurrences."""
    pos = [t for t, tok in enumerate(tokens) if int(tok) == marker]
    if len(pos) != 2:
        raise GenerationError(f"expected two markers, found {len(pos)}")
    return pos[1], int(tokens[pos[0] + 1]) - 1 - marker


def sequences_cascade(n: int, sets: SequenceSets):
    """Cascade of 2n identity-reset latches whose top level per head is the head's label.

    Level (i, k) remembers that E_{i,1..k} has been matched since the last I_i
    token; it is set when level (i, k-1) was already on and an E_{i,k} token
    arrives, and cleared by I_i unless k = n.
    """
    from .automata import CascadeLevel, SemiautomatonCascade, Semiautomaton

    latch = Semiautomaton.from_table([[0, 1, 0], [1, 1, 0]])  # symbols: hold, set, clear
    levels = []
    for i in range(2):
        for k in range(n):
            idx = i * n + k

            def route(tok, *lower, i=i, k=k, idx=idx):
                below = 1 if k == 0 else lower[idx - 1]
                if k < n - 1 and tok in sets.resets[i]:
                    return 2
                return 1 if (below and tok in sets.events[i][k]) else 0

            levels.append(CascadeLevel(latch, route))
    return SemiautomatonCascade(levels, sets.vocab_size)


# -- dataset files -------------------------------------------------------------------

def dump_jsonl(samples, path) -> None:
    with open(Path(path), "w") as fh:
        for s in samples:
            fh.write(json.dumps({"length": s.length, "tokens": s.tokens.tolist(),
                                 "targets": s.targets.tolist(),
                                 "mask": s.loss_mask.astype(int).tolist()}) + "\n")


def load_jsonl(path) -> list[TaskSample]:
    out = []
    with open(Path(path)) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            s = TaskSample(np.asarray(rec["tokens"], dtype=np.int64),
                           np.asarray(rec["targets"], dtype=np.int64),
                           np.asarray(rec["mask"], dtype=bool))
            if s.length != rec["length"]:
                raise GenerationError("record length disagrees with its tokens")
            out.append(s)
    return out
