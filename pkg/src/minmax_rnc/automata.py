"""Semiautomata, their compilation into exact MinMax units, and certification.

A compiled unit stores, per input symbol, the reset matrix R and set vector s
of a MinMax neuron x' = (R (x) x) (+) s. Discrete states are encoded by
anchor values x_1 < ... < x_k; a real state value decodes to anchor i when it
lies within epsilon of x_i, and a state vector decodes componentwise to an
index tuple which a lookup table maps back to an automaton state.

Three compilers cover the usual classes:
  identity-reset  1-dim state; identity symbols hold, constant symbols overwrite.
  permutation     n-dim state holding an arrangement of anchors that symbols permute.
  general         one-hot state over all automaton states.

Cascades chain levels; each level reads the external symbol together with the
decoded states (before the update) of all lower levels.
"""
from __future__ import annotations

import itertools
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .algebra import StepPair, apply
from .errors import CertificationError, ClassError, DomainError, ShapeError

DEFAULT_EPSILON = 0.25


# -- semiautomata -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Semiautomaton:
    n_states: int
    alphabet_size: int
    delta: np.ndarray  # (n_states, alphabet_size) next-state table

    def __post_init__(self):
        delta = np.array(self.delta, dtype=np.int64)
        if self.n_states < 1 or self.alphabet_size < 1:
            raise DomainError("need at least one state and one symbol")
        if delta.shape != (self.n_states, self.alphabet_size):
            raise ShapeError(f"delta must be {self.n_states}x{self.alphabet_size}, got {delta.shape}")
        if delta.min() < 0 or delta.max() >= self.n_states:
            raise DomainError("delta entries out of range")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def from_table(cls, table: Sequence[Sequence[int]]) -> "Semiautomaton":
        arr = np.asarray(table, dtype=np.int64)
        return cls(arr.shape[0], arr.shape[1], arr)

    def __eq__(self, other):
        if not isinstance(other, Semiautomaton):
            return NotImplemented
        return np.array_equal(self.delta, other.delta)

    __hash__ = None

    def column(self, symbol: int) -> tuple[int, ...]:
        return tuple(int(q) for q in self.delta[:, symbol])

    def run(self, word: Sequence[int], start: int = 0) -> list[int]:
        """States after each symbol of ``word``."""
        q, out = start, []
        for sym in word:
            q = int(self.delta[q, sym])
            out.append(q)
        return out

    def run_batch(self, words: np.ndarray, start: int = 0) -> np.ndarray:
        words = np.asarray(words, dtype=np.int64)
        q = np.full(words.shape[0], start, dtype=np.int64)
        out = np.empty(words.shape, dtype=np.int64)
        for t in range(words.shape[1]):
            q = self.delta[q, words[:, t]]
            out[:, t] = q
        return out


@dataclass(frozen=True)
class SymbolTag:
    kind: str  # identity | constant | permutation | general
    value: int | tuple[int, ...] | None = None


@dataclass(frozen=True)
class TransformationClass:
    tags: tuple[SymbolTag, ...]
    kind: str  # identity-reset | permutation | general


def classify(a: Semiautomaton) -> TransformationClass:
    tags = []
    ident = tuple(range(a.n_states))
    for sym in range(a.alphabet_size):
        col = a.column(sym)
        if col == ident:
            tags.append(SymbolTag("identity"))
        elif len(set(col)) == 1:
            tags.append(SymbolTag("constant", col[0]))
        elif len(set(col)) == a.n_states:
            tags.append(SymbolTag("permutation", col))
        else:
            tags.append(SymbolTag("general"))
    kinds = {t.kind for t in tags}
    if kinds <= {"identity", "constant"}:
        kind = "identity-reset"
    elif kinds <= {"identity", "permutation"}:
        kind = "permutation"
    else:
        kind = "general"
    return TransformationClass(tuple(tags), kind)


# -- compiled units -------------------------------------------------------------------

def _check_anchors(anchors, epsilon: float) -> np.ndarray:
    x = np.asarray(anchors, dtype=np.float64)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise DomainError("anchors must be a non-empty finite vector")
    if epsilon < 0:
        raise DomainError("epsilon must be non-negative")
    if x.size > 1:
        gaps = np.abs(x[:, None] - x[None, :])[~np.eye(x.size, dtype=bool)]
        if gaps.min() <= 2 * epsilon:
            raise DomainError(f"anchors must be more than 2*epsilon={2 * epsilon} apart")
    return x


@dataclass(eq=False)
class CompiledUnit:
    kind: str
    reset_table: np.ndarray  # (alphabet, d, d)
    set_table: np.ndarray  # (alphabet, d)
    state_points: np.ndarray  # anchors (k,)
    epsilon: float
    init_vector: np.ndarray  # (d,)
    decoder: dict  # index tuple -> automaton state
    _keys: np.ndarray = field(init=False, repr=False)
    _vals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_anchors(self.state_points, self.epsilon)
        allowed = set(self.state_points.tolist())
        used = set(self.reset_table.ravel().tolist()) | set(self.set_table.ravel().tolist())
        if not used <= allowed:
            raise DomainError("compiled entries must be anchor values")
        k, d = len(self.state_points), self.state_dim
        keys = np.array([self._key(np.array(t), k) for t in self.decoder], dtype=np.int64).reshape(-1)
        order = np.argsort(keys)
        self._keys = keys[order]
        self._vals = np.array(list(self.decoder.values()), dtype=np.int64).reshape(-1)[order]

    @staticmethod
    def _key(idx: np.ndarray, k: int) -> np.ndarray:
        weights = k ** np.arange(idx.shape[-1], dtype=np.int64)
        return (idx * weights).sum(axis=-1)

    @property
    def state_dim(self) -> int:
        return self.set_table.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.set_table.shape[0]

    def step(self, x, symbol: int) -> np.ndarray:
        return apply(StepPair(self.reset_table[symbol], self.set_table[symbol]), x)

    def run(self, word: Sequence[int], x=None) -> np.ndarray:
        """State values after each symbol, shape (len(word), d)."""
        x = self.init_vector if x is None else np.asarray(x, dtype=np.float64)
        out = np.empty((len(word), self.state_dim))
        for t, sym in enumerate(word):
            x = self.step(x, sym)
            out[t] = x
        return out

    def step_batch(self, x: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        R, s = self.reset_table[symbols], self.set_table[symbols]
        return np.maximum(np.max(np.minimum(R, x[:, None, :]), axis=2), s)

    def run_batch(self, words: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        words = np.asarray(words, dtype=np.int64)
        W, L = words.shape
        x = np.tile(self.init_vector, (W, 1)) if x0 is None else np.asarray(x0, dtype=np.float64)
        out = np.empty((W, L, self.state_dim))
        for t in range(L):
            x = self.step_batch(x, words[:, t])
            out[:, t] = x
        return out

    def components(self, values) -> np.ndarray:
        """Anchor index of every component (-1 when outside all intervals)."""
        v = np.asarray(values, dtype=np.float64)
        hit = np.abs(v[..., None] - self.state_points) <= self.epsilon
        return np.where(hit.any(axis=-1), hit.argmax(axis=-1), -1)

    def decode(self, values) -> np.ndarray | int:
        """Automaton state for each state vector (-1 when undecodable)."""
        v = np.asarray(values, dtype=np.float64)
        idx = self.components(v)
        keys = self._key(np.maximum(idx, 0), len(self.state_points))
        pos = np.clip(np.searchsorted(self._keys, keys), 0, len(self._keys) - 1)
        found = (self._keys[pos] == keys) & (idx >= 0).all(axis=-1)
        out = np.where(found, self._vals[pos], -1)
        return int(out) if out.ndim == 0 else out

    def encode(self, state: int) -> np.ndarray:
        for tup, q in self.decoder.items():
            if q == state:
                return self.state_points[list(tup)].copy()
        raise DomainError(f"state {state} has no encoding")


def compile_identity_reset(a: Semiautomaton, anchors=None, epsilon: float = DEFAULT_EPSILON,
                           start_state: int = 0) -> CompiledUnit:
    cls = classify(a)
    if cls.kind != "identity-reset":
        raise ClassError(f"expected an identity-reset semiautomaton, got {cls.kind}")
    x = _check_anchors(np.arange(1, a.n_states + 1) if anchors is None else anchors, epsilon)
    if x.size != a.n_states:
        raise ShapeError(f"need {a.n_states} anchors, got {x.size}")
    lo, hi = x.min(), x.max()
    R = np.empty((a.alphabet_size, 1, 1))
    s = np.empty((a.alphabet_size, 1))
    for sym, tag in enumerate(cls.tags):
        if tag.kind == "identity":
            R[sym], s[sym] = hi, lo
        else:
            R[sym], s[sym] = lo, x[tag.value]
    decoder = {(q,): q for q in range(a.n_states)}
    return CompiledUnit("identity-reset", R, s, x, epsilon, x[[start_state]].copy(), decoder)


def default_perm_rep(a: Semiautomaton) -> list[tuple[int, ...]]:
    """pi_sigma = inverse of delta_sigma, acting on n = n_states components."""
    cls = classify(a)
    if cls.kind != "permutation" and cls.kind != "identity-reset":
        raise ClassError(f"expected a permutation semiautomaton, got {cls.kind}")
    reps = []
    for sym in range(a.alphabet_size):
        col = a.column(sym)
        if len(set(col)) != a.n_states:
            raise ClassError(f"symbol {sym} is not a bijection")
        inv = [0] * a.n_states
        for q, r in enumerate(col):
            inv[r] = q
        reps.append(tuple(inv))
    return reps


def compile_permutation(a: Semiautomaton, perm_rep=None, anchors=None,
                        epsilon: float = DEFAULT_EPSILON, start_state: int = 0,
                        initial_tuple: Sequence[int] | None = None) -> CompiledUnit:
    """Component l of the next state is component perm_rep[sigma][l] of the current one.

    The state-vector encoding is discovered by exploring every reachable
    (automaton state, index tuple) pair; a tuple reached with two different
    automaton states means ``perm_rep`` does not represent ``a``.
    """
    reps = default_perm_rep(a) if perm_rep is None else [tuple(int(i) for i in p) for p in perm_rep]
    if len(reps) != a.alphabet_size:
        raise ShapeError(f"need one permutation per symbol, got {len(reps)}")
    d = len(reps[0])
    for p in reps:
        if sorted(p) != list(range(d)):
            raise DomainError(f"{p} is not a permutation of 0..{d - 1}")
    x = _check_anchors(np.arange(1, d + 1) if anchors is None else anchors, epsilon)
    if x.size != d:
        raise ShapeError(f"need {d} anchors, got {x.size}")
    lo, hi = x.min(), x.max()
    R = np.full((a.alphabet_size, d, d), lo)
    for sym, p in enumerate(reps):
        R[sym, np.arange(d), list(p)] = hi
    s = np.full((a.alphabet_size, d), lo)
    init = tuple(range(d)) if initial_tuple is None else tuple(int(i) for i in initial_tuple)
    if len(init) != d or min(init) < 0 or max(init) >= d:
        raise DomainError(f"initial tuple {init} out of range")
    decoder = {init: start_state}
    queue = deque([(start_state, init)])
    seen = {(start_state, init)}
    while queue:
        q, tup = queue.popleft()
        for sym, p in enumerate(reps):
            nq = int(a.delta[q, sym])
            nt = tuple(tup[p[l]] for l in range(d))
            if decoder.setdefault(nt, nq) != nq:
                raise CertificationError(
                    f"permutation representation is inconsistent: tuple {nt} reached as "
                    f"states {decoder[nt]} and {nq}")
            if (nq, nt) not in seen:
                seen.add((nq, nt))
                queue.append((nq, nt))
    return CompiledUnit("permutation", R, s, x, epsilon, x[list(init)].copy(), decoder)


def compile_general(a: Semiautomaton, anchors=(1.0, 2.0), epsilon: float = DEFAULT_EPSILON,
                    start_state: int = 0) -> CompiledUnit:
    """One-hot encoding: component j is x1 exactly when the automaton is in q_j."""
    x = _check_anchors(anchors, epsilon)
    if x.size != 2 or x[1] <= x[0]:
        raise DomainError("general compilation needs anchors (x0, x1) with x0 < x1")
    x0, x1 = x
    n = a.n_states
    R = np.full((a.alphabet_size, n, n), x0)
    for sym in range(a.alphabet_size):
        R[sym, a.delta[:, sym], np.arange(n)] = x1
    s = np.full((a.alphabet_size, n), x0)
    decoder = {tuple(int(q == j) for j in range(n)): q for q in range(n)}
    init = np.full(n, x0)
    init[start_state] = x1
    return CompiledUnit("general", R, s, x, epsilon, init, decoder)


def compile_auto(a: Semiautomaton, epsilon: float = DEFAULT_EPSILON, start_state: int = 0) -> CompiledUnit:
    kind = classify(a).kind
    if kind == "identity-reset":
        return compile_identity_reset(a, epsilon=epsilon, start_state=start_state)
    if kind == "permutation":
        return compile_permutation(a, epsilon=epsilon, start_state=start_state)
    return compile_general(a, epsilon=epsilon, start_state=start_state)


# -- cascades ---------------------------------------------------------------------------

@dataclass(eq=False)
class CascadeLevel:
    automaton: Semiautomaton
    # (external symbol, *lower states) -> level symbol; a callable is tabulated
    alphabet_map: dict | Callable
    start: int = 0


@dataclass(eq=False)
class SemiautomatonCascade:
    levels: list[CascadeLevel]
    n_external: int
    tables: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.tables = []
        sizes: list[int] = []
        for i, level in enumerate(self.levels):
            self.tables.append(_routing_table(level.alphabet_map, self.n_external, sizes,
                                              level.automaton.alphabet_size, i))
            sizes.append(level.automaton.n_states)

    def run_batch(self, words) -> np.ndarray:
        """Joint states after each symbol, shape (W, L, n_levels)."""
        words = np.asarray(words, dtype=np.int64)
        W, L = words.shape
        q = np.array([[lv.start for lv in self.levels]] * W, dtype=np.int64)
        out = np.empty((W, L, len(self.levels)), dtype=np.int64)
        for t in range(L):
            new = q.copy()
            for i, lv in enumerate(self.levels):
                sym = self.tables[i][(words[:, t],) + tuple(q[:, j] for j in range(i))]
                new[:, i] = lv.automaton.delta[q[:, i], sym]
            q = new
            out[:, t] = q
        return out

    def run(self, word) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.run_batch(np.asarray([word]))[0]]


def _routing_table(mapping, n_external: int, lower_sizes: list[int], alphabet: int, level: int):
    shape = (n_external, *lower_sizes)
    table = np.empty(shape, dtype=np.int64)
    for key in itertools.product(*(range(n) for n in shape)):
        try:
            sym = mapping(*key) if callable(mapping) else mapping[key]
        except KeyError:
            raise DomainError(f"alphabet map of level {level} undefined at {key}") from None
        if not 0 <= int(sym) < alphabet:
            raise DomainError(f"alphabet map of level {level} yields {sym} at {key}")
        table[key] = int(sym)
    return table


@dataclass(eq=False)
class CompiledStack:
    units: list[CompiledUnit]
    routing: list[np.ndarray]

    def run_batch(self, words) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-level state values and the decoded joint states (W, L, n_levels).

        Routing reads decoded lower states; an undecodable lower state routes
        with symbol 0 and is reported by the decoded output (-1).
        """
        words = np.asarray(words, dtype=np.int64)
        W, L = words.shape
        xs = [np.tile(u.init_vector, (W, 1)) for u in self.units]
        q = np.stack([u.decode(x) for u, x in zip(self.units, xs)], axis=1)
        values = [np.empty((W, L, u.state_dim)) for u in self.units]
        decoded = np.empty((W, L, len(self.units)), dtype=np.int64)
        for t in range(L):
            for i, unit in enumerate(self.units):
                lower = tuple(np.maximum(q[:, j], 0) for j in range(i))
                sym = self.routing[i][(words[:, t],) + lower]
                xs[i] = unit.step_batch(xs[i], sym)
                values[i][:, t] = xs[i]
            q = np.stack([u.decode(x) for u, x in zip(self.units, xs)], axis=1)
            decoded[:, t] = q
        return values, decoded


def compile_cascade(levels: Sequence, n_external: int | None = None, anchors=None,
                    epsilon: float = DEFAULT_EPSILON) -> CompiledStack:
    """Compile each level with the compiler matching its class.

    ``levels`` holds CascadeLevel objects or (Semiautomaton, alphabet_map) pairs;
    ``anchors`` optionally gives one anchor vector per level (None for defaults).
    """
    cascade = as_cascade(levels, n_external)
    units = []
    for i, lv in enumerate(cascade.levels):
        anc = None if anchors is None else anchors[i]
        kind = classify(lv.automaton).kind
        if kind == "identity-reset":
            u = compile_identity_reset(lv.automaton, anc, epsilon, lv.start)
        elif kind == "permutation":
            u = compile_permutation(lv.automaton, None, anc, epsilon, lv.start)
        else:
            u = compile_general(lv.automaton, (1.0, 2.0) if anc is None else anc, epsilon, lv.start)
        units.append(u)
    return CompiledStack(units, cascade.tables)


def as_cascade(levels, n_external: int | None = None) -> SemiautomatonCascade:
    if isinstance(levels, SemiautomatonCascade):
        return levels
    lv = [x if isinstance(x, CascadeLevel) else CascadeLevel(*x) for x in levels]
    if not lv:
        raise DomainError("a cascade needs at least one level")
    if n_external is None:
        if callable(lv[0].alphabet_map):
            raise DomainError("n_external is required when alphabet maps are callables")
        n_external = 1 + max(k[0] for k in lv[0].alphabet_map)
    return SemiautomatonCascade(lv, n_external)


# -- certification -------------------------------------------------------------------------

@dataclass(frozen=True)
class Mismatch:
    word: tuple[int, ...]
    step: int
    expected: int | tuple[int, ...]
    decoded: int | tuple[int, ...]  # -1 marks an undecodable value


@dataclass
class RealizationReport:
    words_tested: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return not self.mismatches

    def merge(self, other: "RealizationReport") -> "RealizationReport":
        return RealizationReport(self.words_tested + other.words_tested,
                                 self.mismatches + other.mismatches)

    def to_text(self, limit: int = 20) -> str:
        lines = [f"words_tested={self.words_tested} mismatches={len(self.mismatches)} "
                 f"certified={str(self.certified).lower()}"]
        for m in self.mismatches[:limit]:
            lines.append(f"mismatch word={' '.join(map(str, m.word))} step={m.step} "
                         f"expected={m.expected} decoded={m.decoded}")
        return "\n".join(lines)


def _certify_group(target, reference, words: np.ndarray, start: int) -> RealizationReport:
    if isinstance(target, CompiledStack):
        _, got = target.run_batch(words)
        want = reference.run_batch(words)
        bad = (got != want).any(axis=-1)
    else:
        got = target.decode(target.run_batch(words))
        want = reference.run_batch(words, start)
        bad = got != want
    report = RealizationReport(words.shape[0])
    for w, t in zip(*np.nonzero(bad)):
        exp, dec = want[w, t], got[w, t]
        if exp.ndim:
            exp, dec = tuple(int(v) for v in exp), tuple(int(v) for v in dec)
        report.mismatches.append(Mismatch(tuple(int(v) for v in words[w]), int(t), exp, dec))
    return report


def certify(target, reference, words: Iterable[Sequence[int]], start: int | None = None,
            workers: int = 1) -> RealizationReport:
    """Run compiled ``target`` and ``reference`` on every word; record disagreements.

    ``target`` is a CompiledUnit (reference a Semiautomaton started at ``start``,
    by default the state the unit's initial vector decodes to, else 0) or a
    CompiledStack (reference a SemiautomatonCascade or its level list).
    """
    if isinstance(target, CompiledStack):
        reference = as_cascade(reference)
        start = 0
    elif start is None:
        # a corrupted unit may not decode its own start; fall back to state 0
        start = max(int(target.decode(target.init_vector)), 0)
    groups: dict[int, list] = {}
    for w in words:
        groups.setdefault(len(w), []).append(tuple(w))
    batches = [np.asarray(g, dtype=np.int64).reshape(len(g), L) for L, g in sorted(groups.items()) if L]
    n_empty = len(groups.get(0, []))
    report = RealizationReport(n_empty)
    if workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_certify_group, *zip(*[(target, reference, b, start) for b in batches])))
    else:
        parts = [_certify_group(target, reference, b, start) for b in batches]
    for part in parts:
        report = report.merge(part)
    return report


def all_words(alphabet_size: int, max_len: int, min_len: int = 1):
    for L in range(min_len, max_len + 1):
        yield from itertools.product(range(alphabet_size), repeat=L)


def random_words(alphabet_size: int, count: int, max_len: int, seed: int = 0, min_len: int = 1):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        L = int(rng.integers(min_len, max_len + 1))
        yield tuple(int(v) for v in rng.integers(0, alphabet_size, L))


def random_semiautomaton(kind: str, n_states: int, alphabet_size: int, seed: int = 0) -> Semiautomaton:
    """Random member of a class: identity-reset, permutation or general (any table)."""
    rng = np.random.default_rng(seed)
    cols = []
    for _ in range(alphabet_size):
        if kind == "identity-reset":
            c = np.arange(n_states) if rng.random() < 0.5 else np.full(n_states, rng.integers(n_states))
        elif kind == "permutation":
            c = rng.permutation(n_states)
        elif kind == "general":
            c = rng.integers(0, n_states, n_states)
        else:
            raise ValueError(f"unknown class {kind!r}")
        cols.append(c)
    return Semiautomaton(n_states, alphabet_size, np.stack(cols, axis=1))


def parity() -> Semiautomaton:
    """Two states; symbol 0 keeps the state and symbol 1 swaps it."""
    return Semiautomaton.from_table([[0, 1], [1, 0]])


# -- text format -------------------------------------------------------------------------------

def dumps(a: Semiautomaton) -> str:
    lines = [f"states {a.n_states} symbols {a.alphabet_size}"]
    for q in range(a.n_states):
        for sym in range(a.alphabet_size):
            lines.append(f"delta {q} {sym} {int(a.delta[q, sym])}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Semiautomaton:
    rows = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    rows = [r for r in rows if r]
    if not rows or len(rows[0]) != 4 or rows[0][0] != "states" or rows[0][2] != "symbols":
        raise ValueError("expected header 'states K symbols M'")
    K, M = int(rows[0][1]), int(rows[0][3])
    table = np.full((K, M), -1, dtype=np.int64)
    for r in rows[1:]:
        if len(r) != 4 or r[0] != "delta":
            raise ValueError(f"bad line: {' '.join(r)}")
        q, sym, nq = map(int, r[1:])
        if not (0 <= q < K and 0 <= sym < M):
            raise ValueError(f"transition out of range: {' '.join(r)}")
        if table[q, sym] != -1:
            raise ValueError(f"duplicate transition for ({q}, {sym})")
        table[q, sym] = nq
    if (table < 0).any():
        raise ValueError("transition table is not total")
    return Semiautomaton(K, M, table)


def load(path) -> Semiautomaton:
    return loads(Path(path).read_text())


def load_cascade(path) -> SemiautomatonCascade:
    """Cascade file::

        external M
        level <automaton file> [start q]
        map <level> <external symbol> <lower states...> -> <level symbol>

    Automaton paths are relative to the cascade file.
    """
    path = Path(path)
    n_external = None
    levels: list[tuple[Semiautomaton, int]] = []
    maps: list[dict] = []
    for raw in path.read_text().splitlines():
        r = raw.split("#", 1)[0].split()
        if not r:
            continue
        if r[0] == "external":
            n_external = int(r[1])
        elif r[0] == "level":
            start = int(r[3]) if len(r) >= 4 and r[2] == "start" else 0
            levels.append((load(path.parent / r[1]), start))
            maps.append({})
        elif r[0] == "map":
            arrow = r.index("->")
            lvl = int(r[1])
            key = tuple(int(v) for v in r[2:arrow])
            maps[lvl][key] = int(r[arrow + 1])
        else:
            raise ValueError(f"bad cascade line: {raw}")
    if n_external is None:
        raise ValueError("cascade file needs an 'external M' line")
    return SemiautomatonCascade([CascadeLevel(a, m, s) for (a, s), m in zip(levels, maps)], n_external)
