"""MinMax recurrent neural cascades: weights, forward evaluation, init, checkpoints.

A layer holds ``n_units`` MinMax neurons. At step t every unit reads the
layer input u_t through its reset MLP R (reshaped to d_state x d_state) and
set MLP s, and updates x_t = (R(u_t) (x) x_{t-1}) (+) s(u_t). The layer
output is y_t = h(x_{t-1} || x_t || u_t), where h is a pre-normed MLP plus
an optional residual path from u_t. Layers are chained, the outputs of one
being the inputs of the next.

All arrays are float64. Forward functions accept a single sequence (T, d)
or a batch (B, T, d).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from .algebra import StepPair, apply
from .errors import ShapeError
from .recurrence import rec_eval_batched

CHECKPOINT_VERSION = 1
NORM_EPS = 1e-5


def activation(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


# -- weight containers -----------------------------------------------------------

@dataclass
class Linear:
    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]


@dataclass
class MLPWeights:
    """Affine maps with tanh in between.

    ``linears`` = [input, *hidden, output]; a single entry is a plain affine map.
    ``norm_scale``/``norm_shift`` enable layer normalisation of the input.
    ``residual`` adds ``residual_proj @ x`` (identity when the projection is None).
    """

    linears: list[Linear]
    norm_scale: np.ndarray | None = None
    norm_shift: np.ndarray | None = None
    residual: bool = False
    residual_proj: np.ndarray | None = None

    def __post_init__(self):
        if not self.linears:
            raise ShapeError("an MLP needs at least one affine map")
        for a, b in zip(self.linears, self.linears[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"chained dimensions disagree: {a.W.shape} -> {b.W.shape}")
        if (self.norm_scale is None) != (self.norm_shift is None):
            raise ShapeError("norm scale and shift must be given together")
        if self.residual and self.residual_proj is None and self.d_in != self.d_out:
            raise ShapeError("identity residual needs d_in == d_out")

    @property
    def d_in(self) -> int:
        return self.linears[0].d_in

    @property
    def d_out(self) -> int:
        return self.linears[-1].d_out

    @property
    def prenorm(self) -> bool:
        return self.norm_scale is not None

    @property
    def input_linear(self) -> Linear:
        return self.linears[0]

    @property
    def hidden_linears(self) -> list[Linear]:
        return self.linears[1:-1]

    @property
    def output_linear(self) -> Linear:
        return self.linears[-1]


@dataclass
class NeuronWeights:
    reset_mlp: MLPWeights
    set_mlp: MLPWeights
    initial_state: np.ndarray  # (d_state,)

    def __post_init__(self):
        d = self.initial_state.shape[0]
        if self.reset_mlp.d_out != d * d:
            raise ShapeError(f"reset MLP outputs {self.reset_mlp.d_out}, need {d * d}")
        if self.set_mlp.d_out != d:
            raise ShapeError(f"set MLP outputs {self.set_mlp.d_out}, need {d}")

    @property
    def d_state(self) -> int:
        return self.initial_state.shape[0]


@dataclass
class LayerWeights:
    units: list[NeuronWeights]
    output_mlp: MLPWeights
    # residual path u_t -> y_t; identity when the projection is None
    residual: bool = False
    residual_proj: np.ndarray | None = None

    def __post_init__(self):
        ds = {u.d_state for u in self.units}
        if len(ds) != 1:
            raise ShapeError(f"units disagree on state dimension: {ds}")
        expected = 2 * len(self.units) * self.d_state + self.d_in
        if self.output_mlp.d_in != expected:
            raise ShapeError(f"output MLP takes {self.output_mlp.d_in}, need {expected}")
        if self.residual and self.residual_proj is None and self.d_in != self.d_out:
            raise ShapeError("identity residual needs d_in == d_out")

    @property
    def d_state(self) -> int:
        return self.units[0].d_state

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def d_in(self) -> int:
        return self.units[0].reset_mlp.d_in

    @property
    def d_out(self) -> int:
        return self.output_mlp.d_out


@dataclass(frozen=True)
class Dims:
    d_in: int
    d_out: int
    d_model: int
    d_state: int
    n_units: int
    n_layers: int
    d_mlp: int
    n_mlp: int

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")

    def layer_io(self, i: int) -> tuple[int, int]:
        d_in = self.d_in if i == 0 else self.d_model
        d_out = self.d_out if i == self.n_layers - 1 else self.d_model
        return d_in, d_out

    @property
    def unit_hidden(self) -> int:
        return math.ceil(self.d_mlp / self.n_units)


@dataclass
class CascadeWeights:
    layers: list[LayerWeights]
    dims: Dims | None = None

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer output {a.d_out} feeds layer input {b.d_in}")

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out


# -- generic traversal of weight trees ---------------------------------------------

def named_arrays(obj, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    """Yield (path, array) for every parameter array, in a fixed order."""
    if isinstance(obj, np.ndarray):
        yield prefix, obj
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from named_arrays(item, f"{prefix}.{i}" if prefix else str(i))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, Dims):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None or isinstance(value, (bool, int, float, str, Dims)):
                continue
            yield from named_arrays(value, f"{prefix}.{f.name}" if prefix else f.name)


def map_arrays(obj, fn):
    """Copy of a weight tree with ``fn`` applied to every array."""
    if isinstance(obj, np.ndarray):
        return fn(obj)
    if isinstance(obj, list):
        return [map_arrays(item, fn) for item in obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, Dims):
        changes = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, (np.ndarray, list)) or (
                    dataclasses.is_dataclass(value) and not isinstance(value, Dims)):
                changes[f.name] = map_arrays(value, fn)
        return dataclasses.replace(obj, **changes)
    return obj


def flatten(obj) -> np.ndarray:
    arrays = [a.ravel() for _, a in named_arrays(obj)]
    return np.concatenate(arrays) if arrays else np.zeros(0)


def unflatten(template, vector: np.ndarray):
    """Weights shaped like ``template`` holding the entries of ``vector``."""
    vector = np.asarray(vector, dtype=np.float64)
    need = num_params(template)
    if vector.size != need:
        raise ShapeError(f"vector has {vector.size} entries, template needs {need}")
    offset = 0

    def take(a):
        nonlocal offset
        out = vector[offset:offset + a.size].reshape(a.shape).copy()
        offset += a.size
        return out

    return map_arrays(template, take)


def num_params(obj) -> int:
    return sum(a.size for _, a in named_arrays(obj))


# -- forward evaluation --------------------------------------------------------------

def mlp_eval(w: MLPWeights, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Evaluate an MLP on a vector or on rows of a matrix.

    When ``cache`` is a dict it receives the intermediates the backward pass needs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.d_in:
        raise ShapeError(f"MLP expects input dimension {w.d_in}, got {x.shape[-1]}")
    if w.prenorm:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + NORM_EPS)
        xhat = xc * inv
        h = xhat * w.norm_scale + w.norm_shift
    else:
        h = x
    inputs, pre = [], []
    last = len(w.linears) - 1
    for i, lin in enumerate(w.linears):
        inputs.append(h)
        h = h @ lin.W.T + lin.b
        pre.append(h)
        if i < last:
            h = activation(h)
    if w.residual:
        res = x if w.residual_proj is None else x @ w.residual_proj.T
        h = h + res
        if cache is not None:
            cache["res"] = res
    if cache is not None:
        cache["x"] = x
        cache["inputs"], cache["pre"] = inputs, pre
        cache["mlp_out"] = pre[-1]
        if w.prenorm:
            cache["xhat"], cache["inv"] = xhat, inv
    return h


def bankable(mlps: list[MLPWeights]) -> bool:
    """True when the MLPs share every shape and flag, so they can run stacked."""
    first = mlps[0]
    return all(m.prenorm == first.prenorm and not m.residual
               and [l.W.shape for l in m.linears] == [l.W.shape for l in first.linears]
               for m in mlps)


def mlp_bank_eval(mlps: list[MLPWeights], x: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Evaluate same-shaped MLPs on the same rows; returns (K, rows, d_out).

    Normalisation statistics are computed once and shared. ``cache`` receives
    stacked intermediates ("inputs", "pre" as (K, rows, .) arrays, "xhat", "inv").
    """
    first = mlps[0]
    if first.prenorm:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + NORM_EPS)
        xhat = xc * inv
        scale = np.stack([m.norm_scale for m in mlps])[:, None, :]
        shift = np.stack([m.norm_shift for m in mlps])[:, None, :]
        h = xhat[None] * scale + shift
    else:
        h = np.broadcast_to(x, (len(mlps),) + x.shape)
    inputs, pre = [], []
    last = len(first.linears) - 1
    for i in range(last + 1):
        W = np.stack([m.linears[i].W for m in mlps])
        b = np.stack([m.linears[i].b for m in mlps])[:, None, :]
        inputs.append(h)
        h = np.matmul(h, W.transpose(0, 2, 1)) + b
        pre.append(h)
        if i < last:
            h = activation(h)
    if cache is not None:
        cache.update(x=x, inputs=inputs, pre=pre, mlp_out=pre[-1])
        if first.prenorm:
            cache["xhat"], cache["inv"] = xhat, inv
    return h


def bank_member_cache(bank: dict, k: int) -> dict:
    """The single-MLP cache view of member ``k`` of a bank cache."""
    c = {"x": bank["x"], "inputs": [a[k] for a in bank["inputs"]],
         "pre": [a[k] for a in bank["pre"]]}
    c["mlp_out"] = c["pre"][-1]
    if "xhat" in bank:
        c["xhat"], c["inv"] = bank["xhat"], bank["inv"]
    return c


class _BankCaches(list):
    """Per-unit cache views that also carry the stacked bank cache."""

    bank: dict


def _unit_mlps(mlps: list[MLPWeights], flat: np.ndarray, want_cache: bool):
    """Outputs of one MLP per unit, stacked as (rows, n_units, d_out), and their caches."""
    if bankable(mlps):
        bank = {} if want_cache else None
        out = mlp_bank_eval(mlps, flat, bank)
        caches = None
        if want_cache:
            caches = _BankCaches(bank_member_cache(bank, k) for k in range(len(mlps)))
            caches.bank = bank
        return out.transpose(1, 0, 2), caches
    caches = [{} for _ in mlps] if want_cache else [None] * len(mlps)
    out = np.stack([mlp_eval(m, flat, c) for m, c in zip(mlps, caches)], axis=1)
    return out, (caches if want_cache else None)


def neuron_step(w: NeuronWeights, x_prev, u) -> np.ndarray:
    """One MinMax neuron update (R(u) (x) x_prev) (+) s(u)."""
    d = w.d_state
    R = mlp_eval(w.reset_mlp, np.asarray(u, dtype=np.float64)).reshape(d, d)
    s = mlp_eval(w.set_mlp, np.asarray(u, dtype=np.float64))
    return apply(StepPair(R, s), np.asarray(x_prev, dtype=np.float64))


@dataclass
class LayerTrace:
    u: np.ndarray  # (B, T, d_in)
    R: np.ndarray  # (B, T, n_units, d, d)
    s: np.ndarray  # (B, T, n_units, d)
    x: np.ndarray  # (B, T + 1, n_units, d); x[:, 0] is the initial state
    y: np.ndarray  # (B, T, d_out)


@dataclass
class CascadeTrace:
    layers: list[LayerTrace] = field(default_factory=list)

    def squeeze(self) -> "CascadeTrace":
        """Drop the batch axis of a single-sequence trace."""
        return CascadeTrace([LayerTrace(*(getattr(lt, f.name)[0] for f in dataclasses.fields(lt)))
                             for lt in self.layers])


def layer_eval(w: LayerWeights, U: np.ndarray,
               mode: Literal["sequential", "parallel"] = "sequential",
               cache: dict | None = None) -> LayerTrace:
    B, T, d_in = U.shape
    if d_in != w.d_in:
        raise ShapeError(f"layer expects input dimension {w.d_in}, got {d_in}")
    n, d = w.n_units, w.d_state
    flat = U.reshape(B * T, d_in)
    R, rc = _unit_mlps([unit.reset_mlp for unit in w.units], flat, cache is not None)
    s, sc = _unit_mlps([unit.set_mlp for unit in w.units], flat, cache is not None)
    R = R.reshape(B, T, n, d, d)
    s = s.reshape(B, T, n, d)
    x0 = np.stack([unit.initial_state for unit in w.units])  # (n, d)
    A = R.transpose(0, 2, 1, 3, 4).reshape(B * n, T, d, d)
    b = s.transpose(0, 2, 1, 3).reshape(B * n, T, d)
    states = rec_eval_batched(np.tile(x0, (B, 1)), A, b, mode)
    x = np.empty((B, T + 1, n, d))
    x[:, 0] = x0
    x[:, 1:] = states.reshape(B, n, T, d).transpose(0, 2, 1, 3)
    z = np.concatenate([x[:, :-1].reshape(B, T, n * d), x[:, 1:].reshape(B, T, n * d), U], axis=-1)
    oc = {} if cache is not None else None
    y = mlp_eval(w.output_mlp, z.reshape(B * T, -1), oc).reshape(B, T, -1)
    if w.residual:
        res = U if w.residual_proj is None else U @ w.residual_proj.T
        y = y + res
        if cache is not None:
            cache["res"] = res.reshape(B * T, -1)
    if cache is not None:
        cache.update(reset=rc, set=sc, out=oc)
    return LayerTrace(U, R, s, x, y)


def cascade_eval(w: CascadeWeights, U: np.ndarray,
                 mode: Literal["sequential", "parallel"] = "sequential",
                 caches: list | None = None):
    """Run the cascade; returns (Y, trace). Y has U's batch layout.

    Passing a list as ``caches`` collects one backward cache per layer.
    """
    U = np.asarray(U, dtype=np.float64)
    single = U.ndim == 2
    if single:
        U = U[None]
    if U.ndim != 3 or U.shape[1] < 1:
        raise ShapeError(f"expected (T, d_in) or (B, T, d_in) with T >= 1, got {U.shape}")
    trace = CascadeTrace()
    h = U
    for layer in w.layers:
        cache = {} if caches is not None else None
        lt = layer_eval(layer, h, mode, cache)
        if caches is not None:
            caches.append(cache)
        trace.layers.append(lt)
        h = lt.y
    if single:
        return h[0], trace.squeeze()
    return h, trace


# -- initialisation and sizing ---------------------------------------------------------

def _linear(rng: np.random.Generator, d_in: int, d_out: int, bias=None) -> Linear:
    bound = 1.0 / math.sqrt(d_in)
    W = rng.uniform(-bound, bound, (d_out, d_in))
    b = np.broadcast_to(bias, (d_out,)).astype(np.float64) if bias is not None else rng.uniform(-bound, bound, d_out)
    return Linear(W, b)


def _mlp(rng, d_in, d_out, d_h, n_h, *, prenorm=False, out_bias=None) -> MLPWeights:
    sizes = [d_in] + [d_h] * (n_h + 1) + [d_out]
    linears = [_linear(rng, a, b) for a, b in zip(sizes[:-2], sizes[1:-1])]
    linears.append(_linear(rng, sizes[-2], sizes[-1], out_bias))
    scale = np.ones(d_in) if prenorm else None
    shift = np.zeros(d_in) if prenorm else None
    return MLPWeights(linears, scale, shift)


def init_weights(dims: Dims, seed: int, *, prenorm: bool = True, residual: bool = True) -> CascadeWeights:
    """Deterministic initialisation.

    Reset MLPs end with bias +1 on the diagonal and -1 elsewhere, set MLPs
    with bias -1, so units start out holding their state; other weights are
    uniform in +-1/sqrt(fan_in); initial states are uniform in [-1, 1].
    """
    rng = np.random.default_rng(seed)
    d = dims.d_state
    reset_bias = np.where(np.eye(d, dtype=bool), 1.0, -1.0).ravel()
    layers = []
    for i in range(dims.n_layers):
        d_in, d_out = dims.layer_io(i)
        units = []
        for _ in range(dims.n_units):
            R = _mlp(rng, d_in, d * d, dims.unit_hidden, dims.n_mlp, prenorm=prenorm, out_bias=reset_bias)
            s = _mlp(rng, d_in, d, dims.unit_hidden, dims.n_mlp, prenorm=prenorm, out_bias=-1.0)
            units.append(NeuronWeights(R, s, rng.uniform(-1.0, 1.0, d)))
        z_dim = 2 * dims.n_units * d + d_in
        out = _mlp(rng, z_dim, d_out, dims.d_mlp, dims.n_mlp, prenorm=prenorm)
        proj = None
        if residual and d_in != d_out:
            proj = _linear(rng, d_in, d_out).W
        layers.append(LayerWeights(units, out, residual, proj))
    return CascadeWeights(layers, dims)


def _mlp_count(d_in, d_out, d_h, n_h, prenorm) -> int:
    sizes = [d_in] + [d_h] * (n_h + 1) + [d_out]
    n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    return n + (2 * d_in if prenorm else 0)


def count_params(dims: Dims, *, prenorm: bool = True, residual: bool = True) -> int:
    """Exact number of parameters ``init_weights`` allocates for ``dims``."""
    d = dims.d_state
    total = 0
    for i in range(dims.n_layers):
        d_in, d_out = dims.layer_io(i)
        unit = (_mlp_count(d_in, d * d, dims.unit_hidden, dims.n_mlp, prenorm)
                + _mlp_count(d_in, d, dims.unit_hidden, dims.n_mlp, prenorm) + d)
        total += dims.n_units * unit
        total += _mlp_count(2 * dims.n_units * d + d_in, d_out, dims.d_mlp, dims.n_mlp, prenorm)
        if residual and d_in != d_out:
            total += d_in * d_out
    return total


# -- checkpoints -----------------------------------------------------------------------------

def save_checkpoint(path, weights, *, dims: Dims, seed: int, meta: dict | None = None) -> None:
    """Write an .npz holding every array as little-endian float64 plus a JSON header."""
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": dataclasses.asdict(dims),
        "seed": int(seed),
        "kind": type(weights).__name__,
        "meta": meta or {},
    }
    arrays = {name: np.ascontiguousarray(a, dtype="<f8") for name, a in named_arrays(weights)}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    return header, arrays


def fill_from_arrays(template, arrays: dict[str, np.ndarray]):
    """Replace each array of ``template`` by the stored one with the same path."""
    names = [name for name, _ in named_arrays(template)]
    missing = [n for n in names if n not in arrays]
    extra = sorted(set(arrays) - set(names))
    if missing or extra:
        raise ShapeError(f"checkpoint layout mismatch: missing={missing[:3]} extra={extra[:3]}")
    it = iter(names)

    def take(a):
        stored = arrays[next(it)]
        if stored.shape != a.shape:
            raise ShapeError(f"stored shape {stored.shape} != expected {a.shape}")
        return np.array(stored, dtype=np.float64)

    return map_arrays(template, take)


def load_checkpoint(path, *, prenorm: bool | None = None, residual: bool | None = None):
    """Load a cascade checkpoint; returns (weights, header)."""
    header, arrays = read_checkpoint(path)
    dims = Dims(**header["dims"])
    flags = header["meta"].get("arch", {})
    template = init_weights(
        dims, 0,
        prenorm=flags.get("prenorm", True) if prenorm is None else prenorm,
        residual=flags.get("residual", True) if residual is None else residual,
    )
    return fill_from_arrays(template, arrays), header


# -- stability checks ------------------------------------------------------------------------

def _layer_arrays(lt: LayerTrace):
    R, s, x = lt.R, lt.s, lt.x
    if R.ndim == 4:  # unbatched trace
        R, s, x = R[None], s[None], x[None]
    return R, s, x


def value_closure_ok(trace: CascadeTrace) -> bool:
    """Every state entry equals an initial-state entry of its unit or an entry of
    that unit's R/s emitted at the same or an earlier step."""
    for lt in trace.layers:
        R, s, x = _layer_arrays(lt)
        B, T, n, d = s.shape
        for b in range(B):
            for k in range(n):
                vals = np.concatenate([x[b, 0, k], R[b, :, k].ravel(), s[b, :, k].ravel()])
                times = np.concatenate([np.zeros(d, dtype=np.int64),
                                        np.repeat(np.arange(1, T + 1), d * d),
                                        np.repeat(np.arange(1, T + 1), d)])
                order = np.lexsort((times, vals))
                vals, times = vals[order], times[order]
                uniq, first = np.unique(vals, return_index=True)
                first_time = times[first]
                states = x[b, 1:, k]  # (T, d)
                pos = np.searchsorted(uniq, states)
                pos = np.minimum(pos, uniq.size - 1)
                if not np.array_equal(uniq[pos], states):
                    return False
                if np.any(first_time[pos] > np.arange(1, T + 1)[:, None]):
                    return False
    return True


def closure_bound(trace: CascadeTrace) -> float:
    """Largest magnitude among initial states and emitted R/s values."""
    bound = 0.0
    for lt in trace.layers:
        R, s, x = _layer_arrays(lt)
        bound = max(bound, float(np.abs(R).max()), float(np.abs(s).max()), float(np.abs(x[:, 0]).max()))
    return bound


def max_state_abs(trace: CascadeTrace) -> float:
    return max(float(np.abs(_layer_arrays(lt)[2]).max()) for lt in trace.layers)
