"""Explicit node-level computation graph of a cascade and its reverse pass.

The graph has one binary min node per reset-matrix entry and step
(z = min(R_ij, x_{t-1,j})) and one (d_state + 1)-ary max node per state
component and step (x_i = max(z_i1, ..., z_id, s_i)). Smooth blocks
(normalisation, affine maps, tanh, residual sums, loss) are vector nodes.
Values of the smooth nodes are copied from the shared batched forward pass,
so the tape agrees with ``cascade_eval`` bit for bit; min and max nodes are
recomputed locally (exact operations, so no drift is possible) and checked.

The reverse pass uses exact derivatives through smooth nodes and the
minimum-norm selections of ``rules`` at min and max nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import NumericError, ShapeError
from ..network import CascadeWeights, MLPWeights, cascade_eval, named_arrays
from .losses import position_losses
from .rules import grad_max, grad_min

NODE_KINDS = ("input", "normalize", "affine", "activation", "add",
              "min_reduce", "max_reduce", "loss")


@dataclass(eq=False)
class TapeNode:
    kind: str
    # each parent is (node, index) where index selects one component of a
    # vector-valued parent, or None to take its whole value
    parents: tuple = ()
    value: Any = 0.0
    active_set: tuple | None = None
    data: dict = field(default_factory=dict)
    label: tuple = ()


@dataclass
class Tape:
    nodes: list[TapeNode]
    n_params: int
    root: TapeNode | None = None
    index: dict = field(default_factory=dict)

    def __getitem__(self, key) -> TapeNode:
        return self.index[key]

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.nodes)
        return sum(1 for node in self.nodes if node.kind == kind)

    def tie_count(self) -> int:
        return sum(1 for node in self.nodes
                   if node.active_set is not None and len(node.active_set) > 1)


@dataclass
class GradResult:
    grad_params: np.ndarray
    grad_norm: float
    tie_count: int
    grad_inputs: dict = field(default_factory=dict)


def _offsets(w) -> dict[int, int]:
    out, pos = {}, 0
    for _, a in named_arrays(w):
        out[id(a)] = pos
        pos += a.size
    return out


class _Builder:
    def __init__(self, w: CascadeWeights):
        self.w = w
        self.nodes: list[TapeNode] = []
        self.index: dict = {}
        self.off = _offsets(w)
        self.n_params = sum(a.size for _, a in named_arrays(w))

    def add(self, kind, parents, value, label=(), **data) -> TapeNode:
        value = np.asarray(value, dtype=np.float64) if np.ndim(value) else float(value)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value at {kind} node {label}")
        node = TapeNode(kind, tuple(parents), value, None, data, label)
        self.nodes.append(node)
        if label:
            self.index[label] = node
        return node

    def param(self, a: np.ndarray) -> tuple[np.ndarray, int]:
        return a, self.off[id(a)]

    def mlp(self, w: MLPWeights, cache: dict, row: int, parents, label) -> TapeNode:
        cur = parents
        if w.prenorm:
            norm = self.add("normalize", cur, cache["inputs"][0][row], label + ("norm",),
                            scale=self.param(w.norm_scale), shift=self.param(w.norm_shift),
                            xhat=cache["xhat"][row], inv=float(cache["inv"][row, 0]))
            cur = [(norm, None)]
        last = len(w.linears) - 1
        node = None
        for i, lin in enumerate(w.linears):
            node = self.add("affine", cur, cache["pre"][i][row], label + ("aff", i),
                            W=self.param(lin.W), b=self.param(lin.b))
            if i < last:
                act = self.add("activation", [(node, None)], cache["inputs"][i + 1][row],
                               label + ("act", i))
                cur = [(act, None)]
        if w.residual:
            node = self._residual(node, parents, w.residual_proj, cache["res"][row],
                                  label + ("res",))
        return node

    def _residual(self, main, parents, proj, res_value, label) -> TapeNode:
        if proj is None:
            tail = list(parents)
        else:
            p = self.add("affine", parents, res_value, label + ("proj",), W=self.param(proj), b=None)
            tail = [(p, None)]
        return self.add("add", [(main, None)] + tail, main.value + res_value, label)


def _build(w: CascadeWeights, u) -> tuple[_Builder, TapeNode, list]:
    """Tape nodes for every step; returns the builder and the per-step outputs."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ShapeError(f"expected a single sequence (T, d_in), got {u.shape}")
    caches: list = []
    _, trace = cascade_eval(w, u, "sequential", caches)
    b = _Builder(w)
    T = u.shape[0]
    inputs = [b.add("input", (), u[t], ("u", t)) for t in range(T)]
    for l, (layer, lt, cache) in enumerate(zip(w.layers, trace.layers, caches)):
        n, d = layer.n_units, layer.d_state
        prev = []
        for k, unit in enumerate(layer.units):
            x0 = b.add("input", (), unit.initial_state.copy(), ("x0", l, k),
                       param=b.param(unit.initial_state))
            prev.append([(x0, i) for i in range(d)])
        outputs = []
        for t in range(T):
            up = [(inputs[t], None)]
            cur = []
            for k, unit in enumerate(layer.units):
                row = t
                R = b.mlp(unit.reset_mlp, cache["reset"][k], row, up, ("R", t, l, k))
                s = b.mlp(unit.set_mlp, cache["set"][k], row, up, ("s", t, l, k))
                xs = []
                for i in range(d):
                    zs = []
                    for j in range(d):
                        pa = [(R, i * d + j), prev[k][j]]
                        vals = [_value(p) for p in pa]
                        zv = min(vals)
                        zn = b.add("min_reduce", pa, zv, ("z", t, l, k, i, j))
                        zn.active_set = tuple(q for q, v in enumerate(vals) if v == zv)
                        zs.append((zn, None))
                    pa = zs + [(s, i)]
                    vals = [_value(p) for p in pa]
                    xv = max(vals)
                    if xv != lt.x[t + 1, k, i]:
                        raise NumericError(f"tape state disagrees with trace at {(t, l, k, i)}")
                    xn = b.add("max_reduce", pa, xv, ("x", t, l, k, i))
                    xn.active_set = tuple(q for q, v in enumerate(vals) if v == xv)
                    xs.append((xn, None))
                cur.append(xs)
            zin = [p for unit_prev in prev for p in unit_prev]
            zin += [p for unit_cur in cur for p in unit_cur] + up
            y = b.mlp(layer.output_mlp, cache["out"], t, zin, ("h", t, l))
            if layer.residual:
                y = b._residual(y, up, layer.residual_proj, cache["res"][t], ("y", t, l))
            else:
                b.index[("y", t, l)] = y
            if not np.array_equal(y.value, lt.y[t]):
                raise NumericError(f"tape output disagrees with trace at {(t, l)}")
            outputs.append(y)
            prev = cur
        inputs = outputs
    return b, inputs, trace


def _value(p) -> Any:
    node, idx = p
    return node.value if idx is None else node.value[idx]


def build_tape(w: CascadeWeights, u) -> Tape:
    """Graph of the cascade on ``u``; states are addressable as tape['x', t, l, k, i]
    (t counts from 0 for the first update) and outputs as tape['y', t, l]."""
    b, _, _ = _build(w, u)
    return Tape(b.nodes, b.n_params, None, b.index)


def build_loss_tape(w: CascadeWeights, u, target, loss_kind: str = "cross_entropy",
                    mask=None, heads: int = 1) -> Tape:
    """Graph of the masked mean loss; the root is the loss node."""
    b, outputs, _ = _build(w, u)
    T = len(outputs)
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (T,) or not mask.any():
        raise ShapeError("mask must be a non-empty boolean vector over steps")
    target = np.asarray(target)
    steps = np.flatnonzero(mask)
    Y = np.stack([outputs[t].value for t in steps])
    losses, _ = position_losses(Y, target[steps], loss_kind, heads)
    value = float(losses.sum() / len(steps))
    root = b.add("loss", [(outputs[t], None) for t in steps], value, ("loss",),
                 targets=target[steps], loss_kind=loss_kind, heads=heads)
    return Tape(b.nodes, b.n_params, root, b.index)


def _split(parents, g: np.ndarray):
    """Slice a gradient over a concatenated input back onto its parents."""
    pos = 0
    for node, idx in parents:
        size = 1 if idx is not None or np.ndim(node.value) == 0 else node.value.size
        yield (node, idx), (g[pos] if size == 1 and (idx is not None or np.ndim(node.value) == 0)
                            else g[pos:pos + size])
        pos += size


def _concat(parents) -> np.ndarray:
    return np.concatenate([np.atleast_1d(_value(p)) for p in parents])


def backward(tape: Tape, root: TapeNode | None = None, *, skip_inactive: bool = False) -> GradResult:
    """Selected derivative of ``root`` (default: the tape root) by reverse accumulation.

    With ``skip_inactive`` the adjoint is not even sent to parents outside a
    min/max node's active set; the result is the same either way.
    """
    root = root or tape.root
    if root is None:
        raise ValueError("tape has no root; pass one explicitly")
    adj: dict[int, Any] = {id(root): np.ones_like(root.value) if np.ndim(root.value) else 1.0}
    grad = np.zeros(tape.n_params)
    grad_inputs = {}

    def send(p, g):
        node, idx = p
        key = id(node)
        if idx is None:
            adj[key] = adj.get(key, 0.0) + g
        else:
            cur = adj.get(key)
            if cur is None:
                cur = adj[key] = np.zeros_like(node.value)
            cur[idx] += g

    def add_param(ref, g):
        if ref is None:
            return
        a, off = ref
        grad[off:off + a.size] += np.ravel(g)

    start = tape.nodes.index(root)
    for node in reversed(tape.nodes[:start + 1]):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite adjoint at {node.kind} node {node.label}")
        kind = node.kind
        if kind == "input":
            if "param" in node.data:
                add_param(node.data["param"], g)
            else:
                grad_inputs[node.label] = g
        elif kind == "affine":
            x = _concat(node.parents)
            W, off = node.data["W"]
            grad[off:off + W.size] += np.outer(g, x).ravel()
            add_param(node.data["b"], g)
            for p, gp in _split(node.parents, W.T @ g):
                send(p, gp)
        elif kind == "activation":
            send(node.parents[0], g * (1.0 - node.value * node.value))
        elif kind == "normalize":
            scale, _ = node.data["scale"]
            xhat, inv = node.data["xhat"], node.data["inv"]
            add_param(node.data["scale"], g * xhat)
            add_param(node.data["shift"], g)
            dxhat = g * scale
            gx = inv * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean())
            for p, gp in _split(node.parents, gx):
                send(p, gp)
        elif kind == "add":
            send(node.parents[0], g)
            for p, gp in _split(node.parents[1:], g):
                send(p, gp)
        elif kind in ("min_reduce", "max_reduce"):
            vals = np.array([_value(p) for p in node.parents])
            weights = grad_min(vals) if kind == "min_reduce" else grad_max(vals)
            for q, p in enumerate(node.parents):
                if skip_inactive and weights[q] == 0.0:
                    continue
                send(p, g * weights[q])
        elif kind == "loss":
            Y = np.stack([p[0].value for p in node.parents])
            _, dY = position_losses(Y, node.data["targets"], node.data["loss_kind"],
                                    node.data["heads"])
            dY = dY * (g / len(node.parents))
            for p, gp in zip(node.parents, dY):
                send(p, gp)
        else:
            raise ValueError(f"unknown node kind {kind!r}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite parameter gradient")
    norm = float(np.abs(grad).max()) if grad.size else 0.0
    return GradResult(grad, norm, tape.tie_count(), grad_inputs)


def node_count(w: CascadeWeights, T: int, *, loss: bool = False) -> int:
    """Closed-form number of tape nodes for ``w`` on a length-T input."""

    def mlp_nodes(m: MLPWeights) -> int:
        k = (1 if m.prenorm else 0) + 2 * len(m.linears) - 1
        if m.residual:
            k += 1 + (m.residual_proj is not None)
        return k

    total = T  # input tokens
    for layer in w.layers:
        n, d = layer.n_units, layer.d_state
        per_unit = mlp_nodes(layer.units[0].reset_mlp) + mlp_nodes(layer.units[0].set_mlp)
        per_unit += d * d + d
        per_step = n * per_unit + mlp_nodes(layer.output_mlp)
        if layer.residual:
            per_step += 1 + (layer.residual_proj is not None)
        total += n + T * per_step
    return total + (1 if loss else 0)
