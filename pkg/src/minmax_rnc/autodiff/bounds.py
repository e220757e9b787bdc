"""Measured constants for the bounded-gradient guarantee of a cascade.

With B_R, B_s, B_h the largest row norms (L1 over inputs and parameters) of
the Jacobians of the reset, set and output maps along a trace, and B_loss
the largest L1 norm of d loss_t / d y_t, the selected derivative satisfies

    |grad|_1 <= B_loss * (max(1, B_R, B_s) * max(1, B_h)) ** n_layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import CascadeWeights, LayerWeights, MLPWeights, cascade_eval
from .losses import position_losses


@dataclass(frozen=True)
class GradientBound:
    B_R: float
    B_s: float
    B_h: float
    B_loss: float
    n_layers: int

    @property
    def B_1Rs(self) -> float:
        return max(1.0, self.B_R, self.B_s)

    @property
    def B_1h(self) -> float:
        return max(1.0, self.B_h)

    @property
    def value(self) -> float:
        return self.B_loss * (self.B_1Rs * self.B_1h) ** self.n_layers


def mlp_row_norms(w: MLPWeights, cache: dict, u_cols: slice | None = None,
                  layer: LayerWeights | None = None) -> np.ndarray:
    """L1 norm of each output's Jacobian row over (input, parameters), per cache row.

    When ``layer`` is given its residual path (input columns ``u_cols``) is
    included, so the rows describe the full layer output map. Returns (rows, d_out).
    """
    x = cache["x"]
    rows, d_out = x.shape[0], w.d_out
    out = np.empty((rows, d_out))
    in_norms = [np.abs(h).sum(axis=1) + 1.0 for h in cache["inputs"]]
    for o in range(d_out):
        g = np.zeros((rows, d_out))
        g[:, o] = 1.0
        params = np.zeros(rows)
        for i in range(len(w.linears) - 1, -1, -1):
            params += np.abs(g).sum(axis=1) * in_norms[i]
            h_in = cache["inputs"][i]
            g = g @ w.linears[i].W
            if i > 0:
                g = g * (1.0 - h_in * h_in)
        if w.prenorm:
            xhat, inv = cache["xhat"], cache["inv"]
            params += np.abs(g * xhat).sum(axis=1) + np.abs(g).sum(axis=1)
            dxhat = g * w.norm_scale
            g = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                       - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        for res, proj, cols in ((w.residual, w.residual_proj, slice(None)),
                                (layer is not None and layer.residual,
                                 layer.residual_proj if layer is not None else None, u_cols)):
            if not res:
                continue
            src = x[:, cols]
            if proj is None:
                g[:, cols] = g[:, cols] + np.eye(src.shape[1])[o]
            else:
                g[:, cols] = g[:, cols] + proj[o]
                params += np.abs(src).sum(axis=1)
        out[:, o] = np.abs(g).sum(axis=1) + params
    return out


def measure_bound(w: CascadeWeights, U, targets, mask=None, loss_kind: str = "cross_entropy",
                  heads: int = 1) -> GradientBound:
    """Constants measured on the trace of ``U`` (a single sequence or a batch)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 2:
        U, targets = U[None], np.asarray(targets)[None]
        mask = None if mask is None else np.asarray(mask)[None]
    caches: list = []
    Y, _ = cascade_eval(w, U, "sequential", caches)
    B_R = B_s = B_h = 0.0
    for layer, cache in zip(w.layers, caches):
        for k, unit in enumerate(layer.units):
            B_R = max(B_R, mlp_row_norms(unit.reset_mlp, cache["reset"][k]).max())
            B_s = max(B_s, mlp_row_norms(unit.set_mlp, cache["set"][k]).max())
        z_dim = layer.output_mlp.d_in
        u_cols = slice(z_dim - layer.d_in, z_dim)
        B_h = max(B_h, mlp_row_norms(layer.output_mlp, cache["out"], u_cols, layer).max())
    _, dY = position_losses(Y, targets, loss_kind, heads)
    norms = np.abs(dY).sum(axis=-1)
    if mask is not None:
        norms = norms[np.asarray(mask, dtype=bool).reshape(norms.shape)]
    return GradientBound(float(B_R), float(B_s), float(B_h), float(norms.max()), len(w.layers))
