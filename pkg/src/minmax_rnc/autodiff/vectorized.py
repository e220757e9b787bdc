"""Batched reverse pass over a cascade forward evaluation.

Computes the same selected derivative as the node-level tape in ``tape.py``
(exact derivatives through the smooth blocks, uniform weights over the
active set at every min and max), but over whole arrays: the smooth blocks
are differentiated for all positions at once and only the recurrence is
walked step by step, backwards in time.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericError
from ..network import (CascadeTrace, CascadeWeights, LayerTrace, LayerWeights, Linear,
                       MLPWeights, NeuronWeights, cascade_eval)
from .losses import masked_mean_loss


def mlp_backward(w: MLPWeights, cache: dict, g: np.ndarray):
    """Returns (d loss / d input rows, gradient with the structure of ``w``)."""
    x = cache["x"]
    g_out = g
    lin_grads: list[Linear] = [None] * len(w.linears)  # type: ignore[list-item]
    for i in range(len(w.linears) - 1, -1, -1):
        h_in = cache["inputs"][i]
        lin_grads[i] = Linear(g.T @ h_in, g.sum(axis=0))
        g = g @ w.linears[i].W
        if i > 0:
            g = g * (1.0 - h_in * h_in)
    scale_g = shift_g = None
    if w.prenorm:
        xhat, inv = cache["xhat"], cache["inv"]
        scale_g = (g * xhat).sum(axis=0)
        shift_g = g.sum(axis=0)
        dxhat = g * w.norm_scale
        g = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                   - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    proj_g = None
    if w.residual:
        if w.residual_proj is None:
            g = g + g_out
        else:
            g = g + g_out @ w.residual_proj
            proj_g = g_out.T @ x
    return g, MLPWeights(lin_grads, scale_g, shift_g, w.residual, proj_g)


def mlp_bank_backward(mlps: list[MLPWeights], bank: dict, g: np.ndarray):
    """Backward of ``mlp_bank_eval``: g is (K, rows, d_out). Returns (summed dx, grads)."""
    first = mlps[0]
    K = len(mlps)
    lin_grads = [[None] * len(first.linears) for _ in range(K)]
    for i in range(len(first.linears) - 1, -1, -1):
        h_in = bank["inputs"][i]
        gW = np.matmul(g.transpose(0, 2, 1), h_in)
        gb = g.sum(axis=1)
        for k in range(K):
            lin_grads[k][i] = Linear(gW[k], gb[k])
        W = np.stack([m.linears[i].W for m in mlps])
        g = np.matmul(g, W)
        if i > 0:
            g = g * (1.0 - h_in * h_in)
    scale_g = shift_g = [None] * K
    if first.prenorm:
        xhat, inv = bank["xhat"], bank["inv"]
        scale_g = (g * xhat[None]).sum(axis=1)
        shift_g = g.sum(axis=1)
        dxhat = (g * np.stack([m.norm_scale for m in mlps])[:, None, :]).sum(axis=0)
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    else:
        dx = g.sum(axis=0)
    grads = [MLPWeights(lin_grads[k], scale_g[k], shift_g[k], False, None) for k in range(K)]
    return dx, grads


def _units_backward(mlps, caches, g):
    """Backward through one MLP per unit; g is (n_units, rows, d_out)."""
    bank = getattr(caches, "bank", None)
    if bank is not None:
        return mlp_bank_backward(mlps, bank, g)
    dx, grads = 0.0, []
    for m, c, gk in zip(mlps, caches, g):
        d, mg = mlp_backward(m, c, gk)
        dx = dx + d
        grads.append(mg)
    return dx, grads


def recurrence_backward(R, s, x, gx):
    """Adjoint sweep through x_t = max(max_j min(R_t[i, j], x_{t-1}[j]), s_t[i]).

    R: (B, T, n, d, d), s: (B, T, n, d), x: (B, T+1, n, d) with x[:, 0] the
    initial state. ``gx`` (same shape as x) holds the adjoints reaching each
    state from outside the recurrence and is updated in place. Returns (gR, gs).
    """
    T = R.shape[1]
    gR = np.zeros_like(R)
    gs = np.zeros_like(s)
    for t in range(T, 0, -1):
        A, b = R[:, t - 1], s[:, t - 1]
        xp, xc = x[:, t - 1], x[:, t]
        z = np.minimum(A, xp[..., None, :])
        # max node over (z_i1..z_id, s_i)
        eqz = z == xc[..., None]
        eqb = b == xc
        cnt = eqz.sum(axis=-1) + eqb
        g = gx[:, t]
        gs[:, t - 1] = g * (eqb / cnt)
        gz = g[..., None] * (eqz / cnt[..., None])
        # min node over (R_ij, x_{t-1, j})
        eqA = A == z
        eqX = xp[..., None, :] == z
        c = eqA.astype(np.int64) + eqX
        gR[:, t - 1] = gz * (eqA / c)
        gx[:, t - 1] += (gz * (eqX / c)).sum(axis=-2)
    return gR, gs


def layer_backward(w: LayerWeights, lt: LayerTrace, cache: dict, gY: np.ndarray):
    B, T, _ = gY.shape
    n, d = w.n_units, w.d_state
    flat_gY = gY.reshape(B * T, -1)
    proj_g = None
    if w.residual:
        if w.residual_proj is None:
            gU = gY.copy()
        else:
            gU = gY @ w.residual_proj
            proj_g = flat_gY.T @ lt.u.reshape(B * T, -1)
    else:
        gU = np.zeros_like(lt.u)
    gz, out_g = mlp_backward(w.output_mlp, cache["out"], flat_gY)
    gz = gz.reshape(B, T, -1)
    nd = n * d
    gx = np.zeros_like(lt.x)
    gx[:, :-1] += gz[..., :nd].reshape(B, T, n, d)
    gx[:, 1:] += gz[..., nd:2 * nd].reshape(B, T, n, d)
    gU += gz[..., 2 * nd:]

    gR, gs = recurrence_backward(lt.R, lt.s, lt.x, gx)
    gflat = gU.reshape(B * T, -1)
    gR = gR.reshape(B * T, n, d * d).transpose(1, 0, 2)
    gs = gs.reshape(B * T, n, d).transpose(1, 0, 2)
    du_r, r_grads = _units_backward([u.reset_mlp for u in w.units], cache["reset"], gR)
    du_s, s_grads = _units_backward([u.set_mlp for u in w.units], cache["set"], gs)
    gflat += du_r + du_s
    unit_grads = [NeuronWeights(r_g, s_g, gx[:, 0, k].sum(axis=0))
                  for k, (r_g, s_g) in enumerate(zip(r_grads, s_grads))]
    return LayerWeights(unit_grads, out_g, w.residual, proj_g), gflat.reshape(lt.u.shape)


def cascade_backward(w: CascadeWeights, trace: CascadeTrace, caches: list, gY: np.ndarray):
    """Gradient tree (shaped like ``w``) and the adjoint of the cascade input."""
    layer_grads = []
    g = gY
    for layer, lt, cache in zip(reversed(w.layers), reversed(trace.layers), reversed(caches)):
        lg, g = layer_backward(layer, lt, cache, g)
        layer_grads.append(lg)
    return CascadeWeights(layer_grads[::-1], w.dims), g


def loss_and_grad(w: CascadeWeights, U, targets, mask, loss_kind: str = "cross_entropy",
                  heads: int = 1):
    """Forward + backward on a batch. Returns (loss, grads, gU, Y, trace)."""
    U = np.asarray(U, dtype=np.float64)
    single = U.ndim == 2
    if single:
        U, targets, mask = U[None], np.asarray(targets)[None], np.asarray(mask)[None]
    caches: list = []
    Y, trace = cascade_eval(w, U, "sequential", caches)
    loss, gY = masked_mean_loss(Y, targets, mask, loss_kind, heads)
    grads, gU = cascade_backward(w, trace, caches, gY)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    if single:
        return loss, grads, gU[0], Y[0], trace.squeeze()
    return loss, grads, gU, Y, trace


def tie_stats(trace: CascadeTrace) -> tuple[int, int]:
    """(tied, total) count of min and max nodes in the selected graph of ``trace``."""
    tied = total = 0
    for lt in trace.layers:
        R, s, x = lt.R, lt.s, lt.x
        if R.ndim == 4:  # unbatched trace
            R, s, x = R[None], s[None], x[None]
        xp = x[:, :-1]
        z = np.minimum(R, xp[..., None, :])
        tied += int(np.count_nonzero(R == xp[..., None, :]))
        cnt = (z == x[:, 1:, ..., None]).sum(axis=-1) + (s == x[:, 1:])
        tied += int(np.count_nonzero(cnt > 1))
        total += R.size + s.size
    return tied, total
