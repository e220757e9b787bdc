"""Per-position losses and their gradients with respect to the network output.

Outputs are read as ``heads`` independent classifiers over ``d_out // heads``
classes (cross-entropy) or as a real vector (squared error). The batch loss
is the mean over positions where the mask is true.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError

LOSS_KINDS = ("cross_entropy", "mse")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def position_losses(Y: np.ndarray, targets: np.ndarray, loss_kind: str, heads: int = 1):
    """Loss at every position and its gradient d loss / d Y (same shape as Y).

    Y: (..., d_out). For cross-entropy, targets are integer class ids of shape
    (...) when heads == 1, else (..., heads). For mse, targets match Y.
    """
    if loss_kind == "cross_entropy":
        lead = Y.shape[:-1]
        if Y.shape[-1] % heads:
            raise ShapeError(f"d_out={Y.shape[-1]} not divisible by heads={heads}")
        C = Y.shape[-1] // heads
        tgt = np.asarray(targets).reshape(lead + (heads,)).astype(np.int64)
        Z = Y.reshape(lead + (heads, C))
        logp = _log_softmax(Z)
        picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
        loss = -picked.mean(axis=-1)
        grad = np.exp(logp)
        np.put_along_axis(grad, tgt[..., None],
                          np.take_along_axis(grad, tgt[..., None], axis=-1) - 1.0, axis=-1)
        return loss, (grad / heads).reshape(Y.shape)
    if loss_kind == "mse":
        tgt = np.asarray(targets, dtype=np.float64).reshape(Y.shape)
        diff = Y - tgt
        D = Y.shape[-1]
        return (diff * diff).mean(axis=-1), 2.0 * diff / D
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def masked_mean_loss(Y, targets, mask, loss_kind: str, heads: int = 1):
    """Mean loss over masked positions and its gradient with respect to Y."""
    loss, grad = position_losses(Y, targets, loss_kind, heads)
    mask = np.asarray(mask, dtype=bool).reshape(loss.shape)
    count = int(mask.sum())
    if count == 0:
        raise ShapeError("mask selects no position")
    value = float(loss[mask].sum() / count)
    grad = grad * (mask[..., None] / count)
    return value, grad


def predictions(Y: np.ndarray, heads: int = 1) -> np.ndarray:
    """Arg-max class per head; shape (...) if heads == 1 else (..., heads)."""
    C = Y.shape[-1] // heads
    pred = Y.reshape(Y.shape[:-1] + (heads, C)).argmax(axis=-1)
    return pred[..., 0] if heads == 1 else pred
