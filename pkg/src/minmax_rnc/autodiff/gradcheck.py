"""Central finite-difference check of the selected derivative."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..network import CascadeWeights, cascade_eval, flatten, named_arrays, unflatten
from .losses import masked_mean_loss
from .tape import backward, build_loss_tape


@dataclass
class FDEntry:
    index: int
    name: str
    fd: float
    backward: float
    rel_error: float | None  # None when both values are below the magnitude floor


@dataclass
class FDReport:
    epsilon: float
    entries: list[FDEntry] = field(default_factory=list)
    excluded: list[tuple[int, str]] = field(default_factory=list)
    tie_count: int = 0

    @property
    def max_rel_error(self) -> float:
        errs = [e.rel_error for e in self.entries if e.rel_error is not None]
        return max(errs) if errs else 0.0

    def to_text(self) -> str:
        lines = [f"gradcheck epsilon={self.epsilon:g} checked={len(self.entries)} "
                 f"excluded={len(self.excluded)} ties={self.tie_count} "
                 f"max_rel_error={self.max_rel_error:.3e}"]
        for e in self.entries:
            rel = "n/a" if e.rel_error is None else f"{e.rel_error:.3e}"
            lines.append(f"param {e.index} {e.name} fd={e.fd:.12e} backward={e.backward:.12e} rel={rel}")
        for idx, name in self.excluded:
            lines.append(f"excluded {idx} {name} reason=active-set-change")
        return "\n".join(lines)


def param_names(w) -> list[str]:
    names = []
    for path, a in named_arrays(w):
        names.extend(f"{path}[{i}]" for i in range(a.size))
    return names


def active_signature(w: CascadeWeights, u) -> bytes:
    """Fingerprint of every min/max node's active set on input ``u``."""
    _, trace = cascade_eval(w, np.asarray(u, dtype=np.float64))
    parts = []
    for lt in trace.layers:
        xp, xc = lt.x[:-1], lt.x[1:]
        z = np.minimum(lt.R, xp[..., None, :])
        parts += [lt.R == z, xp[..., None, :] == z, z == xc[..., None], lt.s == xc]
    return b"".join(np.packbits(p.ravel()).tobytes() for p in parts)


def _loss(w, u, target, mask, loss_kind, heads) -> float:
    Y, _ = cascade_eval(w, u)
    return masked_mean_loss(Y, target, mask, loss_kind, heads)[0]


def finite_diff_check(w: CascadeWeights, u, target, loss_kind: str = "cross_entropy",
                      epsilon: float = 1e-5, subset_size: int = 20, seed: int = 0, *,
                      mask=None, heads: int = 1, floor: float = 1e-8) -> FDReport:
    """Compare backward against central differences on a seeded parameter subset.

    Parameters whose +-epsilon perturbation changes any active set are excluded,
    since the loss is not differentiable across such a switch at this scale.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    u = np.asarray(u, dtype=np.float64)
    T = u.shape[0]
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    tape = build_loss_tape(w, u, target, loss_kind, mask, heads)
    result = backward(tape)
    theta = flatten(w)
    names = param_names(w)
    rng = np.random.default_rng(seed)
    picks = rng.choice(theta.size, size=min(subset_size, theta.size), replace=False)
    base_sig = active_signature(w, u)
    report = FDReport(epsilon, tie_count=result.tie_count)
    for idx in sorted(int(i) for i in picks):
        vals = []
        crossed = False
        for sign in (1.0, -1.0):
            th = theta.copy()
            th[idx] += sign * epsilon
            wp = unflatten(w, th)
            if active_signature(wp, u) != base_sig:
                crossed = True
                break
            vals.append(_loss(wp, u, target, mask, loss_kind, heads))
        if crossed:
            report.excluded.append((idx, names[idx]))
            continue
        fd = (vals[0] - vals[1]) / (2 * epsilon)
        bw = float(result.grad_params[idx])
        scale = max(abs(fd), abs(bw))
        rel = abs(fd - bw) / scale if scale > floor else None
        report.entries.append(FDEntry(idx, names[idx], fd, bw, rel))
    return report
