"""Training loop, evaluation and telemetry for token-sequence tasks.

A model is a learned token embedding feeding a MinMax cascade. Optimisation
is Adam with decoupled weight decay on the mean loss over masked positions.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.losses import masked_mean_loss, predictions
from .autodiff.vectorized import cascade_backward, tie_stats
from .errors import NumericError
from .network import (CascadeWeights, Dims, cascade_eval, closure_bound, count_params, fill_from_arrays,
                      flatten, init_weights, max_state_abs, read_checkpoint, save_checkpoint, unflatten,
                      value_closure_ok)
from .tasks import TaskSpec, generate_batch

log = logging.getLogger(__name__)


# -- configuration -----------------------------------------------------------------

@dataclass
class ModelConfig:
    d_in: int = 32
    d_model: int = 32
    d_state: int = 1
    n_units: int = 8
    n_layers: int = 2
    d_mlp: int = 64
    n_mlp: int = 1
    prenorm: bool = True
    residual: bool = True


@dataclass
class TaskConfig:
    kind: str = "latching"
    n: int = 4
    window: int = 30  # induction heads: first-marker window while training
    eval_window: int = 50  # ... and for validation / evaluation
    n_filler: int | None = None

    def spec(self, length: int, seed: int = 0, evaluation: bool = False) -> TaskSpec:
        return TaskSpec(self.kind, self.n, length, seed,
                        window=self.eval_window if evaluation else self.window, n_filler=self.n_filler)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_steps: int = 1000
    train_lengths: list[int] = field(default_factory=lambda: [64])
    val_lengths: list[int] = field(default_factory=lambda: [2048])
    eval_lengths: list[int] = field(default_factory=lambda: [16384])
    train_samples: int = 20000
    val_samples: int = 1000
    eval_samples: int = 1000
    seed: int = 0
    log_every: int = 50
    val_every: int = 250
    target_accuracy: float | None = None  # stop once every val length reaches it
    budget_seconds: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.task, dict):
            self.task = TaskConfig(**self.task)
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")
        for name in ("train_lengths", "val_lengths", "eval_lengths"):
            lengths = list(getattr(self, name))
            if any(int(v) < 1 for v in lengths):
                raise ValueError(f"{name} must be positive")
            setattr(self, name, [int(v) for v in lengths])
        if not self.train_lengths:
            raise ValueError("train_lengths must not be empty")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def dims_for(model: ModelConfig, task: TaskConfig) -> Dims:
    d_out = task.spec(8).d_out
    return Dims(model.d_in, d_out, model.d_model, model.d_state, model.n_units,
                model.n_layers, model.d_mlp, model.n_mlp)


# -- model ---------------------------------------------------------------------------

@dataclass
class Model:
    embedding: np.ndarray  # (vocab, d_in)
    cascade: CascadeWeights


def init_model(model: ModelConfig, task: TaskConfig, seed: int) -> Model:
    dims = dims_for(model, task)
    cascade = init_weights(dims, seed, prenorm=model.prenorm, residual=model.residual)
    rng = np.random.default_rng([seed, 1])
    vocab = task.spec(8).vocab_size
    return Model(rng.uniform(-1.0, 1.0, (vocab, model.d_in)), cascade)


def model_params(model: ModelConfig, task: TaskConfig) -> int:
    """Parameter count including the embedding table."""
    vocab = task.spec(8).vocab_size
    return count_params(dims_for(model, task), prenorm=model.prenorm,
                        residual=model.residual) + vocab * model.d_in


def forward(m: Model, tokens: np.ndarray, caches: list | None = None):
    return cascade_eval(m.cascade, m.embedding[tokens], "sequential", caches)


def loss_and_grad(m: Model, tokens, targets, mask, loss_kind: str, heads: int):
    """Mean masked loss, its gradient (shaped like ``m``) and the forward trace."""
    caches: list = []
    Y, trace = forward(m, tokens, caches)
    loss, gY = masked_mean_loss(Y, targets, mask, loss_kind, heads)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    g_cascade, gU = cascade_backward(m.cascade, trace, caches, gY)
    g_emb = np.zeros_like(m.embedding)
    np.add.at(g_emb, tokens.ravel(), gU.reshape(-1, gU.shape[-1]))
    return loss, Model(g_emb, g_cascade), Y, trace


# -- optimiser --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(weights, grads, moments: AdamState, config: TrainConfig, step_index: int):
    """One Adam update with decoupled weight decay; ``step_index`` counts from 1.

    Works on any weight tree (or flat vector). Returns (new weights, new moments).
    """
    theta = flatten(weights) if not isinstance(weights, np.ndarray) else weights
    g = flatten(grads) if not isinstance(grads, np.ndarray) else grads
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericError(f"non-finite gradient at parameter {bad} (step {step_index})")
    b1, b2 = config.beta1, config.beta2
    m = b1 * moments.m + (1 - b1) * g
    v = b2 * moments.v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** step_index)
    v_hat = v / (1 - b2 ** step_index)
    new = theta * (1 - config.lr * config.weight_decay) - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    out = new if isinstance(weights, np.ndarray) else unflatten(weights, new)
    return out, AdamState(m, v)


# -- metrics, evaluation, telemetry ------------------------------------------------------------

@dataclass
class Metrics:
    step: int
    train_loss: float
    val_accuracy: dict = field(default_factory=dict)
    grad_norm: float = 0.0
    tie_fraction: float = 0.0
    max_state_abs: float = 0.0
    elapsed: float = 0.0

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["val_accuracy"] = {str(k): v for k, v in self.val_accuracy.items()}
        return json.dumps(d)


def sample_accuracy(Y, targets, mask, heads: int) -> np.ndarray:
    """Per-sample fraction of masked positions where every head is correct."""
    pred = predictions(Y, heads)
    hit = pred == targets
    if heads > 1:
        hit = hit.all(axis=-1)
    return (hit & mask).sum(axis=-1) / mask.sum(axis=-1)


def evaluate(m: Model, task: TaskConfig, lengths, n_samples: int, seed: int = 0,
             max_rows: int = 1 << 17) -> dict[int, float]:
    """Mean per-sample accuracy at each length (samples drawn with the eval window)."""
    out = {}
    for L in lengths:
        spec = task.spec(L, seed, evaluation=True)
        chunk = max(1, min(n_samples, max_rows // L))
        accs = []
        for start in range(0, n_samples, chunk):
            count = min(chunk, n_samples - start)
            samples = [spec.generate((seed, L, start + i)) for i in range(count)]
            tokens = np.stack([s.tokens for s in samples])
            targets = np.stack([s.targets for s in samples])
            mask = np.stack([s.loss_mask for s in samples])
            Y, _ = forward(m, tokens)
            accs.append(sample_accuracy(Y, targets, mask, spec.heads))
        out[int(L)] = float(np.concatenate(accs).mean())
    return out


@dataclass
class Telemetry:
    grad_norm: float
    tie_fraction: float
    max_state_abs: float
    closure_ok: bool
    closure_bound: float


def telemetry_probe(m: Model, batch, task: TaskConfig | None = None) -> Telemetry:
    """Gradient infinity-norm, tie fraction and state statistics on one batch."""
    tokens, targets, mask = batch
    spec = (task or TaskConfig()).spec(8)
    _, grads, _, trace = loss_and_grad(m, tokens, targets, mask, "cross_entropy", spec.heads)
    tied, total = tie_stats(trace)
    return Telemetry(float(np.abs(flatten(grads)).max()), tied / max(total, 1), max_state_abs(trace),
                     value_closure_ok(trace), closure_bound(trace))


# -- checkpoints --------------------------------------------------------------------------------

def save_model(path, m: Model, config: TrainConfig, step: int = 0, extra: dict | None = None) -> None:
    meta = {"arch": {"prenorm": config.model.prenorm, "residual": config.model.residual},
            "config": config.to_dict(), "step": step, **(extra or {})}
    save_checkpoint(path, m, dims=m.cascade.dims, seed=config.seed, meta=meta)


def load_model(path) -> tuple[Model, TrainConfig, dict]:
    header, arrays = read_checkpoint(path)
    if header["kind"] != "Model":
        raise ValueError(f"checkpoint holds a {header['kind']}, not a Model")
    config = TrainConfig(**header["meta"]["config"])
    template = init_model(config.model, config.task, 0)
    if dataclasses.asdict(template.cascade.dims) != header["dims"]:
        raise ValueError("checkpoint dims disagree with its configuration")
    return fill_from_arrays(template, arrays), config, header


# -- training ------------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    history: list[Metrics]
    steps: int
    stopped: str  # max_steps | target | budget
    best_val: dict = field(default_factory=dict)


def _train_batch(config: TrainConfig, step: int):
    rng = np.random.default_rng([config.seed, 2, step])
    L = int(rng.choice(config.train_lengths))
    idx = rng.choice(config.train_samples, size=config.batch_size, replace=config.batch_size > config.train_samples)
    spec = config.task.spec(L)
    samples = [spec.generate((config.seed, 3, int(i), L)) for i in idx]
    return (np.stack([s.tokens for s in samples]), np.stack([s.targets for s in samples]),
            np.stack([s.loss_mask for s in samples]))


def train(config: TrainConfig, *, out_dir=None, init: Model | None = None,
          metrics_path=None) -> TrainResult:
    """Adam training with periodic validation; deterministic for a given config.

    Writes ``metrics.jsonl`` and ``checkpoint.npz`` (best validation model)
    under ``out_dir`` when given.
    """
    t0 = time.monotonic()
    heads = config.task.spec(8).heads
    m = init if init is not None else init_model(config.model, config.task, config.seed)
    moments = AdamState.zeros(flatten(m).size)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = metrics_path or out_dir / "metrics.jsonl"
    log_fh = open(metrics_path, "w") if metrics_path is not None else None
    history: list[Metrics] = []
    best_val, best_model, best_step = {}, m, 0
    stopped = "max_steps"
    step = 0
    try:
        for step in range(1, config.max_steps + 1):
            tokens, targets, mask = _train_batch(config, step)
            loss, grads, _, trace = loss_and_grad(m, tokens, targets, mask, "cross_entropy", heads)
            g = flatten(grads)
            m, moments = adam_step(m, g, moments, config, step)
            do_val = config.val_every > 0 and (step % config.val_every == 0 or step == config.max_steps)
            if step % config.log_every == 0 or do_val or step == 1:
                tied, total = tie_stats(trace)
                rec = Metrics(step, float(loss), {}, float(np.abs(g).max()), tied / max(total, 1),
                              max_state_abs(trace), time.monotonic() - t0)
                if do_val and config.val_lengths:
                    rec.val_accuracy = evaluate(m, config.task, config.val_lengths, config.val_samples,
                                                seed=config.seed + 1)
                    if not best_val or min(rec.val_accuracy.values()) > min(best_val.values()):
                        best_val, best_model, best_step = rec.val_accuracy, m, step
                        if out_dir is not None:
                            save_model(out_dir / "checkpoint.npz", m, config, step, {"val": best_val})
                rec.elapsed = time.monotonic() - t0
                history.append(rec)
                log.info("%s", rec.to_json())
                if log_fh is not None:
                    log_fh.write(rec.to_json() + "\n")
                    log_fh.flush()
                if (config.target_accuracy is not None and rec.val_accuracy
                        and min(rec.val_accuracy.values()) >= config.target_accuracy):
                    stopped = "target"
                    break
            if config.budget_seconds is not None and time.monotonic() - t0 > config.budget_seconds:
                stopped = "budget"
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    final = best_model if best_val else m
    if out_dir is not None and not best_val:
        save_model(out_dir / "checkpoint.npz", final, config, step)
    return TrainResult(final, history, step, stopped, best_val)


def find_width(model: ModelConfig, task: TaskConfig, target: int, field_name: str = "d_mlp") -> ModelConfig:
    """Smallest value of ``field_name`` whose parameter count reaches ``target``."""
    lo, hi = 1, 1
    while model_params(dataclasses.replace(model, **{field_name: hi}), task) < target:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if model_params(dataclasses.replace(model, **{field_name: mid}), task) < target:
            lo = mid + 1
        else:
            hi = mid
    return dataclasses.replace(model, **{field_name: lo})
