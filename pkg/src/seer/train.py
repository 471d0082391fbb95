"""Mini-batch Adam training with global-norm gradient clipping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError
from .rnn import RnnConfig, RnnModel, forward, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    grad_norm: float
    seconds: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].accuracy if self.epochs else float("nan")

    def table(self) -> str:
        rows = ["epoch      loss   accuracy  grad-norm   seconds"]
        rows += [f"{e.epoch:5d}  {e.loss:8.5f}   {e.accuracy:8.4f}  {e.grad_norm:9.4f}  {e.seconds:8.2f}"
                 for e in self.epochs]
        return "\n".join(rows)

    def to_dict(self) -> list[dict]:
        return [vars(e).copy() for e in self.epochs]


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the raw norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def accuracy(x, y, model: RnnModel, batch: int = 1024) -> float:
    hits = 0
    for i in range(0, len(x), batch):
        hits += int(np.sum(np.argmax(forward(x[i:i + batch], model), axis=-1) == y[i:i + batch]))
    return hits / y.size


def train(x, y, config: RnnConfig, model: RnnModel | None = None,
          progress=None) -> tuple[RnnModel, TrainingLog]:
    """Train on features ``(N, T, D)`` and labels ``(N, T)``.

    Shuffling and initialization draw from ``config.seed`` only, so repeated
    runs on the same data give identical weights.  ``progress`` is called with
    each :class:`EpochStats`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or len(x) == 0:
        raise DataError("training set is empty")
    if y.shape != x.shape[:2]:
        raise DataError(f"labels {y.shape} do not match features {x.shape[:2]}")
    if x.shape[1] != config.T or x.shape[2] != config.input_dim:
        raise DataError(f"data (T={x.shape[1]}, D={x.shape[2]}) does not match the model "
                        f"(T={config.T}, D={config.input_dim})")
    if config.epochs < 1:
        raise DataError("need at least one epoch")
    model = model.copy() if model is not None else RnnModel.initialize(config)
    opt = Adam(model.params, config.learning_rate, config.betas, config.eps)
    rng = np.random.default_rng([config.seed, 1])
    history = TrainingLog()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        total, weight, norms = 0.0, 0, []
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = loss_and_grads(x[idx], y[idx], model)
            if not math.isfinite(value):
                raise TrainingError("loss is not finite", epoch)
            norms.append(clip_by_global_norm(grads, config.clip_norm))
            if not math.isfinite(norms[-1]):
                raise TrainingError("gradient is not finite", epoch)
            opt.step(model.params, grads)
            total += value * len(idx)
            weight += len(idx)
        stats = EpochStats(epoch, total / weight, accuracy(x, y, model), float(np.mean(norms)),
                           time.perf_counter() - t0)
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise TrainingError("parameters diverged", epoch)
        history.epochs.append(stats)
        log.info("epoch %d loss %.5f acc %.4f", epoch, stats.loss, stats.accuracy)
        if progress is not None:
            progress(stats)
    return model, history
