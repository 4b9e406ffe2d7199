"""Binary cross-entropy, Adam and the epoch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .datakit import DatasetSplit, load_batch
from .errors import DataError, NumericError, ParameterError
from .network import Model
from .tensor import Tensor

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    online_augment: bool = True

    def __post_init__(self):
        # lr == 0 is allowed: it is the no-update control run
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class HistoryRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    val_scores: np.ndarray = field(default=None, repr=False, compare=False)
    val_labels: np.ndarray = field(default=None, repr=False, compare=False)

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.train_loss:.6f},{self.train_acc:.6f},"
            f"{self.val_loss:.6f},{self.val_acc:.6f}"
        )


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all((y == 0) | (y == 1)):
        raise DataError(f"labels must be 0 or 1, got {np.unique(y).tolist()}")
    if probs.size != y.size:
        raise DataError(f"{probs.size} probabilities for {y.size} labels")
    y = y.reshape(probs.shape)
    n = y.size
    p = np.clip(probs.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (probs.data >= PROB_CLAMP) & (probs.data <= 1.0 - PROB_CLAMP)

    def _back(g):
        return (g * inside * (p - y) / (p * (1.0 - p)) / n,)

    return T._make(np.array(value), (probs,), _back, "bce_loss")


class Adam:
    """Adam with bias correction; state is keyed by parameter id."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]) -> None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in layer {key.split('.')[0]} ({key})")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for key, g in grads.items():
            p = params[key]
            m = self.m.get(key, np.zeros_like(g))
            v = self.v.get(key, np.zeros_like(g))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[key], self.v[key] = m, v
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict(model: Model, examples, batch_size: int = 64, cache: Optional[dict] = None) -> np.ndarray:
    """Eval-mode probabilities for ``examples``, shape [N]."""
    size = model.config.input_size[0]
    out = []
    for start in range(0, len(examples), batch_size):
        x, _ = load_batch(examples[start : start + batch_size], size, cache=cache)
        out.append(model.forward(x, mode="eval").data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def _mean_bce(scores: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1.0 - p)))


def train(
    model: Model,
    split: DatasetSplit,
    augmenter=None,
    config: Optional[TrainConfig] = None,
    on_epoch: Optional[Callable[[HistoryRecord], None]] = None,
) -> list[HistoryRecord]:
    """Train in place; returns one HistoryRecord per epoch.

    Augmentation touches training images only. With ``online_augment`` the
    draw index changes every epoch, otherwise each image keeps one draw.
    """
    config = config or TrainConfig()
    if not split.train or not split.validation:
        raise DataError("training needs non-empty train and validation partitions")
    size = model.config.input_size[0]
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    shuffle_rng = np.random.default_rng([int(config.seed), 1])
    dropout_rng = np.random.default_rng([int(config.seed), 2])
    cache: dict = {}
    train_set = list(split.train)
    n = len(train_set)
    y_val = np.array([ex.label for ex in split.validation])
    history: list[HistoryRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            batch = [train_set[i] for i in idx]
            draw = [(epoch - 1) * n + int(i) if config.online_augment else int(i) for i in idx]
            x, y = load_batch(batch, size, augmenter=augmenter, indices=draw, cache=cache)
            model.zero_grad()
            try:
                probs = model.forward(x, mode="train", rng=dropout_rng)
                loss = bce_loss(probs, y)
                T.backward(loss)
                optimizer.step(model.trainable())
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum((probs.data[:, 0] >= 0.5) == (y == 1)))

        val_scores = predict(model, split.validation, config.batch_size, cache=cache)
        record = HistoryRecord(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_acc=correct / n,
            val_loss=_mean_bce(val_scores, y_val),
            val_acc=float(np.mean((val_scores >= 0.5) == (y_val == 1))),
            val_scores=val_scores,
            val_labels=y_val,
        )
        logger.info(
            "epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
            epoch, record.train_loss, record.train_acc, record.val_loss, record.val_acc,
        )
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


def write_history_csv(history, path) -> None:
    lines = [HISTORY_HEADER] + [r.csv_row() for r in history]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
