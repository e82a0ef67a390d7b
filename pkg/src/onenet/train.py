"""Loss, optimiser, schedule, metrics and the train / eval loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SampleBatch
from .errors import ConfigError, DataError, DimensionError, TrainingDiverged
from .nn import Module, Parameter
from .tensor import Tensor, record

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-4
    lr_decay: float = 0.1
    decay_every: int = 20
    decay_start: int = 50
    batch_size: int = 16
    background_weight: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0 or self.batch_size < 1:
            raise ConfigError("epochs, lr must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_decay <= 1 or self.decay_every < 1 or self.decay_start < 0:
            raise ConfigError("lr_decay must lie in (0, 1], decay_every >= 1, decay_start >= 0")
        if self.background_weight <= 0:
            raise ConfigError("background_weight must be positive")


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    """Step schedule: first decay at ``decay_start``, then every ``decay_every`` epochs."""
    if epoch < config.decay_start:
        return config.lr
    steps = (epoch - config.decay_start) // config.decay_every + 1
    return config.lr * config.lr_decay ** steps


def class_weights(num_classes: int, background_weight: float = 0.25) -> np.ndarray:
    w = np.ones(num_classes)
    w[0] = background_weight
    return w


def weighted_cross_entropy(logits: Tensor, target: np.ndarray,
                           weights: Optional[np.ndarray] = None) -> Tensor:
    """Class-weighted softmax cross-entropy over ``logits[B, K, ...]``.

    The weighted per-pixel losses are normalised by the sum of the weights that
    were applied, so down-weighting the background shifts emphasis rather than
    shrinking the loss.
    """
    K = logits.shape[1]
    target = np.asarray(target)
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise DimensionError(f"target {target.shape} does not match logits {logits.shape}")
    if not np.issubdtype(target.dtype, np.integer):
        raise DataError("target must hold integer class ids")
    if target.min() < 0 or target.max() >= K:
        raise DataError(f"target class ids must lie in [0, {K})")
    weights = class_weights(K) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (K,):
        raise DimensionError(f"weights {weights.shape} do not match {K} classes")

    z = np.moveaxis(logits.data, 1, -1)  # [..., K]
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=-1, keepdims=True)
    logp = z - zmax - np.log(denom)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    w = weights[target].astype(logits.dtype)
    total_w = w.sum()
    loss = -(w * picked).sum() / total_w

    def _backward(g):
        p = ez / denom
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, target[..., None], 1.0, axis=-1)
        grad = (p - onehot) * (w / total_w)[..., None] * g[0]
        return (np.moveaxis(grad, -1, 1).astype(logits.dtype),)

    return record("weighted_ce", np.asarray([loss], dtype=logits.dtype), (logits,), _backward)


# -- Adam ------------------------------------------------------------------------
def adam_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place. ``state`` starts as ``{}``."""
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
    if len(state["m"]) != len(params):
        raise DimensionError("optimizer state does not match the parameter list")
    state["t"] += 1
    t = state["t"]
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict = {}

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr,
                  self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- metrics -------------------------------------------------------------------------
@dataclass
class MetricsReport:
    ce_loss: float
    mean_iou: float
    dice: float
    pixel_accuracy: float


def confusion_matrix(pred: np.ndarray, target: np.ndarray, num_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts pixels of true class ``t`` predicted as ``p``."""
    idx = num_classes * np.asarray(target).reshape(-1) + np.asarray(pred).reshape(-1)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def scores_from_confusion(cm: np.ndarray) -> tuple[float, float, float]:
    """(mIoU, Dice, pixel accuracy). Classes absent from both sides are skipped."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    if not present.any():
        raise DataError("empty confusion matrix")
    iou = tp[present] / (tp + fp + fn)[present]
    dice = 2 * tp[present] / (2 * tp + fp + fn)[present]
    return float(iou.mean()), float(dice.mean()), float(tp.sum() / cm.sum())


def evaluate(net: Module, batches: Sequence[SampleBatch], weights: Optional[np.ndarray] = None) -> MetricsReport:
    """Eval-mode metrics over ``batches``; losses are pixel-weighted over the whole set."""
    if not batches:
        raise DataError("evaluate needs at least one batch")
    K = net.config.num_classes
    cm = np.zeros((K, K), dtype=np.int64)
    weights = class_weights(K) if weights is None else weights
    loss_num = loss_den = 0.0
    for b in batches:
        logits = net(b.images, train=False)
        loss = weighted_cross_entropy(logits, b.masks, weights).item()
        wsum = float(weights[b.masks].sum())
        loss_num += loss * wsum
        loss_den += wsum
        cm += confusion_matrix(logits.data.argmax(axis=1), b.masks, K)
    miou, dice, acc = scores_from_confusion(cm)
    return MetricsReport(loss_num / loss_den, miou, dice, acc)


def predict(net: Module, images: Tensor) -> np.ndarray:
    return net(images, train=False).data.argmax(axis=1)


# -- training loop ---------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    metrics: MetricsReport


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict = field(default_factory=dict)

    @property
    def best(self) -> Optional[EpochRecord]:
        return self.history[self.best_epoch] if self.best_epoch >= 0 else None

    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.history]


def _snapshot(net: Module) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in net.state().items()}


def restore(net: Module, snapshot: dict[str, np.ndarray]) -> None:
    for k, v in net.state().items():
        v.data[...] = snapshot[k]


def train(net: Module, config: TrainConfig, data: Sequence[SampleBatch],
          eval_data: Optional[Sequence[SampleBatch]] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Adam over ``data`` for ``config.epochs`` epochs with the step schedule.

    Batch order is reshuffled every epoch from ``config.seed``. Each epoch is
    scored on ``eval_data`` (default: ``data``) and the weights of the best
    mIoU epoch are kept in ``TrainResult.best_state``.
    """
    if not data:
        raise DataError("train needs at least one batch")
    K = net.config.num_classes
    weights = class_weights(K, config.background_weight)
    opt = Adam(net.parameters())
    rng = np.random.default_rng(config.seed)
    result = TrainResult()
    eval_data = data if eval_data is None else eval_data
    best_miou = -math.inf

    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config)
        total = 0.0
        count = 0
        for bi in rng.permutation(len(data)):
            batch = data[bi]
            loss = weighted_cross_entropy(net(batch.images, train=True), batch.masks, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total += value * len(batch)
            count += len(batch)
        metrics = evaluate(net, eval_data, weights)
        rec = EpochRecord(epoch, lr, total / count, metrics)
        result.history.append(rec)
        if metrics.mean_iou > best_miou:
            best_miou = metrics.mean_iou
            result.best_epoch = epoch
            result.best_state = _snapshot(net)
        logger.info("epoch %d lr %.2e loss %.4f miou %.4f", epoch, lr, rec.train_loss, metrics.mean_iou)
        if on_epoch is not None:
            on_epoch(rec)
    return result


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "ce_loss", "miou", "dice", "pixacc", "lr"])
        for r in history:
            m = r.metrics
            w.writerow([r.epoch, f"{m.ce_loss:.6f}", f"{m.mean_iou:.6f}", f"{m.dice:.6f}",
                        f"{m.pixel_accuracy:.6f}", f"{r.lr:.6g}"])
