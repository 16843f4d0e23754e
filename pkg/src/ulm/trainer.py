"""Masked loss, Adam, and the epoch loop with early stopping and plateau LR decay."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import roc_auc
from .model import as_tensors, predict

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    min_delta: float = 1e-4
    plateau_patience: int = 10
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "lr_factor", "min_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: list[float]
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    target_names: tuple[str, ...] = ()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"]
                       + [f"val_auc_{n.lower()}" for n in self.target_names] + ["lr"])
            for e in self.epochs:
                aucs = ["" if math.isnan(a) else repr(a) for a in e.val_auc]
                w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), *aucs, repr(e.lr)])


def masked_bce(probs: Tensor, target_class: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over cells where ``target_mask`` is 1."""
    p = ad.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = np.asarray(target_class, dtype=np.float64)
    pos = ad.mul(ad.log(p), y)
    neg = ad.mul(ad.log(ad.add(ad.scale(p, -1.0), 1.0)), 1.0 - y)
    return ad.scale(ad.reduce_mean_masked(ad.add(pos, neg), target_mask), -1.0)


class Adam:
    """Bias-corrected Adam over a dict of named arrays (updated in place)."""

    def __init__(self, params: Mapping[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam | None, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional wrapper: returns updated copies of ``params`` and the state."""
    params = {k: v.copy() for k, v in params.items()}
    state = state or Adam(params, beta1, beta2, eps)
    state.step(params, grads, lr)
    return params, state


def loss_and_grads(model, params: Mapping[str, np.ndarray], batch, train: bool, rng):
    leaves = as_tensors(params, requires_grad=True)
    loss = masked_bce(model.forward(leaves, batch, train=train, rng=rng),
                      batch.target_class, batch.target_mask)
    names = list(leaves)
    grads = ad.backward(loss, [leaves[n] for n in names])
    return float(loss.data), dict(zip(names, grads))


def evaluate(model, params, data) -> tuple[float, list[float]]:
    """Masked BCE over the whole set and per-output AUC (NaN when undefined)."""
    probs = predict(model, params, data)
    loss = float(masked_bce(Tensor(probs), data.target_class, data.target_mask).data)
    aucs = []
    for j in range(probs.shape[1]):
        on = data.target_mask[:, j] > 0
        labels = data.target_class[on, j]
        if on.sum() == 0 or labels.min() == labels.max():
            aucs.append(float("nan"))
        else:
            aucs.append(roc_auc(probs[on, j], labels).auc)
    return loss, aucs


def fit(model, train, val, config: TrainConfig, params=None,
        target_names: tuple[str, ...] = ()) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Train ``model`` on ``train`` and keep the parameters of the best validation epoch."""
    if len(train) == 0 or len(val) == 0:
        raise TrainingError("training and validation sets must be nonempty")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = model.init_params(rng)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    opt = Adam(params, config.beta1, config.beta2, config.eps)
    history = TrainHistory(target_names=target_names or tuple(f"out{j}" for j in range(model.n_outputs)))

    lr = config.lr
    best_loss = math.inf            # strict minimum, for parameter selection
    best_params = {k: v.copy() for k, v in params.items()}
    ref_loss = math.inf             # last improvement by more than min_delta
    stall = plateau = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        losses, weights = [], []
        for start in range(0, len(order), config.batch_size):
            batch = train.take(order[start:start + config.batch_size])
            if batch.target_mask.sum() == 0:
                continue
            loss, grads = loss_and_grads(model, params, batch, True, rng)
            opt.step(params, grads, lr)
            losses.append(loss)
            weights.append(len(batch))
        train_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        val_loss, val_auc = evaluate(model, params, val)
        if math.isnan(val_loss):
            raise TrainingError(f"validation loss is NaN at epoch {epoch}")
        history.epochs.append(EpochStats(epoch, train_loss, val_loss, val_auc, lr))
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, train_loss, val_loss, lr)

        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
        if val_loss < ref_loss - config.min_delta:
            ref_loss = val_loss
            stall = plateau = 0
        else:
            stall += 1
            plateau += 1
        if stall >= config.patience:
            break
        if plateau >= config.plateau_patience:
            lr = max(lr * config.lr_factor, config.min_lr)
            plateau = 0
    return best_params, history
