"""Seeded mini-batch training with AdamW and best-validation-F1 checkpointing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import evalstat
from . import tensor as tn
from .datakit import FeatureDataset
from .encoders import ConfigError
from .model import ClamParams, ModelConfig, forward, init_params
from .objectives import LossConfig, alignment_variant, bce_with_logits, total_loss

log = logging.getLogger(__name__)

PUBLISHED_LR = 1e-4
PUBLISHED_BATCH = 128
PUBLISHED_EPOCHS = 50
PUBLISHED_SEEDS = (1, 2, 3, 4, 5)
HISTORY_FIELDS = ("epoch", "train_loss", "bce", "align", "val_acc", "val_f1")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 30
    seeds: tuple[int, ...] = (1,)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 so triplets can form")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")


@dataclass
class OptState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: Mapping[str, tn.Tensor], grads: Mapping[str, np.ndarray], state: OptState,
               lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One AdamW update in place: decoupled decay, then bias-corrected Adam."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise tn.NumericError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise tn.DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        theta = p.data - lr * weight_decay * p.data
        p.data = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def fisher_yates(n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def make_batches(ids: Sequence, batch_size: int, epoch_seed) -> list[list]:
    if len(ids) == 0:
        raise ValueError("cannot batch an empty split")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = fisher_yates(len(ids), epoch_seed)
    shuffled = [ids[i] for i in order]
    return [shuffled[k:k + batch_size] for k in range(0, len(shuffled), batch_size)]


def predict_logits(params: ClamParams, ds: FeatureDataset, chunk: int = 256) -> np.ndarray:
    out = []
    for k in range(0, len(ds), chunk):
        logits, _ = forward(ds.music[k:k + chunk], ds.vocal[k:k + chunk], params)
        out.append(logits.data)
    return np.concatenate(out) if out else np.zeros(0)


def score(params: ClamParams, ds: FeatureDataset) -> dict:
    logits = predict_logits(params, ds)
    preds = (logits > 0).astype(np.int64)
    return evalstat.confusion_f1(ds.labels, preds)


@dataclass
class TrainResult:
    params: ClamParams
    history: list[dict]
    best_epoch: int
    seed: int


def batch_loss(params: ClamParams, ds: FeatureDataset, idx: np.ndarray, loss_cfg: LossConfig):
    """Returns (total, bce, align) tensors for the tracks at ``idx``."""
    logits, embeds = forward(ds.music[idx], ds.vocal[idx], params)
    labels = ds.labels[idx]
    bce = bce_with_logits(logits, labels)
    align = tn.Tensor(0.0)
    if loss_cfg.uses_alignment and params.config.streams == "both":
        real = np.flatnonzero(labels == 0)
        align = alignment_variant(loss_cfg.alignment, tn.take_rows(embeds["music"], real),
                                  tn.take_rows(embeds["vocal"], real), loss_cfg)
        return total_loss(bce, align, loss_cfg.weight), bce, align
    return bce, bce, align


def train(config: TrainConfig, train_ds: FeatureDataset, val_ds: FeatureDataset, seed: int,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    if len(train_ds) == 0:
        raise ConfigError("training split is empty")
    if len(val_ds) == 0:
        raise ConfigError("validation split is empty")
    params = init_params(config.model, seed)
    state = OptState()
    history: list[dict] = []
    best = (-1.0, 0, params.copy())
    positions = list(range(len(train_ds)))
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        n_batches = 0
        for b, batch in enumerate(make_batches(positions, config.batch_size, [seed, epoch])):
            idx = np.asarray(batch, dtype=np.intp)
            try:
                total, bce, align = batch_loss(params, train_ds, idx, config.loss)
                total.backward()
                grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for k, t in params.items()}
                adamw_step(params.tensors, grads, state, config.lr, config.betas, config.eps,
                           config.weight_decay)
            except tn.NumericError as exc:
                raise TrainingError(f"numeric failure at epoch {epoch}, batch {b}: {exc}") from exc
            for t in params.tensors.values():
                t.grad = None
            sums += (total.item(), bce.item(), align.item())
            n_batches += 1
        val = score(params, val_ds)
        row = {"epoch": epoch, "train_loss": sums[0] / n_batches, "bce": sums[1] / n_batches,
               "align": sums[2] / n_batches, "val_acc": val["accuracy"], "val_f1": val["f1"]}
        history.append(row)
        log.info("seed %d epoch %d loss %.5f val_f1 %.4f", seed, epoch, row["train_loss"], row["val_f1"])
        if on_epoch is not None:
            on_epoch(row)
        if val["f1"] > best[0]:
            best = (val["f1"], epoch, params.copy())
    if config.epochs == 0:
        return TrainResult(params, history, 0, seed)
    return TrainResult(best[2], history, best[1], seed)


def format_history_line(row: Mapping) -> str:
    return "\t".join([str(row["epoch"])] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def run_seeds(config: TrainConfig, train_ds: FeatureDataset, val_ds: FeatureDataset,
              test_ds: FeatureDataset | None = None) -> list[dict]:
    """Train once per configured seed; report validation and test metrics."""
    out = []
    for seed in config.seeds:
        res = train(config, train_ds, val_ds, seed)
        row = {"seed": seed, "best_epoch": res.best_epoch, "result": res}
        if test_ds is not None and len(test_ds):
            row["test"] = score(res.params, test_ds)
        out.append(row)
    return out
