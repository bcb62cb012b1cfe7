"""Classification and stream-alignment losses.

Labels: real = 0, fake = 1. Alignment losses only ever see the real rows of a
batch; selecting them is the caller's job (see :func:`real_rows`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _core
from . import tensor as tn
from .encoders import ConfigError
from .tensor import DimensionError, Tensor

ALIGNMENT_KINDS = ("triplet", "mse", "huber", "cosine", "l1", "none")
PUBLISHED_LAMBDA = 0.5


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    alignment: str = "triplet"
    weight: float = PUBLISHED_LAMBDA
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.alignment not in ALIGNMENT_KINDS:
            raise ConfigError(f"unknown alignment kind {self.alignment!r}; choose from {ALIGNMENT_KINDS}")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.weight < 0:
            raise ConfigError("alignment weight must be >= 0")
        if self.huber_delta <= 0:
            raise ConfigError("huber delta must be > 0")

    @property
    def uses_alignment(self) -> bool:
        return self.alignment != "none" and self.weight != 0.0


def check_labels(labels: Sequence[int]) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"labels must be 0 (real) or 1 (fake), got {sorted(set(arr.tolist()))}")
    return arr.astype(np.int64)


def real_rows(labels: Sequence[int]) -> np.ndarray:
    return np.flatnonzero(check_labels(labels) == 0)


def bce_with_logits(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean of softplus(z) - y*z over the batch."""
    y = check_labels(labels).astype(np.float64)
    if logits.ndim != 1 or logits.shape[0] != y.size:
        raise DimensionError(f"bce: logits shape {logits.shape} vs {y.size} labels")
    if y.size == 0:
        raise ValueError("bce needs a nonempty batch")
    return tn.mean(tn.sub(tn.softplus(logits), tn.mul(logits, Tensor(y))))


def triplet_inbatch(anchor: Tensor, positive: Tensor, margin: float) -> Tensor:
    """Mean hinge over every ordered (i, j != i) triplet of real rows.

    Anchor row i is paired with positive row i and negative positive-row j.
    Returns 0 for fewer than two rows.
    """
    if anchor.ndim != 2 or anchor.shape != positive.shape:
        raise DimensionError(f"triplet: shapes {anchor.shape} and {positive.shape} do not match")
    a = np.ascontiguousarray(anchor.data)
    p = np.ascontiguousarray(positive.data)
    loss, ga, gp = _core.triplet_hinge(a, p, float(margin))
    return tn.custom("triplet_inbatch", np.asarray(loss), (anchor, positive),
                     lambda g: (g * ga, g * gp))


def triplet_terms(anchor: np.ndarray, positive: np.ndarray, margin: float) -> np.ndarray:
    """(N, N) matrix of hinge terms, NaN on the diagonal (diagnostics only)."""
    dpos = ((anchor - positive) ** 2).sum(axis=1)
    dneg = ((anchor[:, None, :] - positive[None, :, :]) ** 2).sum(axis=2)
    h = np.maximum(0.0, dpos[:, None] - dneg + margin)
    np.fill_diagonal(h, np.nan)
    return h


def alignment_variant(kind: str, music: Tensor, vocal: Tensor, cfg: LossConfig) -> Tensor:
    """Matched-pair alignment losses used for the ablation rows."""
    if music.shape != vocal.shape or music.ndim != 2:
        raise DimensionError(f"alignment: shapes {music.shape} and {vocal.shape} do not match")
    if kind == "triplet":
        return triplet_inbatch(music, vocal, cfg.margin)
    if kind == "none":
        return Tensor(0.0)
    if music.shape[0] == 0:
        return Tensor(0.0)
    diff = tn.sub(music, vocal)
    if kind == "mse":
        return tn.mean(tn.mul(diff, diff))
    if kind == "l1":
        return tn.mean(tn.abs_(diff))
    if kind == "huber":
        return tn.mean(tn.huber(diff, cfg.huber_delta))
    if kind == "cosine":
        nm = tn.sum_(tn.mul(music, music), axis=1)
        nv = tn.sum_(tn.mul(vocal, vocal), axis=1)
        if np.any(nm.data == 0) or np.any(nv.data == 0):
            raise tn.NumericError("cosine alignment: zero-norm embedding")
        cos = tn.mul(tn.sum_(tn.mul(music, vocal), axis=1), tn.exp(tn.scale(tn.log(tn.mul(nm, nv)), -0.5)))
        return tn.add_scalar(tn.scale(tn.mean(cos), -1.0), 1.0)
    raise ConfigError(f"unknown alignment kind {kind!r}")


def total_loss(bce: Tensor, align: Tensor, weight: float) -> Tensor:
    if weight == 0.0:
        return bce
    return tn.add(bce, tn.scale(align, weight))
