"""Cross-entropy, label-smoothing cross-entropy and its normalized variant.

All losses take raw logits and use a fused log-softmax. The normalized loss
divides the smoothed cross-entropy for the true class by the sum of smoothed
cross-entropies over every possible class target at the same logits, so the
values over all candidate classes sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DomainError, ShapeError

LOSS_KINDS = ("ce", "lsce", "nlsce")
DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class SmoothingConfig:
    n_classes: int
    epsilon: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class TargetDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ShapeError(f"target must be a non-empty vector, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ContractError(f"target is not a probability vector (sum {p.sum()!r})")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.size


def _check_index(class_index: int, n: int):
    if not 0 <= int(class_index) < n:
        raise ContractError(f"class index {class_index} out of range for {n} classes")


def one_hot(class_index: int, n_classes: int) -> TargetDistribution:
    _check_index(class_index, n_classes)
    p = np.zeros(n_classes)
    p[class_index] = 1.0
    return TargetDistribution(p)


def smooth_targets(class_index: int, cfg: SmoothingConfig) -> TargetDistribution:
    n, eps = cfg.n_classes, cfg.epsilon
    _check_index(class_index, n)
    p = np.full(n, eps / n)
    p[class_index] = (1.0 - eps) + eps / n
    return TargetDistribution(p)


def smoothing_matrix(cfg: SmoothingConfig) -> np.ndarray:
    """Row j is the smoothed target for class j."""
    return np.stack([smooth_targets(j, cfg).probs for j in range(cfg.n_classes)])


def _as_row(logits, n: int) -> Tensor:
    logits = ad.as_tensor(logits)
    if logits.size != n or logits.ndim > 2 or (logits.ndim == 2 and logits.shape[0] != 1):
        raise ShapeError(f"logits shape {logits.shape} does not match {n} classes")
    return ad.reshape(logits, (1, n))


def ce_loss(logits, target: TargetDistribution) -> Tensor:
    """Cross-entropy ``-sum_c t_c log softmax(z)_c`` for one sample."""
    z = _as_row(logits, target.n_classes)
    logp = ad.log_softmax(z, axis=1)
    return ad.scale(ad.sum(ad.mul(logp, Tensor(target.probs[None, :]))), -1.0)


def lsce_loss(logits, class_index: int, cfg: SmoothingConfig) -> Tensor:
    return ce_loss(logits, smooth_targets(class_index, cfg))


def norm_lsce_loss(logits, class_index: int, cfg: SmoothingConfig) -> Tensor:
    """Smoothed CE for ``class_index`` over the sum of smoothed CE for every class."""
    if cfg.n_classes < 2:
        raise ConfigError("normalized loss needs at least two classes")
    _check_index(class_index, cfg.n_classes)
    terms = [lsce_loss(logits, j, cfg) for j in range(cfg.n_classes)]
    denom = terms[0]
    for t in terms[1:]:
        denom = ad.add(denom, t)
    if denom.item() < DENOMINATOR_FLOOR:
        raise DomainError(f"normalizing denominator {denom.item():.3g} underflows")
    return ad.div(terms[class_index], denom)


def per_sample_losses(logits, labels, kind: str, cfg: SmoothingConfig) -> Tensor:
    """Vector of per-sample losses for a B x N logit batch."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != cfg.n_classes:
        raise ShapeError(f"logits shape {logits.shape} does not match {cfg.n_classes} classes")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {logits.shape[0]} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.n_classes):
        raise ContractError(f"labels must lie in [0, {cfg.n_classes})")

    neg_logp = ad.scale(ad.log_softmax(logits, axis=1), -1.0)
    if kind == "ce":
        table = np.eye(cfg.n_classes)
    else:
        table = smoothing_matrix(cfg)
    per = ad.sum(ad.mul(neg_logp, Tensor(table[labels])), axis=1)
    if kind != "nlsce":
        return per
    # column j of every_class holds the smoothed CE against class j's target
    every_class = ad.matmul(neg_logp, Tensor(table.T))
    denom = ad.sum(every_class, axis=1)
    if np.any(denom.data < DENOMINATOR_FLOOR):
        raise DomainError(f"normalizing denominator underflows (min {denom.data.min():.3g})")
    return ad.div(per, denom)


def batch_loss(logits, labels, kind: str, cfg: SmoothingConfig) -> Tensor:
    """Mean of per-sample losses; the normalized loss is normalized per sample first."""
    if len(labels) == 0:
        raise ContractError("empty batch")
    return ad.mean(per_sample_losses(logits, labels, kind, cfg))
