"""Soft nearest neighbor losses on flattened per-sample features.

For a batch of features ``x_1..x_b`` with labels ``y``::

    snnl = -(1/b) * sum_i log( sum_{j != i, y_j = y_i} exp(-|x_i - x_j|^2 / T)
                               / sum_{k != i} exp(-|x_i - x_k|^2 / T) )

Everything is evaluated in the log domain with masked log-sum-exp so large
distances do not underflow. ``include_self`` adds the ``j = i`` term
(``exp(0) = 1``) to the numerator only, which keeps a single-class batch from
collapsing to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .numerics import Tensor, ops
from .numerics.tensor import ShapeError


@dataclass(frozen=True)
class SnnlConfig:
    temperature: float = 1.0
    include_self: bool = False
    epsilon: float = 1e-12

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class FeatureBatch:
    """Features [b, d] (or [b, ...], flattened on construction) and their labels."""

    features: Tensor
    labels: np.ndarray
    temperature: float = 1.0
    degenerate: bool = field(default=False, init=False)

    def __post_init__(self):
        if not isinstance(self.features, Tensor):
            self.features = Tensor(self.features)
        if self.features.ndim != 2:
            b = self.features.shape[0]
            self.features = ops.reshape(self.features, (b, -1))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(f"{self.labels.size} labels for {self.features.shape[0]} feature rows")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def __len__(self) -> int:
        return self.features.shape[0]


def snnl(batch: FeatureBatch, cfg: Optional[SnnlConfig] = None) -> Tensor:
    """Soft nearest neighbor loss as a scalar graph node.

    Anchors whose same-class neighbour set is empty have their numerator
    floored at ``cfg.epsilon``; ``batch.degenerate`` is set when that
    happens.
    """
    cfg = cfg or SnnlConfig(temperature=batch.temperature)
    b = len(batch)
    if b < 2:
        raise ValueError("soft nearest neighbor loss needs at least two samples")
    y = batch.labels
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(b, dtype=bool)
    num_mask = same if cfg.include_self else same & off_diag

    logits = ops.scale(ops.pairwise_sqdist(batch.features), -1.0 / cfg.temperature)
    floor = math.log(cfg.epsilon)
    log_num = ops.masked_logsumexp(logits, num_mask, axis=1, floor=floor)
    log_den = ops.masked_logsumexp(logits, off_diag, axis=1)
    batch.degenerate = bool((log_num.data <= floor).any())
    return ops.scale(ops.reduce(ops.sub(log_num, log_den), None, "sum"), -1.0 / b)


def l_disease(batch: FeatureBatch, temperature: Optional[float] = None) -> Tensor:
    """Entanglement of disease-focused features across classes; minimized in training."""
    t = batch.temperature if temperature is None else temperature
    return snnl(batch, SnnlConfig(temperature=t, include_self=False))


def split_by_class(features: Tensor, labels, temperature: float = 1.0) -> List[FeatureBatch]:
    """Split a batch into one single-class :class:`FeatureBatch` per label, ordered by label."""
    labels = np.asarray(labels, dtype=np.int64)
    out = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        out.append(FeatureBatch(ops.take(features, idx, axis=0), labels[idx], temperature))
    return out


def l_skin(per_class_batches: Sequence[FeatureBatch], temperature: Optional[float] = None) -> Tensor:
    """Sum over classes of the self-inclusive loss on skin-focused features.

    Each per-class term is strictly negative and rises toward zero as the
    class's features move together; the trainer maximizes the sum. Classes
    with fewer than two samples contribute zero.
    """
    terms = []
    for batch in per_class_batches:
        if len(np.unique(batch.labels)) > 1:
            raise ValueError("l_skin expects single-class batches; use split_by_class")
        if len(batch) < 2:
            continue
        t = batch.temperature if temperature is None else temperature
        terms.append(snnl(batch, SnnlConfig(temperature=t, include_self=True)))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def combined_loss(ce: Tensor, per_block: Sequence[Tuple[Tensor, Tensor]], alphas: Sequence[float]) -> Tensor:
    """Cross-entropy plus ``sum_i alpha_i * (l_disease_i - l_skin_i)``.

    Blocks with ``alpha_i == 0`` are left out of the graph, so an all-zero
    weighting yields exactly the cross-entropy graph (same value and same
    gradient accumulation order).
    """
    if len(per_block) != len(alphas):
        raise ValueError(f"{len(alphas)} weights for {len(per_block)} blocks")
    total = ce
    for (ld, ls), a in zip(per_block, alphas):
        if a < 0:
            raise ValueError("block weights must be non-negative")
        if a == 0:
            continue
        total = ops.add(total, ops.scale(ops.sub(ld, ls), a))
    return total


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [b, K]."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    picked = ops.reduce(ops.mul(ops.log_softmax(logits, axis=1), onehot), None, "sum")
    return ops.scale(picked, -1.0 / b)
