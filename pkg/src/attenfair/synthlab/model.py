"""Small CNN with optional attention blocks, wrapped as a scikit-learn classifier."""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import f1_score
from sklearn.utils.validation import check_is_fitted

from .. import atten, snnl
from ..numerics import NonFiniteError, Tensor, ops
from .data import rng_for
from .validation import check_images, check_labels, check_masks

logger = logging.getLogger(__name__)

MODES = ("baseline", "atten_full", "atten_no_mask", "atten_no_snnl")


class TrainingDivergedError(RuntimeError):
    pass


def mode_flags(mode: str) -> Tuple[bool, bool, bool]:
    """(use attention blocks, use guided mask, use the feature losses)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return (
        mode != "baseline",
        mode in ("atten_full", "atten_no_snnl"),
        mode in ("atten_full", "atten_no_mask"),
    )


def init_toy_params(
    in_channels: int,
    n_classes: int,
    channels: Sequence[int],
    block_cfgs: Optional[Sequence[atten.AttenConfig]],
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    """He-initialized conv/linear weights, then attention weights per block."""
    params: Dict[str, np.ndarray] = {}
    prev = in_channels
    for i, c in enumerate(channels):
        params[f"conv{i}_w"] = rng.normal(0.0, np.sqrt(2.0 / (prev * 9)), size=(c, prev, 3, 3))
        params[f"conv{i}_b"] = np.zeros(c)
        prev = c
    params["fc_w"] = rng.normal(0.0, np.sqrt(1.0 / prev), size=(prev, n_classes))
    params["fc_b"] = np.zeros(n_classes)
    if block_cfgs:
        for i, cfg in enumerate(block_cfgs):
            for name, arr in atten.init_params(cfg, rng).items():
                params[f"att{i}_{name}"] = arr
    return params


def toy_forward(
    params: Dict[str, Tensor],
    X,
    masks=None,
    block_cfgs: Optional[Sequence[atten.AttenConfig]] = None,
) -> Tuple[Tensor, List[atten.FeatureBundle]]:
    """Logits [N, K] and the attention bundles of each block.

    Each stage is conv3x3 -> relu -> maxpool2, followed by an attention
    block when ``block_cfgs`` is given; the block's guided feature feeds the
    next stage. Global average pooling and a linear layer give the logits.
    """
    h = X if isinstance(X, Tensor) else Tensor(X)
    bundles = []
    i = 0
    while f"conv{i}_w" in params:
        h = ops.conv2d(h, params[f"conv{i}_w"], padding=1)
        h = ops.add(h, ops.reshape(params[f"conv{i}_b"], (1, -1, 1, 1)))
        h = ops.pool2d(ops.relu(h), 2, "max")
        if block_cfgs:
            bp = {k[len(f"att{i}_") :]: v for k, v in params.items() if k.startswith(f"att{i}_")}
            bundle = atten.atten_forward(h, masks, block_cfgs[i], bp)
            bundles.append(bundle)
            h = bundle.guided
        i += 1
    pooled = ops.reduce(h, (2, 3), "mean")
    logits = ops.add(ops.matmul(pooled, params["fc_w"]), params["fc_b"])
    return logits, bundles


def feature_losses(bundles, labels, temperature: float):
    """(l_disease, l_skin) per block from refined and inverse features."""
    out = []
    for b in bundles:
        n = b.refined.shape[0]
        ld = snnl.l_disease(snnl.FeatureBatch(ops.reshape(b.refined, (n, -1)), labels, temperature))
        inv = ops.reshape(b.inverse, (n, -1))
        ls = snnl.l_skin(snnl.split_by_class(inv, labels, temperature))
        out.append((ld, ls))
    return out


class AttENClassifier(ClassifierMixin, BaseEstimator):
    """Toy CNN trained with plain SGD, optionally with attention blocks.

    Parameters
    ----------
    mode : {"baseline", "atten_full", "atten_no_mask", "atten_no_snnl"}
        ``baseline`` is a plain CNN trained on cross-entropy.
        ``atten_full`` adds an attention block after every stage, injects
        the guided masks passed to ``fit``/``predict`` and adds the feature
        losses. ``atten_no_mask`` drops the masks, ``atten_no_snnl`` drops
        the feature losses.
    channels : tuple of int
        Output channels of the convolution stages.
    alphas : tuple of float or None
        Weight of ``l_disease - l_skin`` per block. None means 0.05 each.
    temperature : float
        Temperature of the soft nearest neighbor losses. Squared distances
        between flattened feature maps are in the hundreds here, so values
        near 1 leave every numerator at the floor and training diverges.
    epochs, batch_size, learning_rate : training schedule.
    select_best : bool
        Keep the epoch with the best validation macro-F1 when validation data
        is given to ``fit``.
    random_state : int
        Seed of the counter-based generator used for init and shuffling.
    """

    def __init__(
        self,
        mode: str = "atten_full",
        channels: Tuple[int, ...] = (8, 16),
        reduction_ratio: int = 8,
        spatial_kernel: int = 7,
        alphas: Optional[Tuple[float, ...]] = None,
        temperature: float = 100.0,
        epochs: int = 30,
        batch_size: int = 32,
        learning_rate: float = 0.05,
        select_best: bool = True,
        random_state: int = 0,
    ):
        self.mode = mode
        self.channels = channels
        self.reduction_ratio = reduction_ratio
        self.spatial_kernel = spatial_kernel
        self.alphas = alphas
        self.temperature = temperature
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.select_best = select_best
        self.random_state = random_state

    # -- helpers ----------------------------------------------------------
    def _block_cfgs(self):
        use_att, use_mask, _ = mode_flags(self.mode)
        if not use_att:
            return None
        return [
            atten.AttenConfig(c, self.reduction_ratio, self.spatial_kernel, use_guided_mask=use_mask)
            for c in self.channels
        ]

    def _alphas(self) -> Tuple[float, ...]:
        if self.alphas is None:
            return (0.05,) * len(self.channels)
        if len(self.alphas) != len(self.channels):
            raise ValueError(f"{len(self.alphas)} alphas for {len(self.channels)} blocks")
        return tuple(float(a) for a in self.alphas)

    def _loss(self, params, X, y, masks, cfgs):
        logits, bundles = toy_forward(params, X, masks, cfgs)
        ce = snnl.cross_entropy(logits, y)
        _, _, use_snnl = mode_flags(self.mode)
        if not (cfgs and use_snnl) or len(y) < 2:
            return ce
        return snnl.combined_loss(ce, feature_losses(bundles, y, self.temperature), self._alphas())

    def _logits(self, params_np, X, masks) -> np.ndarray:
        params = {k: Tensor(v) for k, v in params_np.items()}
        out = []
        step = max(self.batch_size, 64)
        for s in range(0, X.shape[0], step):
            m = None if masks is None else masks[s : s + step]
            logits, _ = toy_forward(params, X[s : s + step], m, self._block_cfgs())
            out.append(logits.data)
        return np.concatenate(out)

    # -- estimator API ------------------------------------------------------
    def fit(self, X, y, masks=None, X_val=None, y_val=None, masks_val=None):
        """Train on images ``X`` [N, C, S, S] with integer-like labels ``y``.

        ``masks`` are binary lesion masks [N, 1, S, S]; they are required by
        the modes that inject guided masks and ignored otherwise.
        """
        X = check_images(X)
        self.classes_, y_idx = np.unique(check_labels(y, X.shape[0]), return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        use_att, use_mask, _ = mode_flags(self.mode)
        masks = check_masks(masks, X) if use_mask else None
        if use_mask and masks is None:
            raise ValueError(f"mode {self.mode!r} needs guided masks")
        has_val = X_val is not None
        if has_val:
            X_val = check_images(X_val)
            y_val = check_labels(y_val, X_val.shape[0])
            masks_val = check_masks(masks_val, X_val) if use_mask else None
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

        cfgs = self._block_cfgs()
        init_rng = rng_for(self.random_state, 101)
        shuffle_rng = rng_for(self.random_state, 102)
        params = init_toy_params(X.shape[1], self.classes_.size, self.channels, cfgs, init_rng)
        self.input_mean_ = float(X.mean())
        self.input_scale_ = float(X.std()) or 1.0
        X = (X - self.input_mean_) / self.input_scale_
        if has_val:
            X_val = (X_val - self.input_mean_) / self.input_scale_
        self.n_channels_in_ = X.shape[1]
        self.image_shape_ = X.shape[1:]
        self.loss_trace_: List[float] = []
        self.step_losses_: List[float] = []
        self.val_f1_trace_: List[float] = []
        best = (-np.inf, -1, params)
        n = X.shape[0]
        n_batches = max(1, -(-n // self.batch_size))
        lr = float(self.learning_rate)
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for step, idx in enumerate(np.array_split(order, n_batches)):
                tp = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
                try:
                    loss = self._loss(tp, X[idx], y_idx[idx], None if masks is None else masks[idx], cfgs)
                    loss.backward()
                except NonFiniteError as exc:
                    raise TrainingDivergedError(f"non-finite value at epoch {epoch}, step {step}: {exc}") from exc
                value = loss.item()
                self.step_losses_.append(value)
                total += value * idx.size
                params = {
                    k: (v - lr * tp[k].grad if tp[k].grad is not None else v) for k, v in params.items()
                }
            self.loss_trace_.append(total / n)
            if has_val:
                pred = self.classes_[np.argmax(self._logits(params, X_val, masks_val), axis=1)]
                f1 = float(f1_score(y_val, pred, average="macro"))
                self.val_f1_trace_.append(f1)
                if f1 > best[0]:
                    best = (f1, epoch, params)
        if has_val and self.select_best and best[1] >= 0:
            self.best_epoch_ = best[1]
            self.params_ = best[2]
        else:
            self.best_epoch_ = self.epochs - 1
            self.params_ = params
        return self

    def decision_function(self, X, masks=None) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_images(X)
        if X.shape[1:] != self.image_shape_:
            raise ValueError(f"expected images of shape {self.image_shape_}, got {X.shape[1:]}")
        _, use_mask, _ = mode_flags(self.mode)
        masks = check_masks(masks, X) if use_mask else None
        if use_mask and masks is None:
            raise ValueError(f"mode {self.mode!r} needs guided masks")
        return self._logits(self.params_, (X - self.input_mean_) / self.input_scale_, masks)

    def predict_proba(self, X, masks=None) -> np.ndarray:
        z = self.decision_function(X, masks)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X, masks=None) -> np.ndarray:
        scores = self.decision_function(X, masks)
        return self.classes_[np.argmax(scores, axis=1)]

    def score(self, X, y, masks=None, sample_weight=None) -> float:
        from sklearn.metrics import accuracy_score

        return accuracy_score(y, self.predict(X, masks), sample_weight=sample_weight)
