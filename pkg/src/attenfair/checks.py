"""Finite-difference checks of the feature losses and the attention block."""

from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from . import atten, snnl
from .numerics import Tensor, grad_check, ops

DEFAULT_TOL = 1e-4


def _cases(rng: np.random.Generator) -> List[Tuple[str, Callable, np.ndarray]]:
    """(loss name, scalar function, evaluation point) triples."""
    b, d = 8, 5
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2])
    tone = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    T = float(rng.uniform(0.5, 2.0))
    x = rng.normal(size=(b, d))
    cases = [
        ("snnl", lambda v: snnl.snnl(snnl.FeatureBatch(v, labels, T)), x),
        ("snnl_include_self", lambda v: snnl.snnl(snnl.FeatureBatch(v, tone, T), snnl.SnnlConfig(T, True)), x),
        ("l_disease", lambda v: snnl.l_disease(snnl.FeatureBatch(v, labels, T)), x),
        ("l_skin", lambda v: snnl.l_skin(snnl.split_by_class(v, tone, T)), x),
    ]

    W = rng.normal(size=(d, 3))

    def combined(v):
        ce = snnl.cross_entropy(ops.matmul(v, W), labels)
        ld = snnl.l_disease(snnl.FeatureBatch(v, labels, T))
        ls = snnl.l_skin(snnl.split_by_class(ops.scale(v, 0.5), tone, T))
        return snnl.combined_loss(ce, [(ld, ls)], [0.3])

    cases.append(("combined_loss", combined, x))

    cfg = atten.AttenConfig(channels=8, reduction_ratio=4, spatial_kernel=3, use_guided_mask=True)
    params = atten.init_params(cfg, rng)
    F = rng.normal(size=(2, 8, 4, 4))
    mask = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
    weights = {k: rng.normal(size=F.shape) for k in ("refined", "inverse", "guided")}

    def block_loss(Fv, pv):
        bundle = atten.atten_forward(Fv, mask, cfg, pv)
        terms = [ops.reduce(ops.mul(getattr(bundle, k), w)) for k, w in weights.items()]
        return ops.add(ops.add(terms[0], terms[1]), terms[2])

    cases.append(("atten_block_input", lambda v: block_loss(v, params), F))
    for name in sorted(params):
        def f(v, name=name):
            return block_loss(F, {**params, name: v})

        cases.append((f"atten_block_{name}", f, params[name]))
    return cases


def toy_model_case(rng: np.random.Generator):
    """Combined loss of a two-block toy network as a function of all its weights."""
    from .synthlab.model import feature_losses, init_toy_params, toy_forward

    cfgs = [atten.AttenConfig(4, 2, 3, True), atten.AttenConfig(4, 2, 3, True)]
    params = init_toy_params(1, 3, (4, 4), cfgs, rng)
    X = rng.normal(size=(6, 1, 8, 8))
    y = np.array([0, 1, 2, 0, 1, 2])
    M = (rng.random((6, 1, 8, 8)) > 0.7).astype(np.float64)
    names = sorted(params)
    flat = np.concatenate([params[k].ravel() for k in names])

    def f(v):
        parts, off = {}, 0
        for k in names:
            n = params[k].size
            parts[k] = ops.reshape(ops.take(v, np.arange(off, off + n)), params[k].shape)
            off += n
        logits, bundles = toy_forward(parts, X, M, cfgs)
        ce = snnl.cross_entropy(logits, y)
        return snnl.combined_loss(ce, feature_losses(bundles, y, 5.0), [0.3, 0.3])

    return "toy_model_combined_loss", f, flat


def run_gradcheck(seed: int = 0, step: float = 1e-5, trials: int = 3) -> Dict[str, float]:
    """Worst relative gradient error per loss over ``trials`` random draws."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    worst: Dict[str, float] = {}
    for _ in range(trials):
        for name, fn, point in _cases(rng):
            err = grad_check(fn, point, step=step)
            worst[name] = max(worst.get(name, 0.0), err)
    name, fn, point = toy_model_case(rng)
    worst[name] = grad_check(fn, point, step=step)
    return worst
