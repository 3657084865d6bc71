"""Attention block that separates lesion-focused from skin-focused features.

A CBAM-style channel map and spatial map reweight the input feature map.
The product is the refined (disease) feature; the complement of the spatial
map applied to the untouched input gives the inverse (skin) feature. An
optional binary lesion mask, max-pooled to the feature resolution, is added
back as ``pooled_mask * F`` to form the guided feature handed to the next
layer.

Tensors may be unbatched ``[C, H, W]`` or batched ``[N, C, H, W]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .numerics import Tensor, ops
from .numerics.tensor import ShapeError

Params = Dict[str, Tensor]


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class AttenConfig:
    channels: int
    reduction_ratio: int = 8
    spatial_kernel: int = 7
    use_guided_mask: bool = True

    def __post_init__(self):
        if self.reduction_ratio < 1 or self.channels < self.reduction_ratio:
            raise ValueError("channels must be at least the reduction ratio")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ValueError("spatial_kernel must be a positive odd integer")

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.reduction_ratio)


@dataclass
class FeatureBundle:
    input: Tensor
    channel_map: Tensor
    spatial_map: Tensor
    refined: Tensor
    inverse: Tensor
    guided: Tensor
    pooled_mask: Optional[np.ndarray] = None


def init_params(cfg: AttenConfig, rng: Optional[np.random.Generator] = None, zero: bool = False) -> Dict[str, np.ndarray]:
    """Fresh parameter arrays: shared MLP weights and the spatial conv kernel/bias."""
    c, h, k = cfg.channels, cfg.hidden, cfg.spatial_kernel
    shapes = {"mlp_w1": (c, h), "mlp_w2": (h, c), "sp_kernel": (1, 2, k, k), "sp_bias": (1,)}
    if zero:
        return {name: np.zeros(s) for name, s in shapes.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    fan_in = {"mlp_w1": c, "mlp_w2": h, "sp_kernel": 2 * k * k}
    out = {}
    for name, s in shapes.items():
        if name == "sp_bias":
            out[name] = np.zeros(s)
        else:
            bound = np.sqrt(6.0 / fan_in[name])
            out[name] = rng.uniform(-bound, bound, size=s)
    return out


def _batched(x: Tensor):
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got {x.dims}")


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return ops.reshape(x, x.shape[1:]) if squeeze else x


def channel_attention(F: Tensor, params: Params) -> Tensor:
    """sigmoid(MLP(avgpool F) + MLP(maxpool F)) with dims [C,1,1] (or [N,C,1,1])."""
    x, squeeze = _batched(F)
    n, c = x.shape[:2]
    if params["mlp_w1"].shape[0] != c:
        raise ShapeError(f"channel attention built for {params['mlp_w1'].shape[0]} channels, got {c}")
    avg = ops.reduce(x, (2, 3), "mean")
    peak = ops.reduce(x, (2, 3), "max")

    def mlp(v):
        return ops.matmul(ops.relu(ops.matmul(v, params["mlp_w1"])), params["mlp_w2"])

    m = ops.sigmoid(ops.add(mlp(avg), mlp(peak)))
    return _unbatch(ops.reshape(m, (n, c, 1, 1)), squeeze)


def spatial_attention(Fc: Tensor, params: Params) -> Tensor:
    """sigmoid(conv_kxk([mean_c, max_c]) + bias) with dims [1,H,W] (or [N,1,H,W])."""
    x, squeeze = _batched(Fc)
    kernel = params["sp_kernel"]
    k = kernel.shape[-1]
    stacked = ops.concat(
        [ops.reduce(x, 1, "mean", keepdims=True), ops.reduce(x, 1, "max", keepdims=True)],
        axis=1,
    )
    z = ops.conv2d(stacked, kernel, padding=(k - 1) // 2)
    z = ops.add(z, ops.reshape(params["sp_bias"], (1, 1, 1, 1)))
    return _unbatch(ops.sigmoid(z), squeeze)


def pool_mask(mask, height: int, width: int) -> np.ndarray:
    """Max-pool a binary mask [..., H0, W0] down to [..., height, width]."""
    m = np.asarray(mask, dtype=np.float64)
    h0, w0 = m.shape[-2:]
    if h0 % height or w0 % width or h0 // height != w0 // width:
        raise MaskError(f"mask {h0}x{w0} is not an integer multiple of feature {height}x{width}")
    window = h0 // height
    if window == 1:
        return m
    return ops.pool2d(Tensor(m), window, "max").data


def atten_forward(F: Tensor, mask, cfg: AttenConfig, params: Params) -> FeatureBundle:
    """Run the block on ``F``.

    Args:
        F: feature map [C,H,W] or [N,C,H,W].
        mask: binary guided mask at image resolution ([1,H0,W0] or
            [N,1,H0,W0]), or None. Ignored unless ``cfg.use_guided_mask``.
        cfg: block configuration.
        params: tensors named as in :func:`init_params`.
    """
    if F.shape[-3] != cfg.channels:
        raise ShapeError(f"block configured for {cfg.channels} channels, input has {F.shape[-3]}")
    m_c = channel_attention(F, params)
    f_c = ops.mul(m_c, F)
    m_s = spatial_attention(f_c, params)
    refined = ops.mul(m_s, f_c)
    inverse = ops.mul(ops.sub(1.0, m_s), F)
    guided = refined
    pooled = None
    if cfg.use_guided_mask and mask is not None:
        h, w = F.shape[-2:]
        pooled = pool_mask(mask, h, w)
        if pooled.ndim != F.ndim:
            raise MaskError(f"mask rank {pooled.ndim} does not match feature rank {F.ndim}")
        guided = ops.add(refined, ops.mul(pooled, F))
    return FeatureBundle(F, m_c, m_s, refined, inverse, guided, pooled)


# -- PGM masks -----------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MaskError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm_mask(data: bytes, threshold: int = 128) -> np.ndarray:
    """Decode a binary (P5) PGM into a {0,1} mask of dims [1, H, W]."""
    (magic, w, h, maxval), off = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise MaskError("not a binary PGM (P5) file")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - off < need:
        raise MaskError("truncated PGM payload")
    pixels = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return (pixels >= threshold).astype(np.float64)[None]


def write_pgm_mask(mask) -> bytes:
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[0]
    h, w = m.shape
    return f"P5\n{w} {h}\n255\n".encode() + (np.where(m > 0, 255, 0).astype(np.uint8)).tobytes()
