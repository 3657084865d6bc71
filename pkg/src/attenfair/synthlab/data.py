"""Synthetic lesion images with a skin-tone shortcut.

The class of an image is fixed by the radius of a round lesion. The
background intensity ("tone") is the binary sensitive attribute; in the
training and validation splits it is correlated with the parity of the
class, so a model can partly predict the class from the background alone.
The test split uses its own (by default balanced) correlation.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .._io import atomic_write
from ..numerics import ften

SPLIT_RATIO = (6, 2, 2)
DARK, LIGHT = 1, 0


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Dataset recipe.

    ``train_correlation`` is P(dark tone | even class) = P(light tone | odd
    class) in the train and validation splits; ``test_correlation`` plays
    the same role in the test split. ``n_samples`` is split 6:2:2.
    """

    image_size: int = 32
    num_classes: int = 3
    train_correlation: float = 0.9
    test_correlation: float = 0.5
    n_samples: int = 600
    noise_std: float = 0.1
    dark_level: float = 0.2
    light_level: float = 0.8
    lesion_level: float = 0.5
    radius_min: float = 3.0
    radius_max: float = 15.0
    radius_jitter: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 8 or self.image_size % 4:
            raise SynthSpecError("image_size must be a multiple of 4 and at least 8")
        if self.num_classes < 2:
            raise SynthSpecError("num_classes must be at least 2")
        for name in ("train_correlation", "test_correlation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthSpecError(f"{name}={v} outside [0, 1]")
        if self.noise_std < 0:
            raise SynthSpecError("noise_std must be non-negative")
        if not 0 < self.radius_min < self.radius_max <= self.image_size / 2 - 1:
            raise SynthSpecError("radius range must fit inside the image")
        if self.seed < 0:
            raise SynthSpecError("seed must be unsigned")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthSample:
    sample_id: str
    image: np.ndarray  # [1, S, S]
    label: int
    sensitive: Optional[int]
    mask: np.ndarray  # [1, S, S], 1 on the lesion


def split_sizes(n: int) -> Tuple[int, int, int]:
    total = sum(SPLIT_RATIO)
    n_train = n * SPLIT_RATIO[0] // total
    n_val = n * SPLIT_RATIO[1] // total
    return n_train, n_val, n - n_train - n_val


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator; ``stream`` selects an independent sequence."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)]))


def _tone_quota(labels: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    tones = np.empty(labels.size, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        p_dark = rho if c % 2 == 0 else 1.0 - rho
        n_dark = int(round(p_dark * idx.size))
        t = np.array([DARK] * n_dark + [LIGHT] * (idx.size - n_dark))
        tones[idx] = rng.permutation(t)
    return tones


def _render(spec: SynthSpec, label: int, tone: int, rng: np.random.Generator):
    s = spec.image_size
    width = (spec.radius_max - spec.radius_min) / spec.num_classes
    centre_r = spec.radius_min + (label + 0.5) * width
    jitter = min(spec.radius_jitter, width / 2)
    radius = centre_r + rng.uniform(-jitter, jitter)
    margin = radius + 1
    cy, cx = rng.uniform(margin, s - margin, size=2)
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.float64)
    bg = spec.dark_level if tone == DARK else spec.light_level
    img = np.where(mask > 0, spec.lesion_level, bg) + rng.normal(0.0, spec.noise_std, size=(s, s))
    return img[None], mask[None]


def _make_split(spec: SynthSpec, name: str, n: int, rho: float, stream: int) -> List[SynthSample]:
    k = spec.num_classes
    if n < 2 * k:
        raise SynthSpecError(f"{name} split has {n} samples; need at least {2 * k} for {k} classes")
    rng = rng_for(spec.seed, stream)
    labels = np.arange(n) % k
    labels = rng.permutation(labels)
    tones = _tone_quota(labels, rho, rng)
    samples = []
    for i in range(n):
        img, mask = _render(spec, int(labels[i]), int(tones[i]), rng)
        samples.append(SynthSample(f"{name}-{i:05d}", img, int(labels[i]), int(tones[i]), mask))
    return samples


def generate(spec: SynthSpec) -> Tuple[List[SynthSample], List[SynthSample], List[SynthSample]]:
    """Deterministically build disjoint (train, val, test) splits."""
    spec.validate()
    n_train, n_val, n_test = split_sizes(spec.n_samples)
    train = _make_split(spec, "train", n_train, spec.train_correlation, 1)
    val = _make_split(spec, "val", n_val, spec.train_correlation, 2)
    test = _make_split(spec, "test", n_test, spec.test_correlation, 3)
    tones = [s.sensitive for s in test]
    if 0 < spec.test_correlation < 1 and len(set(tones)) < 2:
        raise SynthSpecError("test split lacks one of the tone groups")
    return train, val, test


def as_arrays(samples: List[SynthSample]):
    """Stack samples into (images [N,1,S,S], labels [N], masks [N,1,S,S])."""
    if not samples:
        raise SynthSpecError("empty split")
    X = np.stack([s.image for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    M = np.stack([s.mask for s in samples])
    return X, y, M


def without_sensitive(samples: List[SynthSample]) -> List[SynthSample]:
    return [replace(s, sensitive=None) for s in samples]


def mutual_information(a, b) -> float:
    """Empirical mutual information (nats) between two discrete arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())


def export_split(samples: List[SynthSample], directory: str, name: str) -> None:
    """Write ``{name}_images.ften``, ``{name}_masks.ften`` and ``{name}.csv``."""
    os.makedirs(directory, exist_ok=True)
    X, y, M = as_arrays(samples)
    ften.save(os.path.join(directory, f"{name}_images.ften"), X, dtype=np.float32)
    ften.save(os.path.join(directory, f"{name}_masks.ften"), M, dtype=np.float32)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "sample_id", "label", "sensitive"])
    for i, s in enumerate(samples):
        w.writerow([i, s.sample_id, s.label, "" if s.sensitive is None else s.sensitive])
    atomic_write(os.path.join(directory, f"{name}.csv"), buf.getvalue())
