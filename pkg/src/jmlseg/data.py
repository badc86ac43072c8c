"""Synthetic segmentation scenes with class imbalance and ambiguous boundaries.

Each image is a stack of feature channels (blurred class-dependent signals
plus two coordinate channels) paired with a label map of rectangles and
discs painted over a background class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .labels import boundary_mask

_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass
class DatasetSpec:
    """Generator knobs.

    ``density`` is the mean number of shapes per image and ``imbalance``
    the exponent ``a`` in the class weights ``1 / c**a``; ``label_noise`` the
    fraction of pixels relabelled uniformly at random; ``boundary_jitter``
    the fraction of boundary pixels given a neighbour's label.
    """

    n_images: int = 64
    height: int = 32
    width: int = 32
    n_classes: int = 5
    density: float = 3.0
    imbalance: float = 2.0
    label_noise: float = 0.0
    boundary_jitter: float = 0.3
    n_signals: int = 3
    signal_noise: float = 1.2
    class_separation: float = 1.0
    blur: int = 3

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image size must be positive, got {self.height}x{self.width}")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.density < 0 or self.imbalance < 0:
            raise ValueError("density and imbalance must be non-negative")
        for name in ("label_noise", "boundary_jitter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.blur < 1:
            raise ValueError("blur must be >= 1")

    @property
    def n_features(self) -> int:
        return self.n_signals + 2


@dataclass
class SyntheticData:
    features: np.ndarray      # (N, F, H, W)
    labels: np.ndarray        # (N, H, W) observed labels
    clean_labels: np.ndarray  # (N, H, W) before jitter and noise

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "SyntheticData":
        return SyntheticData(self.features[idx], self.labels[idx], self.clean_labels[idx])


def _paint(spec: DatasetSpec, rng) -> np.ndarray:
    h, w = spec.height, spec.width
    out = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    # rarer classes for higher indices
    weights = np.arange(1, spec.n_classes) ** -float(spec.imbalance)
    weights /= weights.sum()
    side = min(h, w)
    for _ in range(rng.poisson(spec.density)):
        cls = 1 + rng.choice(spec.n_classes - 1, p=weights)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.1, 0.3) * side
        if rng.uniform() < 0.5:
            ry = size * rng.uniform(0.6, 1.4)
            region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= size)
        else:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= size ** 2
        out[region] = cls
    return out


def _jitter(clean, fraction, rng):
    """Give a random ``fraction`` of boundary pixels a differing neighbour label."""
    if fraction == 0:
        return clean.copy()
    h, w = clean.shape
    candidates = boundary_mask(clean, 3) & (rng.uniform(size=clean.shape) < fraction)
    padded = np.pad(clean, 1, mode="edge")
    neigh = np.stack([padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _NEIGHBOURS])
    scores = rng.uniform(size=neigh.shape)
    scores[neigh == clean] = -1.0
    pick = np.take_along_axis(neigh, scores.argmax(axis=0)[None], axis=0)[0]
    return np.where(candidates, pick, clean)


def _features(clean, means, spec: DatasetSpec, rng):
    h, w = clean.shape
    signal = means[clean].transpose(2, 0, 1)
    signal = signal + spec.signal_noise * rng.normal(size=signal.shape)
    signal = uniform_filter(signal, size=(1, spec.blur, spec.blur), mode="nearest")
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    return np.concatenate([signal, yy[None], xx[None]])


def generate_synthetic(spec: DatasetSpec, seed: int) -> SyntheticData:
    """Draw ``spec.n_images`` scenes; the same seed always gives the same data."""
    rng = np.random.default_rng(seed)
    means = spec.class_separation * rng.normal(size=(spec.n_classes, spec.n_signals))
    feats, labels, cleans = [], [], []
    for _ in range(spec.n_images):
        clean = _paint(spec, rng)
        observed = _jitter(clean, spec.boundary_jitter, rng)
        if spec.label_noise > 0:
            flip = rng.uniform(size=clean.shape) < spec.label_noise
            observed = np.where(flip, rng.integers(0, spec.n_classes, size=clean.shape), observed)
        feats.append(_features(clean, means, spec, rng))
        labels.append(observed)
        cleans.append(clean)
    return SyntheticData(np.stack(feats), np.stack(labels), np.stack(cleans))
