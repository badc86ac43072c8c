"""Jaccard-type surrogate losses, cross-entropy and class aggregation.

All pairwise losses reduce over the last axis (pixels) and broadcast over
any leading axes, so ``jml(x, y)`` with ``x`` of shape ``(n, p)`` returns
``n`` loss values.  Operands may be numpy arrays or autodiff nodes.

Ratio-form losses are written as ``mismatch / denominator``, which is the
same quantity as ``1 - agreement / denominator`` but returns 0 when both
operands are empty (the denominator vanishes together with the numerator).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from . import autodiff as ad
from .validation import (LossInputError, check_binary, check_distributions,
                         check_same_shape, check_unit_interval, is_binary)

CE_CLAMP = 1e-7
_TINY = np.finfo(np.float64).tiny

FAMILIES = ("iou", "sjl", "jml1", "jml2", "tversky", "lovasz", "ce")
NORMS = ("l1", "l2")
ACTIVE_MODES = ("ALL", "PRESENT", "PROB", "LABEL", "BOTH")
SCOPES = ("batch", "image", "class-agnostic")


def _ratio(num, den):
    # 0/0 -> 0; subnormal denominators lose accuracy
    return ad.div(num, ad.clamp(den, _TINY))


def _prepare(x, y):
    if not ad.is_symbolic(x, y):
        check_same_shape(x, y)
        x = check_unit_interval(x, "x")
        y = check_unit_interval(y, "y")
    return x, y


def iou_loss_hard(x, y):
    """``|m| / |y u m|`` for binary masks; 0 when both masks are empty."""
    check_same_shape(x, y)
    x = check_binary(x, "x").astype(bool)
    y = check_binary(y, "y").astype(bool)
    mis = np.sum(x ^ y, axis=-1).astype(np.float64)
    union = np.sum(x | y, axis=-1).astype(np.float64)
    return np.divide(mis, union, out=np.zeros_like(mis), where=union > 0)


def sjl(x, y, norm="l1"):
    """Soft Jaccard loss with L1 or squared-L2 set relaxation."""
    x, y = _prepare(x, y)
    inter = ad.sum(ad.mul(x, y), axis=-1)
    if norm == "l1":
        total = ad.sum(x, axis=-1) + ad.sum(y, axis=-1)
    elif norm == "l2":
        total = ad.sum(ad.mul(x, x), axis=-1) + ad.sum(ad.mul(y, y), axis=-1)
    else:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    return _ratio(total - 2.0 * inter, total - inter)


def jml(x, y, which="jml1", norm="l1"):
    """Jaccard metric loss.

    ``jml1`` is ``2|x-y| / (|x| + |y| + |x-y|)`` and ``jml2`` is
    ``|x-y| / (<x, y> + |x-y|)``.  With ``norm="l2"`` the symmetric
    difference and set sizes use squared L2 norms; both variants then
    coincide with the squared-L2 soft Jaccard loss.
    """
    x, y = _prepare(x, y)
    diff = ad.sub(x, y)
    if norm == "l1":
        mis = ad.sum(ad.abs(diff), axis=-1)
        size_x, size_y = ad.sum(x, axis=-1), ad.sum(y, axis=-1)
    elif norm == "l2":
        mis = ad.sum(ad.mul(diff, diff), axis=-1)
        size_x, size_y = ad.sum(ad.mul(x, x), axis=-1), ad.sum(ad.mul(y, y), axis=-1)
    else:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    if which == "jml1":
        return _ratio(2.0 * mis, size_x + size_y + mis)
    if which == "jml2":
        return _ratio(mis, ad.sum(ad.mul(x, y), axis=-1) + mis)
    raise ValueError(f"which must be 'jml1' or 'jml2', got {which!r}")


def tversky_metric(x, y, alpha=1.0, beta=1.0):
    """Tversky-weighted loss built on the L1 split of x and y.

    True positives are ``(|x| + |y| - |x-y|) / 2``; false positives and
    negatives are the positive and negative parts of ``x - y``.  With
    ``alpha = beta = 1`` this is ``jml1``; ``0.5 / 0.5`` gives the Dice analog.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    x, y = _prepare(x, y)
    diff = ad.sub(x, y)
    mis = ad.sum(ad.abs(diff), axis=-1)
    signed = ad.sum(diff, axis=-1)
    tp = 0.5 * (ad.sum(x, axis=-1) + ad.sum(y, axis=-1) - mis)
    fp = 0.5 * (mis + signed)
    fn = 0.5 * (mis - signed)
    weighted = alpha * fp + beta * fn
    return _ratio(weighted, tp + weighted)


def lovasz_softmax(x, y):
    """Lovasz extension of the hard Jaccard loss; ``y`` must be binary."""
    if ad.is_symbolic(y):
        raise LossInputError("Lovasz extension requires constant binary labels")
    if not is_binary(y):
        raise LossInputError("Lovasz extension requires binary labels")
    if not ad.is_symbolic(x):
        check_same_shape(x, y)
        x = check_unit_interval(x, "x")
    errors = ad.abs(ad.sub(x, np.asarray(y, dtype=np.float64)))
    return ad.lovasz_extension(errors, y)


def cross_entropy(probs, labels, class_axis=-2, mask=None):
    """Mean over pixels of ``-sum_c y_c log(x_c)`` with clamped ``x``.

    ``mask`` (broadcastable to the per-pixel loss) excludes pixels from the
    mean; their label columns may be all zero.
    """
    if not ad.is_symbolic(probs, labels):
        check_same_shape(probs, labels, "probs and labels")
        valid = None if mask is None else np.broadcast_to(
            np.asarray(mask, bool), np.sum(np.asarray(labels), axis=class_axis).shape)
        check_distributions(probs, class_axis, "probs", valid)
        check_distributions(labels, class_axis, "labels", valid)
    logp = ad.log(ad.clamp(probs, CE_CLAMP, 1.0 - CE_CLAMP))
    per_pixel = ad.neg(ad.sum(ad.mul(labels, logp), axis=class_axis))
    if mask is None:
        return ad.mean(per_pixel)
    return ad.div(ad.sum(ad.mul(per_pixel, mask)), ad.clamp(ad.sum(mask), 1.0))


def binary_cross_entropy(x, y):
    """Two-class cross-entropy of scalar probabilities ``x`` against ``y``."""
    x = np.clip(np.asarray(x, dtype=np.float64), CE_CLAMP, 1.0 - CE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(x) + (1.0 - y) * np.log(1.0 - x))


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ActiveClassPolicy:
    """Which classes contribute to a class-averaged loss."""

    mode: str = "PRESENT"
    threshold: float = 0.1

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ACTIVE_MODES:
            raise ValueError(f"active mode must be one of {ACTIVE_MODES}, got {self.mode!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass
class LossConfig:
    """Hyper-parameters of the region (Jaccard-type) loss term.

    ``active_mode=None`` picks PRESENT for hard labels and ALL for soft
    labels.  ``epsilon``, ``kernel_size`` and ``smoothing`` describe the
    label smoothing applied before the loss by the training objectives.
    """

    variant: str = "jml1"
    norm: str = "l1"
    alpha: float = 1.0
    beta: float = 1.0
    active_mode: str | None = None
    threshold: float = 0.1
    scope: str = "batch"
    epsilon: float = 0.5
    kernel_size: int = 3
    smoothing: str = "boundary"

    def __post_init__(self):
        if self.variant not in FAMILIES or self.variant in ("iou", "ce"):
            raise ValueError(f"unsupported region loss variant {self.variant!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if self.active_mode is not None:
            self.active_mode = ActiveClassPolicy(self.active_mode, self.threshold).mode
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    def policy(self, soft_labels: bool) -> ActiveClassPolicy:
        mode = self.active_mode or ("ALL" if soft_labels else "PRESENT")
        return ActiveClassPolicy(mode, self.threshold)

    def loss_fn(self) -> Callable:
        if self.variant == "sjl":
            return partial(sjl, norm=self.norm)
        if self.variant in ("jml1", "jml2"):
            return partial(jml, which=self.variant, norm=self.norm)
        if self.variant == "tversky":
            return partial(tversky_metric, alpha=self.alpha, beta=self.beta)
        return lovasz_softmax


# ---------------------------------------------------------------------------
# active classes and aggregation

def _class_reduce(arr, fn):
    """Reduce an array shaped ``(..., C, P)`` to shape ``(C,)``."""
    arr = np.moveaxis(np.asarray(arr, dtype=np.float64), -2, 0)
    return fn(arr.reshape(arr.shape[0], -1), axis=1)


def select_active_classes(labels, probs, policy: ActiveClassPolicy, valid=None) -> np.ndarray:
    """Sorted indices of the classes that enter the class average.

    Arrays are laid out ``(..., C, P)``.  ``valid`` (shape ``(..., P)``)
    removes ignored pixels from every statistic.  An empty selection under a
    thresholded mode falls back to PRESENT; if no pixel is valid at all,
    every class is returned.
    """
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.shape[-2] != probs.shape[-2]:
        raise ValueError("labels and probs must share the class count")
    n_classes = labels.shape[-2]
    everything = np.arange(n_classes)
    if policy.mode == "ALL":
        return everything
    if valid is not None:
        keep = np.expand_dims(np.asarray(valid, bool), -2)
        labels = np.where(keep, labels, -np.inf)
        probs = np.where(keep, probs, -np.inf)

    def present():
        lab = np.moveaxis(labels, -2, -1).reshape(-1, n_classes)
        lab = lab[np.isfinite(lab).all(axis=1)]
        if lab.shape[0] == 0:
            return everything
        return np.unique(np.argmax(lab, axis=1))

    if policy.mode == "PRESENT":
        return present()
    label_max = _class_reduce(labels, np.max)
    prob_max = _class_reduce(probs, np.max)
    chosen = {
        "LABEL": label_max >= policy.threshold,
        "PROB": prob_max >= policy.threshold,
        "BOTH": (label_max >= policy.threshold) & (prob_max >= policy.threshold),
    }[policy.mode]
    selected = np.flatnonzero(chosen)
    return selected if selected.size else present()


def active_mask(indices, n_classes) -> np.ndarray:
    mask = np.zeros(n_classes)
    mask[np.asarray(indices, dtype=np.intp)] = 1.0
    return mask


def aggregate_classes(loss_fn, probs, labels, active, scope="batch", valid=None):
    """Class-averaged loss over the active classes.

    ``probs`` and ``labels`` are shaped ``(B, C, P)``; plain 2-D arrays are
    taken as a single image.  ``active`` is either a sequence of class
    indices or a length-``C`` 0/1 weight vector (array or graph node);
    the latter lets a fixed graph receive a fresh selection per batch.

    Scopes: ``batch`` pools every image of the batch per class; ``image``
    computes per image and class, then averages over images; and
    ``class-agnostic`` pools the active classes into one vector pair.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    if not ad.is_symbolic(probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 2:
            probs = probs[None]
    if not ad.is_symbolic(labels):
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim == 2:
            labels = labels[None]
    if valid is not None:
        probs, labels = ad.mul(probs, valid), ad.mul(labels, valid)

    weights = None
    if ad.is_symbolic(active) or np.ndim(active) == 1 and _looks_like_mask(active, probs):
        weights = active
    else:
        idx = np.atleast_1d(np.asarray(active, dtype=np.intp))
        if idx.size == 0:
            raise ValueError("at least one active class is required")
        n_classes = None if ad.is_symbolic(probs) else probs.shape[-2]
        if n_classes is not None and (idx.min() < 0 or idx.max() >= n_classes):
            raise ValueError(f"active class index out of range for {n_classes} classes")
        probs = ad.take(probs, idx, axis=-2)
        labels = ad.take(labels, idx, axis=-2)

    if scope == "class-agnostic":
        if weights is not None:
            w = ad.reshape(weights, (-1, 1))
            probs, labels = ad.mul(probs, w), ad.mul(labels, w)
        return loss_fn(ad.flatten(probs, 0), ad.flatten(labels, 0))

    if scope == "batch":
        per_class = loss_fn(ad.flatten(ad.transpose(probs, (1, 0, 2)), 1),
                            ad.flatten(ad.transpose(labels, (1, 0, 2)), 1))
    else:
        per_class = ad.mean(loss_fn(probs, labels), axis=0)
    if weights is None:
        return ad.mean(per_class)
    return ad.div(ad.sum(ad.mul(per_class, weights)), ad.clamp(ad.sum(weights), 1.0))


def _looks_like_mask(active, probs) -> bool:
    arr = np.asarray(active)
    if arr.dtype == bool:
        return True
    if arr.dtype.kind != "f" or ad.is_symbolic(probs):
        return False
    return arr.shape[0] == probs.shape[-2]


def region_loss(probs, labels, cfg: LossConfig, active=None, valid=None):
    """The configured Jaccard-type term, class-averaged.

    Without an explicit ``active`` selection, numeric inputs get one from
    ``cfg``'s policy; symbolic inputs must supply it.
    """
    if active is None:
        if ad.is_symbolic(probs, labels):
            raise ValueError("symbolic inputs need an explicit active-class selection")
        policy = cfg.policy(soft_labels=not is_binary(labels))
        vmask = None if valid is None else np.squeeze(np.asarray(valid, bool), -2)
        active = select_active_classes(labels, probs, policy, vmask)
    return aggregate_classes(cfg.loss_fn(), probs, labels, active, cfg.scope, valid)
