"""Segmentation metrics: pixel accuracy, mIoU and calibration errors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .validation import check_distributions, check_label_map

DEFAULT_BINS = 15


class ConfusionAccumulator:
    """Confusion counts for ``n_classes`` classes, mergeable across images.

    Rows index the true class and columns the predicted class, so the
    diagonal holds per-class intersections.
    """

    def __init__(self, n_classes: int, ignore_index: int | None = None):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.n_classes = n_classes
        self.ignore_index = ignore_index
        self.matrix = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, predicted, true):
        predicted = np.asarray(predicted)
        true = np.asarray(true)
        if predicted.shape != true.shape:
            raise ValueError(f"prediction shape {predicted.shape} != label shape {true.shape}")
        true = check_label_map(true, self.n_classes, self.ignore_index)
        predicted = check_label_map(predicted, self.n_classes)
        keep = true != self.ignore_index if self.ignore_index is not None else slice(None)
        idx = true[keep] * self.n_classes + predicted[keep]
        self.matrix += np.bincount(idx.ravel(), minlength=self.n_classes ** 2).reshape(
            self.n_classes, self.n_classes)
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        out = ConfusionAccumulator(self.n_classes, self.ignore_index)
        out.matrix = self.matrix + other.matrix
        return out

    __add__ = merge

    @property
    def intersection(self):
        return np.diag(self.matrix).copy()

    @property
    def label_count(self):
        return self.matrix.sum(axis=1)

    @property
    def prediction_count(self):
        return self.matrix.sum(axis=0)

    @property
    def union(self):
        return self.label_count + self.prediction_count - self.intersection

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.matrix))

    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("no scored pixels")
        return self.correct / self.total

    def iou(self):
        """Per-class IoU; NaN for classes with an empty union."""
        union = self.union.astype(np.float64)
        out = np.full(self.n_classes, np.nan)
        np.divide(self.intersection, union, out=out, where=union > 0)
        return out


def _class_mean(acc: ConfusionAccumulator) -> float:
    iou = acc.iou()
    present = ~np.isnan(iou)
    return float(iou[present].mean()) if present.any() else 1.0


def miou(accs, scope="dataset"):
    """Mean IoU and per-class IoU.

    ``accs`` is one accumulator or a sequence of per-image accumulators.
    Dataset scope pools counts before taking ratios; image scope averages
    each image's class mean.  Classes with an empty union are skipped.
    """
    if isinstance(accs, ConfusionAccumulator):
        accs = [accs]
    accs = list(accs)
    if not accs or sum(a.total for a in accs) == 0:
        raise ValueError("miou needs at least one scored pixel")
    pooled = accs[0]
    for a in accs[1:]:
        pooled = pooled.merge(a)
    per_class = pooled.iou()
    if scope == "dataset":
        return _class_mean(pooled), per_class
    if scope == "image":
        scores = [_class_mean(a) for a in accs if a.total > 0]
        return float(np.mean(scores)), per_class
    raise ValueError(f"scope must be 'dataset' or 'image', got {scope!r}")


@dataclass
class CalibrationBins:
    """Equal-width confidence bins over [0, 1]; the last bin is right-closed."""

    n_bins: int = DEFAULT_BINS
    count: np.ndarray = field(default=None)
    conf_sum: np.ndarray = field(default=None)
    correct_sum: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        self.edges = np.linspace(0.0, 1.0, self.n_bins + 1)
        for name in ("count", "conf_sum", "correct_sum"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_bins))

    def bin_index(self, conf):
        idx = np.searchsorted(self.edges, conf, side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def add(self, conf, correct):
        conf = np.asarray(conf, dtype=np.float64).ravel()
        correct = np.asarray(correct, dtype=np.float64).ravel()
        idx = self.bin_index(conf)
        self.count += np.bincount(idx, minlength=self.n_bins)
        self.conf_sum += np.bincount(idx, weights=conf, minlength=self.n_bins)
        self.correct_sum += np.bincount(idx, weights=correct, minlength=self.n_bins)
        return self

    def merge(self, other: "CalibrationBins") -> "CalibrationBins":
        if other.n_bins != self.n_bins:
            raise ValueError("bin counts differ")
        return CalibrationBins(self.n_bins, self.count + other.count,
                               self.conf_sum + other.conf_sum,
                               self.correct_sum + other.correct_sum)

    def gap(self, n_total=None) -> float:
        """``sum_b (n_b / N) |acc_b - conf_b|``."""
        n_total = self.count.sum() if n_total is None else n_total
        if n_total == 0:
            return 0.0
        # n_b * |acc_b - conf_b| == |correct_sum_b - conf_sum_b|
        return float(np.abs(self.correct_sum - self.conf_sum).sum() / n_total)

    def table(self):
        """Rows of ``(bin_lo, bin_hi, count, mean_conf, mean_acc)``."""
        rows = []
        for b in range(self.n_bins):
            n = self.count[b]
            rows.append((self.edges[b], self.edges[b + 1], int(n),
                         self.conf_sum[b] / n if n else float("nan"),
                         self.correct_sum[b] / n if n else float("nan")))
        return rows


def _flatten_scored(probs, labels, mask, ignore_index):
    probs = np.asarray(probs, dtype=np.float64)
    labels = check_label_map(labels, probs.shape[-3] if probs.ndim >= 3 else probs.shape[0],
                             ignore_index)
    n_classes = probs.shape[-3] if probs.ndim >= 3 else probs.shape[0]
    if probs.ndim >= 3:
        cls_last = np.moveaxis(probs, -3, -1).reshape(-1, n_classes)
    else:
        cls_last = probs.T
    lab = labels.reshape(-1)
    keep = np.ones(lab.shape, bool)
    if ignore_index is not None:
        keep &= lab != ignore_index
    if mask is not None:
        keep &= np.asarray(mask, bool).reshape(-1)
    return cls_last[keep], lab[keep], n_classes


def calibration_error(probs, labels, n_bins=DEFAULT_BINS, kind="ECE", mask=None,
                      ignore_index=None):
    """Expected (top-class) or static (per-class) calibration error.

    ``probs`` is ``(..., C, H, W)`` (or ``(C, P)``) and ``labels`` the matching
    class-index map.  ``mask`` restricts scoring to selected pixels, which
    gives the boundary variants.  Returns ``(error, bins)``: one
    :class:`CalibrationBins` for ECE, a list of per-class bins for SCE.
    """
    kind = kind.upper()
    flat, lab, n_classes = _flatten_scored(probs, labels, mask, ignore_index)
    if flat.shape[0] == 0:
        raise ValueError("no pixels selected for calibration scoring")
    check_distributions(flat, axis=1, name="probs")
    n_total = flat.shape[0]
    if kind == "ECE":
        pred = np.argmax(flat, axis=1)
        conf = flat[np.arange(n_total), pred]
        bins = CalibrationBins(n_bins).add(conf, pred == lab)
        return bins.gap(), bins
    if kind == "SCE":
        per_class = []
        total = 0.0
        for c in range(n_classes):
            bins = CalibrationBins(n_bins).add(flat[:, c], lab == c)
            per_class.append(bins)
            total += bins.gap(n_total)
        return total / n_classes, per_class
    raise ValueError(f"kind must be 'ECE' or 'SCE', got {kind!r}")


def write_bins_csv(path, bins: CalibrationBins):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count", "mean_conf", "mean_acc"])
        for lo, hi, n, conf, acc in bins.table():
            writer.writerow([f"{lo:.6f}", f"{hi:.6f}", n, _fmt(conf), _fmt(acc)])


def write_class_iou_csv(path, per_class_iou):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou"])
        for c, v in enumerate(per_class_iou):
            writer.writerow([c, _fmt(v)])


def _fmt(v):
    return "" if v != v else f"{v:.10f}"
