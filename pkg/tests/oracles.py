"""Slow reference implementations used as test oracles."""
import numpy as np


def miou_bruteforce(pred, true, n_classes):
    ious = []
    for c in range(n_classes):
        inter = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        union = sum(1 for p, t in zip(pred, true) if p == c or t == c)
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious) if ious else 1.0


def accuracy_bruteforce(pred, true):
    return sum(1 for p, t in zip(pred, true) if p == t) / len(true)


def _bin_of(conf, n_bins):
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        if lo <= conf < hi or (b == n_bins - 1 and conf == hi):
            return b
    raise AssertionError(conf)


def _binned_gap(confs, hits, n_bins, n_total):
    total = 0.0
    for b in range(n_bins):
        members = [i for i, c in enumerate(confs) if _bin_of(c, n_bins) == b]
        if members:
            acc = sum(hits[i] for i in members) / len(members)
            conf = sum(confs[i] for i in members) / len(members)
            total += len(members) / n_total * abs(acc - conf)
    return total


def ece_bruteforce(probs, labels, n_bins):
    """``probs`` is a list of per-pixel class lists."""
    confs, hits = [], []
    for row, lab in zip(probs, labels):
        k = max(range(len(row)), key=lambda c: (row[c], -c))
        confs.append(row[k])
        hits.append(1.0 if k == lab else 0.0)
    return _binned_gap(confs, hits, n_bins, len(labels))


def sce_bruteforce(probs, labels, n_bins):
    n_classes = len(probs[0])
    total = 0.0
    for c in range(n_classes):
        confs = [row[c] for row in probs]
        hits = [1.0 if lab == c else 0.0 for lab in labels]
        total += _binned_gap(confs, hits, n_bins, len(labels))
    return total / n_classes


def random_instance(rng, max_pixels=12, max_classes=4):
    n_pix = int(rng.integers(1, max_pixels + 1))
    n_classes = int(rng.integers(2, max_classes + 1))
    logits = rng.normal(size=(n_pix, n_classes)) * rng.uniform(0.5, 4)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = rng.integers(0, n_classes, size=n_pix)
    return probs, labels, n_classes
