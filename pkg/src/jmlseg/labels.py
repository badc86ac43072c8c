"""One-hot encoding, boundary detection and (boundary) label smoothing.

Label maps are integer arrays shaped ``(..., H, W)``; soft label fields are
shaped ``(..., C, H, W)``.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .validation import check_label_map

DEFAULT_EPSILON = 0.5
DEFAULT_KERNEL = 3


def one_hot(labels, n_classes, ignore_index=None):
    """Encode a label map as a ``(..., C, H, W)`` field.

    Returns ``(field, valid)``; ignored pixels get an all-zero column and a
    ``False`` entry in ``valid``.
    """
    labels = check_label_map(labels, n_classes, ignore_index)
    valid = labels != ignore_index if ignore_index is not None else np.ones(labels.shape, bool)
    safe = np.where(valid, labels, 0)
    field = (np.arange(n_classes).reshape((n_classes, 1, 1)) == safe[..., None, :, :])
    field = field & valid[..., None, :, :]
    return field.astype(np.float64), valid


def _check_kernel(k):
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 1, got {k}")
    return int(k)


def boundary_from_field(field, k):
    """Boundary mask of a one-hot field: more than one class in the window."""
    k = _check_kernel(k)
    pooled = ad.max_pool2d(np.asarray(field, dtype=np.float64), k)
    occupied = field.sum(axis=-3) > 0
    return (np.sum(pooled > 0, axis=-3) > 1) & occupied


def boundary_mask(labels, k=DEFAULT_KERNEL, ignore_index=None, n_classes=None):
    """Pixels whose ``k x k`` neighbourhood contains a different class.

    Image edges are replicate-padded; ignored pixels are neither boundary
    pixels nor counted as neighbours.
    """
    k = _check_kernel(k)
    labels = check_label_map(labels, None, ignore_index)
    valid = labels != ignore_index if ignore_index is not None else np.ones(labels.shape, bool)
    if n_classes is None:
        n_classes = int(labels[valid].max()) + 1 if valid.any() else 1
    field, _ = one_hot(labels, n_classes, ignore_index)
    return boundary_from_field(field, k)


def smooth_labels(onehot, epsilon=DEFAULT_EPSILON, mode="boundary", k=DEFAULT_KERNEL):
    """Mix one-hot columns with the uniform distribution: ``(1-eps)*y + eps/C``.

    ``mode="uniform"`` smooths every labelled pixel; ``mode="boundary"`` only
    the pixels flagged by the boundary mask.  All-zero (ignored) columns are
    left untouched.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    onehot = np.asarray(onehot, dtype=np.float64)
    n_classes = onehot.shape[-3]
    labelled = onehot.sum(axis=-3) > 0
    if mode == "uniform":
        where = labelled
    elif mode == "boundary":
        where = boundary_from_field(onehot, k)
    else:
        raise ValueError(f"mode must be 'uniform' or 'boundary', got {mode!r}")
    smoothed = (1.0 - epsilon) * onehot + epsilon / n_classes
    return np.where(where[..., None, :, :], smoothed, onehot)


class BoundaryLabelSmoother(TransformerMixin, BaseEstimator):
    """Turn label maps into (boundary-)smoothed soft label fields.

    Parameters
    ----------
    n_classes : int, optional
        Number of classes; inferred from the maps seen in ``fit`` if omitted.
    epsilon : float
        Smoothing coefficient.
    kernel_size : int
        Odd neighbourhood size for boundary detection.
    mode : {"boundary", "uniform"}
    ignore_index : int, optional
    """

    def __init__(self, n_classes=None, epsilon=DEFAULT_EPSILON, kernel_size=DEFAULT_KERNEL,
                 mode="boundary", ignore_index=None):
        self.n_classes = n_classes
        self.epsilon = epsilon
        self.kernel_size = kernel_size
        self.mode = mode
        self.ignore_index = ignore_index

    def fit(self, X, y=None):
        labels = check_label_map(X, self.n_classes, self.ignore_index)
        if self.n_classes is None:
            valid = labels != self.ignore_index if self.ignore_index is not None else slice(None)
            self.n_classes_ = int(labels[valid].max()) + 1
        else:
            self.n_classes_ = self.n_classes
        return self

    def transform(self, X):
        if not hasattr(self, "n_classes_"):
            raise NotFittedError("BoundaryLabelSmoother is not fitted yet")
        field, _ = one_hot(X, self.n_classes_, self.ignore_index)
        return smooth_labels(field, self.epsilon, self.mode, self.kernel_size)
