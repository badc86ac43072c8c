"""Input checks shared by the loss, label and metric modules."""
import numpy as np

from . import autodiff as ad


class LossInputError(ValueError):
    """Loss operands violate the function's domain."""


def check_same_shape(x, y, what="x and y"):
    if np.shape(x) != np.shape(y):
        raise LossInputError(f"{what} must share a shape, got {np.shape(x)} and {np.shape(y)}")


def check_unit_interval(x, name="x", atol=0.0):
    """Raise unless every entry of a numeric ``x`` lies in [0, 1].

    Symbolic operands are passed through untouched; they are checked when
    the graph is evaluated by the caller, if at all.
    """
    if ad.is_symbolic(x):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise LossInputError(f"{name} contains non-finite values")
    if arr.size and (arr.min() < -atol or arr.max() > 1.0 + atol):
        raise LossInputError(f"{name} must lie in [0, 1], got range "
                             f"[{arr.min():.6g}, {arr.max():.6g}]")
    return arr


def check_binary(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise LossInputError(f"{name} must be binary (entries in {{0, 1}})")
    return arr


def is_binary(x) -> bool:
    if ad.is_symbolic(x):
        return False
    arr = np.asarray(x)
    return bool(np.all((arr == 0) | (arr == 1)))


def check_distributions(p, axis, name="probabilities", mask=None, tol=1e-6):
    """Raise unless ``p`` sums to one along ``axis`` (where ``mask`` is true)."""
    arr = check_unit_interval(p, name, atol=tol)
    sums = arr.sum(axis=axis)
    bad = np.abs(sums - 1.0) > tol
    if mask is not None:
        bad &= np.asarray(mask, dtype=bool)
    if np.any(bad):
        raise LossInputError(f"{name} are not normalised along axis {axis} "
                             f"(worst sum {sums[bad].flat[0]:.6g})")
    return arr


def check_label_map(labels, n_classes=None, ignore_index=None):
    """Validate an integer class-index map; returns an int64 array."""
    arr = np.asarray(labels)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("label map must hold integer class indices")
    arr = arr.astype(np.int64)
    valid = arr != ignore_index if ignore_index is not None else np.ones(arr.shape, bool)
    if np.any(arr[valid] < 0):
        raise ValueError("label map contains negative class indices")
    if n_classes is not None and np.any(arr[valid] >= n_classes):
        raise ValueError(f"label map contains class index >= n_classes ({n_classes})")
    return arr
