import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from jmlseg.labels import BoundaryLabelSmoother, boundary_mask, one_hot, smooth_labels


def _bruteforce_boundary(labels, k):
    h, w = labels.shape
    r = k // 2
    out = np.zeros_like(labels, dtype=bool)
    for i in range(h):
        for j in range(w):
            window = {labels[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
                      for di in range(-r, r + 1) for dj in range(-r, r + 1)}
            out[i, j] = len(window) > 1
    return out


def test_one_hot_and_ignore():
    labels = np.array([[0, 2], [255, 1]])
    field, valid = one_hot(labels, 3, ignore_index=255)
    assert field.shape == (3, 2, 2)
    assert field[:, 1, 0].sum() == 0
    assert not valid[1, 0]
    np.testing.assert_array_equal(field.argmax(axis=0)[valid], labels[valid])


@pytest.mark.parametrize("k", [1, 3, 5])
def test_boundary_mask_matches_bruteforce(rng, k):
    for _ in range(20):
        labels = rng.integers(0, 3, size=(6, 7))
        np.testing.assert_array_equal(boundary_mask(labels, k), _bruteforce_boundary(labels, k))


def test_boundary_mask_constant_map_is_empty():
    assert not boundary_mask(np.zeros((5, 5), int), 3).any()


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        boundary_mask(np.zeros((3, 3), int), 2)


def test_smoothing_rows_sum_to_one(rng):
    labels = rng.integers(0, 4, size=(2, 8, 8))
    field, _ = one_hot(labels, 4)
    for mode in ("uniform", "boundary"):
        out = smooth_labels(field, 0.5, mode, 3)
        np.testing.assert_allclose(out.sum(axis=-3), 1.0, atol=1e-12)


def test_boundary_mode_alters_exactly_flagged_pixels(rng):
    labels = rng.integers(0, 3, size=(9, 9))
    field, _ = one_hot(labels, 3)
    out = smooth_labels(field, 0.5, "boundary", 3)
    changed = np.any(out != field, axis=0)
    np.testing.assert_array_equal(changed, boundary_mask(labels, 3))


def test_uniform_values():
    field, _ = one_hot(np.array([[0, 1]]), 2)
    out = smooth_labels(field, 0.5, "uniform")
    np.testing.assert_allclose(out[:, 0, 0], [0.75, 0.25])


def test_bad_epsilon_and_mode():
    field, _ = one_hot(np.array([[0, 1]]), 2)
    with pytest.raises(ValueError):
        smooth_labels(field, 1.5)
    with pytest.raises(ValueError):
        smooth_labels(field, 0.5, "edges")


def test_transformer_api():
    labels = np.array([[[0, 0, 1], [0, 1, 1], [2, 2, 2]]])
    smoother = BoundaryLabelSmoother(epsilon=0.2)
    with pytest.raises(NotFittedError):
        smoother.transform(labels)
    out = smoother.fit_transform(labels)
    assert out.shape == (1, 3, 3, 3)
    assert smoother.n_classes_ == 3
    assert clone(smoother).get_params()["epsilon"] == 0.2
