import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from jmlseg import ptf
from jmlseg.data import DatasetSpec, generate_synthetic
from jmlseg.labels import boundary_mask


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_round_trip_is_bitwise(arr):
    back = ptf.from_bytes(ptf.to_bytes(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.astype("<f4").tobytes()


def test_header_layout():
    data = ptf.to_bytes(np.zeros((2, 3), np.float32))
    assert data[:4] == b"PTF1"
    assert int.from_bytes(data[4:8], "little") == 2
    assert int.from_bytes(data[8:12], "little") == 2
    assert int.from_bytes(data[12:16], "little") == 3
    assert len(data) == 16 + 4 * 6


def test_file_round_trip(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    ptf.write(tmp_path / "a.ptf", arr)
    np.testing.assert_array_equal(ptf.read(tmp_path / "a.ptf"), arr)


@pytest.mark.parametrize("blob", [b"", b"XXXX\x00\x00\x00\x00", b"PTF1\x01\x00\x00\x00",
                                  b"PTF1\x01\x00\x00\x00\x02\x00\x00\x00\x00\x00\x00\x00"])
def test_malformed_files(blob):
    with pytest.raises(ptf.PTFError):
        ptf.from_bytes(blob)


def test_generator_deterministic():
    spec = DatasetSpec(n_images=4, height=16, width=16)
    a, b = generate_synthetic(spec, 3), generate_synthetic(spec, 3)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, generate_synthetic(spec, 4).labels)


def test_zero_density_is_background():
    data = generate_synthetic(DatasetSpec(n_images=3, density=0), 0)
    assert np.all(data.labels == 0)


def test_zero_size_rejected():
    with pytest.raises(ValueError):
        DatasetSpec(height=0)
    with pytest.raises(ValueError):
        DatasetSpec(n_classes=1)


def test_no_jitter_keeps_boundary_clean():
    data = generate_synthetic(DatasetSpec(n_images=6, boundary_jitter=0.0), 2)
    for lab, clean in zip(data.labels, data.clean_labels):
        mask = boundary_mask(clean, 3)
        np.testing.assert_array_equal(lab[mask], clean[mask])


def test_jitter_only_touches_boundary_pixels():
    data = generate_synthetic(DatasetSpec(n_images=6, boundary_jitter=1.0), 2)
    for lab, clean in zip(data.labels, data.clean_labels):
        changed = lab != clean
        assert changed.any()
        assert not np.any(changed & ~boundary_mask(clean, 3))


def test_class_imbalance():
    data = generate_synthetic(DatasetSpec(n_images=32), 0)
    counts = np.bincount(data.clean_labels.ravel(), minlength=5)
    assert counts[0] > counts[1] > counts[4]


def test_feature_layout():
    spec = DatasetSpec(n_images=2, height=8, width=10)
    data = generate_synthetic(spec, 0)
    assert data.features.shape == (2, spec.n_features, 8, 10)
    np.testing.assert_allclose(data.features[0, -1, 0], np.linspace(-1, 1, 10))
