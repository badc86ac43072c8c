import numpy as np
import pytest
from oracles import (accuracy_bruteforce, ece_bruteforce, miou_bruteforce, random_instance,
                     sce_bruteforce)

from jmlseg.metrics import (CalibrationBins, ConfusionAccumulator, calibration_error, miou,
                            write_bins_csv, write_class_iou_csv)


def test_confusion_counts():
    acc = ConfusionAccumulator(3).accumulate(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]))
    np.testing.assert_array_equal(acc.intersection, [1, 1, 1])
    np.testing.assert_array_equal(acc.union, [1, 2, 2])
    assert acc.accuracy() == 0.75


def test_ignore_index_excluded():
    acc = ConfusionAccumulator(2, ignore_index=255)
    acc.accumulate(np.array([0, 1, 1]), np.array([0, 255, 1]))
    assert acc.total == 2


def test_absent_class_skipped_in_mean():
    acc = ConfusionAccumulator(3).accumulate(np.array([0, 0]), np.array([0, 0]))
    assert np.isnan(acc.iou()[2])
    assert miou(acc)[0] == 1.0


def test_merge_equals_pooled(rng):
    a, b = ConfusionAccumulator(3), ConfusionAccumulator(3)
    p1, t1, p2, t2 = rng.integers(0, 3, size=(4, 20))
    a.accumulate(p1, t1)
    b.accumulate(p2, t2)
    pooled = ConfusionAccumulator(3).accumulate(np.concatenate([p1, p2]), np.concatenate([t1, t2]))
    np.testing.assert_array_equal((a + b).matrix, pooled.matrix)


def test_image_scope_differs_from_dataset_scope():
    a = ConfusionAccumulator(2).accumulate(np.array([0, 0]), np.array([0, 1]))
    b = ConfusionAccumulator(2).accumulate(np.array([1, 1]), np.array([1, 1]))
    dataset, _ = miou([a, b])
    image, _ = miou([a, b], scope="image")
    assert dataset == pytest.approx((1 / 2 + 2 / 3) / 2)
    assert image == pytest.approx((0.25 + 1.0) / 2)


def test_metrics_match_bruteforce(rng):
    for _ in range(300):
        probs, labels, c = random_instance(rng)
        pred = probs.argmax(axis=1)
        acc = ConfusionAccumulator(c).accumulate(pred, labels)
        assert acc.correct == sum(int(p == t) for p, t in zip(pred, labels))
        assert miou(acc)[0] == pytest.approx(miou_bruteforce(pred, labels, c), abs=1e-12)
        assert acc.accuracy() == pytest.approx(accuracy_bruteforce(pred, labels), abs=1e-12)
        for n_bins in (1, 3, 15):
            ece, _ = calibration_error(probs.T, labels, n_bins)
            sce, _ = calibration_error(probs.T, labels, n_bins, "SCE")
            rows = probs.tolist()
            assert ece == pytest.approx(ece_bruteforce(rows, labels, n_bins), abs=1e-12)
            assert sce == pytest.approx(sce_bruteforce(rows, labels, n_bins), abs=1e-12)


def test_bin_edges():
    bins = CalibrationBins(4)
    np.testing.assert_array_equal(bins.bin_index(np.array([0.0, 0.25, 0.49, 0.75, 1.0])),
                                  [0, 1, 1, 3, 3])


def test_image_layout_and_mask(rng):
    probs = rng.dirichlet(np.ones(3), size=(2, 4, 4)).transpose(0, 3, 1, 2)
    labels = rng.integers(0, 3, size=(2, 4, 4))
    full, _ = calibration_error(probs, labels)
    masked, _ = calibration_error(probs, labels, mask=np.ones(labels.shape, bool))
    assert full == masked
    with pytest.raises(ValueError):
        calibration_error(probs, labels, mask=np.zeros(labels.shape, bool))


def test_bins_merge(rng):
    conf = rng.uniform(size=50)
    hit = rng.integers(0, 2, size=50)
    whole = CalibrationBins(5).add(conf, hit)
    split = CalibrationBins(5).add(conf[:20], hit[:20]).merge(CalibrationBins(5).add(conf[20:], hit[20:]))
    assert whole.gap() == pytest.approx(split.gap())


def test_csv_writers(tmp_path, rng):
    probs = rng.dirichlet(np.ones(3), size=10).T
    labels = rng.integers(0, 3, size=10)
    _, bins = calibration_error(probs, labels, 5)
    write_bins_csv(tmp_path / "bins.csv", bins)
    lines = (tmp_path / "bins.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count,mean_conf,mean_acc"
    assert len(lines) == 6
    write_class_iou_csv(tmp_path / "iou.csv", [0.5, float("nan")])
    assert (tmp_path / "iou.csv").read_text().splitlines() == ["class,iou", "0,0.5000000000", "1,"]


def test_bad_kind(rng):
    with pytest.raises(ValueError):
        calibration_error(np.array([[1.0], [0.0]]), np.array([0]), kind="MCE")
