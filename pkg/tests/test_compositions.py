import numpy as np
import pytest

from jmlseg import autodiff as ad
from jmlseg.compositions import (CompositionWeights, ema_update, kd_objective, ls_objective,
                                 ssl_objective, supervised_term)
from jmlseg.losses import LossConfig, cross_entropy, jml


def _batch(rng, b=2, c=3, p=5):
    labels = np.eye(c)[rng.integers(0, c, size=(b, p))].transpose(0, 2, 1)
    logits = rng.normal(size=(b, c, p))
    return labels, logits


def _student(logits):
    return ad.softmax(logits, axis=1)


def test_ls_objective_value_matches_parts(rng):
    labels, logits = _batch(rng)
    probs = _student(logits)
    w = CompositionWeights()
    got = float(ls_objective(probs, labels, w, LossConfig()))
    present = np.unique(labels.argmax(axis=1))
    region = np.mean([float(jml(probs[:, c].ravel(), labels[:, c].ravel())) for c in present])
    assert got == pytest.approx(0.25 * float(cross_entropy(probs, labels)) + 0.75 * region)


def test_zero_jml_weight_is_plain_ce(rng):
    labels, logits = _batch(rng)
    probs = _student(logits)
    w = CompositionWeights(lambda_ce=1.0, lambda_jml=0.0)
    assert float(ls_objective(probs, labels, w, LossConfig())) == \
        pytest.approx(float(cross_entropy(probs, labels)))


def test_kd_teacher_gradient_is_zero(rng):
    labels, logits = _batch(rng)
    teacher_np = ad.softmax(rng.normal(size=logits.shape), axis=1)
    z, t = ad.input("z"), ad.input("t")
    obj = kd_objective(ad.softmax(z, axis=1), t, labels, CompositionWeights(), LossConfig(),
                       teacher_preview=teacher_np)
    _, grads = ad.value_and_grad(obj, {"z": logits, "t": teacher_np}, ["z", "t"])
    assert np.all(grads["t"] == 0.0)
    assert np.any(grads["z"] != 0.0)


def test_kd_objective_value(rng):
    labels, logits = _batch(rng)
    probs = _student(logits)
    teacher = ad.softmax(rng.normal(size=logits.shape), axis=1)
    w = CompositionWeights()
    cfg = LossConfig()
    got = float(kd_objective(probs, teacher, labels, w, cfg))
    ce = 0.5 * float(cross_entropy(probs, labels)) + 0.5 * float(cross_entropy(probs, teacher))
    active_t = np.flatnonzero(teacher.max(axis=(0, 2)) >= cfg.threshold)
    present = np.unique(labels.argmax(axis=1))

    def region(target, classes):
        return np.mean([float(jml(probs[:, c].ravel(), target[:, c].ravel())) for c in classes])

    jm = 0.5 * region(labels, present) + 0.5 * region(teacher, active_t)
    assert got == pytest.approx(0.25 * ce + 0.75 * jm)


def test_kd_requires_preview_for_symbolic_teacher(rng):
    labels, logits = _batch(rng)
    with pytest.raises(ValueError):
        kd_objective(_student(logits), ad.input("t"), labels, CompositionWeights(), LossConfig())


def test_ssl_objective_value(rng):
    labels, logits = _batch(rng)
    _, logits_u = _batch(rng)
    targets = ad.softmax(rng.normal(size=logits.shape), axis=1)
    ps, pu = _student(logits), _student(logits_u)
    got = float(ssl_objective(ps, labels, pu, targets, CompositionWeights(), LossConfig()))
    ce = 0.5 * float(cross_entropy(ps, labels)) + 0.5 * float(cross_entropy(pu, targets))
    present = np.unique(labels.argmax(axis=1))
    sup = np.mean([float(jml(ps[:, c].ravel(), labels[:, c].ravel())) for c in present])
    uns = np.mean([float(jml(pu[:, c].ravel(), targets[:, c].ravel())) for c in range(3)])
    assert got == pytest.approx(0.25 * ce + 0.75 * (0.5 * sup + 0.5 * uns))


def test_composed_objective_gradients(rng):
    labels, logits = _batch(rng)
    z = ad.input("z")
    obj = ls_objective(ad.softmax(z, axis=1), 0.8 * labels + 0.2 / 3, CompositionWeights(),
                       LossConfig())
    report = ad.finite_difference_check(obj, {"z": logits}, "z", step=1e-6)
    assert report["max_relative_error"] < 1e-4


def test_supervised_term_prob_mode_needs_preview(rng):
    labels, _ = _batch(rng)
    with pytest.raises(ValueError):
        supervised_term(ad.input("p"), labels, LossConfig(active_mode="PROB"))


def test_weights_validation():
    with pytest.raises(ValueError):
        CompositionWeights(mu_label=-1)
    with pytest.raises(ValueError):
        CompositionWeights(lambda_ce=0, lambda_jml=0)


def test_ema_update():
    teacher = {"w": np.zeros(2)}
    ema_update(teacher, {"w": np.ones(2)}, decay=0.75)
    np.testing.assert_allclose(teacher["w"], 0.25)
    with pytest.raises(ValueError):
        ema_update(teacher, {"w": np.ones(2)}, decay=1.0)
    with pytest.raises(ValueError):
        ema_update(teacher, {"w": np.ones(3)})
