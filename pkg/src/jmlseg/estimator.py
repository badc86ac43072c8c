"""Per-pixel MLP segmenter trained with the Jaccard-metric objectives.

Inputs follow an image layout: features ``X`` are ``(N, F, H, W)`` and label
maps ``y`` are ``(N, H, W)``.  Each pixel is described by the ``p x p``
patch of features around it (edge-replicated), standardised on the
training set.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .compositions import (DEFAULT_EMA_DECAY, CompositionWeights, ema_update, kd_objective,
                           ls_objective, ssl_objective)
from .labels import boundary_mask, one_hot, smooth_labels
from .losses import ActiveClassPolicy, LossConfig
from .metrics import ConfusionAccumulator, calibration_error, miou

TECHNIQUES = ("supervised", "LS", "BLS", "KD", "SSL")


class TrainingDivergedError(FloatingPointError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration, value):
        super().__init__(f"non-finite training loss {value} at iteration {iteration}")
        self.iteration = iteration


def patch_features(X, patch_size):
    """``(N, F, H, W)`` -> ``(N, H*W, F*p*p)`` with edge padding."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"features must be (N, F, H, W), got shape {X.shape}")
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError("patch_size must be an odd integer >= 1")
    r = patch_size // 2
    padded = np.pad(X, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    win = sliding_window_view(padded, (patch_size, patch_size), axis=(2, 3))
    n, f, h, w = X.shape
    # (N, F, H, W, p, p) -> (N, H, W, F, p, p)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    return win.reshape(n, h * w, f * patch_size * patch_size)


def _relu(a):
    return ad.clamp(a, 0.0)


def _forward(params, feats, n_layers):
    """Class probabilities ``(B, C, P)`` for patch features ``(B, P, D)``."""
    b, p, d = feats.shape
    h = feats.reshape(b * p, d)
    for i in range(n_layers):
        h = ad.add(ad.dot(h, params[f"W{i}"]), params[f"b{i}"])
        if i < n_layers - 1:
            h = _relu(h)
    probs = ad.softmax(h, axis=-1)
    return ad.transpose(ad.reshape(probs, (b, p, -1)), (0, 2, 1))


class JaccardSegmenter(ClassifierMixin, BaseEstimator):
    """Pixel classifier trained with cross-entropy plus a Jaccard-type loss.

    Parameters
    ----------
    n_classes : int
    patch_size : int
        Odd side of the feature patch around each pixel.
    hidden : tuple of int
        Hidden layer widths.
    learning_rate, momentum, weight_decay, poly_power : float
        SGD with momentum, L2 weight decay on the weight matrices, and
        ``lr * (1 - it / n_iter) ** poly_power`` decay.
    n_iter, batch_size : int
        Optimisation steps and images per step.
    technique : {"supervised", "LS", "BLS", "KD", "SSL"}
    loss : LossConfig or dict, optional
    weights : CompositionWeights or dict, optional
    teacher : JaccardSegmenter, optional
        Fitted teacher, required for ``technique="KD"``.
    teacher_mode : str
        Active-class mode for the teacher term of KD.
    ema_decay : float
        Teacher decay for SSL.
    ssl_noise : float
        Std of the Gaussian feature noise in the SSL student view.
    eval_every : int, optional
        Validation period in iterations; one epoch when omitted.
    bece_kernel : int
        Boundary kernel for the boundary calibration error.
    random_state : int
    """

    def __init__(self, n_classes=5, patch_size=3, hidden=(32,), learning_rate=0.01,
                 momentum=0.9, weight_decay=5e-4, poly_power=0.9, n_iter=300, batch_size=4,
                 technique="supervised", loss=None, weights=None, teacher=None,
                 teacher_mode="LABEL", ema_decay=DEFAULT_EMA_DECAY, ssl_noise=0.1,
                 eval_every=None, bece_kernel=3, random_state=0):
        self.n_classes = n_classes
        self.patch_size = patch_size
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.poly_power = poly_power
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.technique = technique
        self.loss = loss
        self.weights = weights
        self.teacher = teacher
        self.teacher_mode = teacher_mode
        self.ema_decay = ema_decay
        self.ssl_noise = ssl_noise
        self.eval_every = eval_every
        self.bece_kernel = bece_kernel
        self.random_state = random_state

    # -- configuration ----------------------------------------------------

    def _loss_config(self) -> LossConfig:
        if self.loss is None:
            return LossConfig()
        return self.loss if isinstance(self.loss, LossConfig) else LossConfig(**self.loss)

    def _weights(self) -> CompositionWeights:
        if self.weights is None:
            return CompositionWeights()
        if isinstance(self.weights, CompositionWeights):
            return self.weights
        return CompositionWeights(**self.weights)

    def _check_params(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"technique must be one of {TECHNIQUES}, got {self.technique!r}")
        if self.n_iter <= 0:
            raise ValueError("n_iter must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.technique == "KD":
            if self.teacher is None:
                raise ValueError("technique 'KD' needs a fitted teacher")
            check_is_fitted(self.teacher, "params_")

    def _init_params(self, n_in, rng):
        sizes = [n_in, *self.hidden, self.n_classes]
        params = {}
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            params[f"W{i}"] = rng.normal(scale=np.sqrt(2.0 / a), size=(a, b))
            params[f"b{i}"] = np.zeros(b)
        return params

    @property
    def _n_layers(self):
        return len(self.hidden) + 1

    # -- inference ----------------------------------------------------------

    def _features(self, X):
        feats = patch_features(X, self.patch_size)
        n, p, d = feats.shape
        return self.scaler_.transform(feats.reshape(n * p, d)).reshape(n, p, d)

    def _proba_from_features(self, feats, params=None):
        params = self.params_ if params is None else params
        return _forward(params, feats, self._n_layers)

    def predict_proba(self, X):
        """Class probabilities shaped ``(N, C, H, W)``."""
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        n, _, h, w = X.shape
        return self._proba_from_features(self._features(X)).reshape(n, self.n_classes, h, w)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y, sample_weight=None):
        """Dataset-scope mean IoU."""
        acc = ConfusionAccumulator(self.n_classes).accumulate(self.predict(X), y)
        return miou(acc)[0]

    def evaluate(self, X, y):
        """Accuracy, mIoU (both scopes), ECE and boundary ECE on ``(X, y)``."""
        probs = self.predict_proba(X)
        return evaluate_predictions(probs, y, self.n_classes, self.bece_kernel)

    # -- training -------------------------------------------------------------

    def fit(self, X, y, X_unlabeled=None, eval_set=None):
        """Train on features ``X`` ``(N, F, H, W)`` and label maps ``y`` ``(N, H, W)``.

        ``X_unlabeled`` feeds the SSL branch.  ``eval_set=(X_val, y_val)``
        records validation metrics in ``history_``.
        """
        self._check_params()
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 4 or y.shape != (X.shape[0], *X.shape[2:]):
            raise ValueError(f"expected X (N, F, H, W) and y (N, H, W); got {X.shape}, {y.shape}")
        if self.technique == "SSL" and X_unlabeled is None:
            raise ValueError("technique 'SSL' needs X_unlabeled")
        rng = np.random.default_rng(self.random_state)
        cfg, weights = self._loss_config(), self._weights()

        raw = patch_features(X, self.patch_size)
        n, n_pix, d = raw.shape
        self.scaler_ = StandardScaler().fit(raw.reshape(n * n_pix, d))
        feats = self.scaler_.transform(raw.reshape(n * n_pix, d)).reshape(n, n_pix, d)
        onehot, _ = one_hot(y, self.n_classes)
        targets = self._targets(onehot, cfg).reshape(n, self.n_classes, n_pix)
        onehot = onehot.reshape(n, self.n_classes, n_pix)
        teacher_probs = None
        if self.technique == "KD":
            teacher_probs = self.teacher.predict_proba(X).reshape(n, self.n_classes, n_pix)

        params = self._init_params(d, rng)
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
        ema = {k: v.copy() for k, v in params.items()} if self.technique == "SSL" else None
        X_unlabeled = None if X_unlabeled is None else np.asarray(X_unlabeled, dtype=np.float64)

        self.params_ = params
        self.history_ = []
        self.loss_curve_ = []
        eval_every = self.eval_every or max(1, n // self.batch_size)
        for it in range(self.n_iter):
            batch = rng.choice(n, size=min(self.batch_size, n), replace=False)
            if self.technique == "SSL":
                value, grads = self._ssl_step(params, ema, feats[batch], onehot[batch],
                                              X_unlabeled, cfg, weights, rng)
            else:
                value, grads = self._step(params, feats[batch], onehot[batch],
                                          targets[batch], teacher_probs, batch, cfg, weights)
            if not np.isfinite(value):
                raise TrainingDivergedError(it, float(value))
            self.loss_curve_.append(float(value))
            lr = self.learning_rate * (1.0 - it / self.n_iter) ** self.poly_power
            for name, g in grads.items():
                if name.startswith("W"):
                    g = g + self.weight_decay * params[name]
                velocity[name] = self.momentum * velocity[name] + g
                params[name] -= lr * velocity[name]
            if ema is not None:
                ema_update(ema, params, self.ema_decay)
            done = it + 1
            if eval_set is not None and (done % eval_every == 0 or done == self.n_iter):
                record = {"iteration": done, "loss": float(value)}
                record.update(self.evaluate(*eval_set))
                self.history_.append(record)
        self.classes_ = np.arange(self.n_classes)
        return self

    def _targets(self, onehot, cfg):
        if self.technique == "LS":
            return smooth_labels(onehot, cfg.epsilon, "uniform")
        if self.technique == "BLS":
            return smooth_labels(onehot, cfg.epsilon, "boundary", cfg.kernel_size)
        return onehot

    def _needs_preview(self, cfg):
        modes = {cfg.active_mode, self.teacher_mode if self.technique == "KD" else None}
        return bool(modes & {"PROB", "BOTH"})

    def _symbolic_params(self, params):
        return {k: ad.input(k) for k in params}

    def _step(self, params, feats, onehot, targets, teacher_probs, batch, cfg, weights):
        sym = self._symbolic_params(params)
        student = _forward(sym, feats, self._n_layers)
        preview = _forward(params, feats, self._n_layers) if self._needs_preview(cfg) else None
        if self.technique == "KD":
            obj = kd_objective(student, teacher_probs[batch], onehot, weights, cfg,
                               ActiveClassPolicy(self.teacher_mode, cfg.threshold),
                               student_preview=preview)
        else:
            obj = ls_objective(student, targets, weights, cfg, student_preview=preview)
        return ad.value_and_grad(obj, params, list(params))

    def _ssl_step(self, params, ema, feats_sup, onehot_sup, X_unlabeled, cfg, weights, rng):
        idx = rng.choice(len(X_unlabeled), size=min(self.batch_size, len(X_unlabeled)),
                         replace=False)
        weak = X_unlabeled[idx]
        flip = rng.uniform() < 0.5
        strong = weak[..., ::-1] if flip else weak
        strong = strong + self.ssl_noise * rng.normal(size=strong.shape)
        b, _, h, w = weak.shape
        targets = self._proba_from_features(self._features(weak), ema)
        targets = targets.reshape(b, self.n_classes, h, w)
        if flip:
            targets = targets[..., ::-1]
        targets = np.ascontiguousarray(targets).reshape(b, self.n_classes, h * w)

        sym = self._symbolic_params(params)
        student_sup = _forward(sym, feats_sup, self._n_layers)
        student_unsup = _forward(sym, self._features(strong), self._n_layers)
        previews = {}
        if self._needs_preview(cfg):
            previews = {"preview_sup": _forward(params, feats_sup, self._n_layers),
                        "preview_unsup": _forward(params, self._features(strong),
                                                  self._n_layers)}
        obj = ssl_objective(student_sup, onehot_sup, student_unsup, targets, weights, cfg,
                            **previews)
        return ad.value_and_grad(obj, params, list(params))


def evaluate_predictions(probs, labels, n_classes, bece_kernel=3, n_bins=15):
    """Validation metrics for probabilities ``(N, C, H, W)`` and labels ``(N, H, W)``."""
    pred = np.argmax(probs, axis=1)
    per_image = [ConfusionAccumulator(n_classes).accumulate(p, t) for p, t in zip(pred, labels)]
    pooled = per_image[0]
    for a in per_image[1:]:
        pooled = pooled + a
    ece, _ = calibration_error(probs, labels, n_bins)
    bmask = boundary_mask(labels, bece_kernel, n_classes=n_classes)
    bece = calibration_error(probs, labels, n_bins, mask=bmask)[0] if bmask.any() else 0.0
    return {"acc": pooled.accuracy(), "miou": miou(pooled)[0],
            "miou_image": miou(per_image, scope="image")[0], "ece": ece, "bece": bece}
