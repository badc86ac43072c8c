"""JSON-configured desk-scale training runs and their report files.

Output directory layout::

    config.json         resolved configuration
    history.csv         one row per validation pass
    report.json         final metrics
    class_iou.csv       per-class IoU on the validation set
    calibration_bins.csv  ECE reliability table
    pred_probs.ptf      validation probabilities (N, C, H, W)
    val_labels.ptf      validation label maps (N, H, W)
    teacher_history.csv (KD only)
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ptf
from .compositions import CompositionWeights
from .data import DatasetSpec, generate_synthetic
from .estimator import TECHNIQUES, JaccardSegmenter
from .losses import LossConfig
from .metrics import ConfusionAccumulator, calibration_error, miou, write_bins_csv, \
    write_class_iou_csv

HISTORY_COLUMNS = ("iteration", "loss", "acc", "miou", "miou_image", "ece", "bece")


@dataclass
class ModelSpec:
    patch_size: int = 3
    hidden: tuple = (32,)
    teacher_width_factor: int = 4

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


@dataclass
class OptimizerSpec:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    iterations: int = 300
    batch_size: int = 4

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class ExperimentConfig:
    """Everything a run depends on.  ``val_fraction`` of the images are held out;
    SSL additionally keeps labels for only ``labeled_fraction`` of the rest."""

    seed: int = 0
    technique: str = "supervised"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    weights: CompositionWeights = field(default_factory=CompositionWeights)
    val_fraction: float = 0.5
    labeled_fraction: float = 0.5
    teacher_mode: str = "LABEL"
    ema_decay: float = 0.999
    bece_kernel: int = 3
    n_bins: int = 15

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"technique must be one of {TECHNIQUES}, got {self.technique!r}")
        for name in ("val_fraction", "labeled_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        n_val = self.n_val
        if n_val < 1 or self.dataset.n_images - n_val < 1:
            raise ValueError("dataset too small for the requested validation split")

    @property
    def n_val(self) -> int:
        return max(1, int(round(self.val_fraction * self.dataset.n_images)))

    def to_dict(self):
        out = asdict(self)
        out["model"]["hidden"] = list(self.model.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        nested = {"dataset": DatasetSpec, "model": ModelSpec, "optimizer": OptimizerSpec,
                  "loss": LossConfig, "weights": CompositionWeights}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                sub_known = {f.name for f in fields(nested[key])}
                bad = set(value) - sub_known
                if bad:
                    raise ValueError(f"unknown {key} keys: {sorted(bad)}")
                kwargs[key] = nested[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _segmenter(cfg: ExperimentConfig, technique, hidden, seed, teacher=None):
    opt = cfg.optimizer
    return JaccardSegmenter(
        n_classes=cfg.dataset.n_classes, patch_size=cfg.model.patch_size, hidden=hidden,
        learning_rate=opt.learning_rate, momentum=opt.momentum, weight_decay=opt.weight_decay,
        poly_power=opt.poly_power, n_iter=opt.iterations, batch_size=opt.batch_size,
        technique=technique, loss=cfg.loss, weights=cfg.weights, teacher=teacher,
        teacher_mode=cfg.teacher_mode, ema_decay=cfg.ema_decay, bece_kernel=cfg.bece_kernel,
        random_state=seed)


@dataclass
class RunResult:
    model: JaccardSegmenter
    history: list
    metrics: dict
    teacher: JaccardSegmenter | None = None


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Generate data, train (teacher first for KD) and score on the held-out split."""
    data = generate_synthetic(cfg.dataset, cfg.seed)
    n_val = cfg.n_val
    train, val = data.subset(slice(n_val, None)), data.subset(slice(0, n_val))
    eval_set = (val.features, val.labels)
    model_seed = cfg.seed + 1

    teacher = None
    if cfg.technique == "KD":
        wide = tuple(cfg.model.teacher_width_factor * h for h in cfg.model.hidden)
        teacher = _segmenter(cfg, "supervised", wide, model_seed + 1)
        teacher.fit(train.features, train.labels, eval_set=eval_set)

    model = _segmenter(cfg, cfg.technique, cfg.model.hidden, model_seed, teacher)
    if cfg.technique == "SSL":
        n_lab = max(1, int(round(cfg.labeled_fraction * len(train))))
        model.fit(train.features[:n_lab], train.labels[:n_lab],
                  X_unlabeled=train.features[n_lab:] if n_lab < len(train) else train.features,
                  eval_set=eval_set)
    else:
        model.fit(train.features, train.labels, eval_set=eval_set)
    metrics = dict(model.history_[-1])
    return RunResult(model, model.history_, metrics, teacher)


def _write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["iteration"]] + [f"{row[k]:.10f}" for k in HISTORY_COLUMNS[1:]])


def train(cfg: ExperimentConfig, out_dir) -> RunResult:
    """Run ``cfg`` and write its report files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    _write_history(out / "history.csv", result.history)
    if result.teacher is not None:
        _write_history(out / "teacher_history.csv", result.teacher.history_)

    data = generate_synthetic(cfg.dataset, cfg.seed)
    val = data.subset(slice(0, cfg.n_val))
    probs = result.model.predict_proba(val.features)
    ptf.write(out / "pred_probs.ptf", probs)
    ptf.write(out / "val_labels.ptf", val.labels)
    acc = ConfusionAccumulator(cfg.dataset.n_classes).accumulate(probs.argmax(axis=1), val.labels)
    write_class_iou_csv(out / "class_iou.csv", miou(acc)[1])
    write_bins_csv(out / "calibration_bins.csv",
                   calibration_error(probs, val.labels, cfg.n_bins)[1])
    report = {"technique": cfg.technique, "seed": cfg.seed,
              "final": {k: (int(v) if k == "iteration" else round(float(v), 12))
                        for k, v in result.metrics.items()}}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return result


def mean_metric(results, key):
    return float(np.mean([r.metrics[key] for r in results]))
