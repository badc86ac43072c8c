"""Training objectives mixing cross-entropy with the region loss.

Probabilities and labels are laid out ``(B, C, P)``.  Student probabilities
may be graph nodes; teacher probabilities are always detached.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .losses import (ActiveClassPolicy, LossConfig, cross_entropy, region_loss,
                     select_active_classes)

DEFAULT_EMA_DECAY = 0.999


@dataclass
class CompositionWeights:
    """Term weights; defaults are 0.25/0.75 for CE/JML and 0.5 elsewhere."""

    lambda_ce: float = 0.25
    lambda_jml: float = 0.75
    mu_label: float = 0.5
    mu_teacher: float = 0.5
    nu_label: float = 0.5
    nu_teacher: float = 0.5
    eta_sup: float = 0.5
    eta_unsup: float = 0.5
    theta_sup: float = 0.5
    theta_unsup: float = 0.5

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.lambda_ce + self.lambda_jml <= 0:
            raise ValueError("lambda_ce + lambda_jml must be positive")


def _valid_mask(valid):
    if valid is None:
        return None
    valid = np.asarray(valid, dtype=np.float64)
    return valid[:, None, :] if valid.ndim == 2 else valid


def _ce(probs, labels, valid):
    return cross_entropy(probs, labels, class_axis=-2,
                         mask=None if valid is None else valid[:, 0, :])


def _weighted(*terms):
    """Sum of ``weight * term`` skipping zero weights (no graph edge at all)."""
    total = None
    for w, make in terms:
        if w == 0:
            continue
        term = ad.mul(w, make())
        total = term if total is None else ad.add(total, term)
    return 0.0 if total is None else total


def _student_preview(probs, preview):
    if preview is not None:
        return np.asarray(preview, dtype=np.float64)
    if ad.is_symbolic(probs):
        return None
    return np.asarray(probs, dtype=np.float64)


def _numeric(value, preview, what):
    if preview is not None:
        return np.asarray(preview, dtype=np.float64)
    if ad.is_symbolic(value):
        raise ValueError(f"symbolic teacher values need {what}")
    return np.asarray(value, dtype=np.float64)


def _active(labels, probs_preview, policy: ActiveClassPolicy, valid):
    if probs_preview is None:
        if policy.mode in ("PROB", "BOTH"):
            raise ValueError(f"{policy.mode} selection needs numeric student probabilities "
                             "(pass student_preview)")
        probs_preview = np.zeros_like(labels)
    vmask = None if valid is None else valid[:, 0, :] > 0
    return select_active_classes(labels, probs_preview, policy, vmask)


def supervised_term(student, labels, loss_cfg, valid=None, student_preview=None):
    """Region loss of ``student`` against numeric ``labels``."""
    labels = np.asarray(labels, dtype=np.float64)
    valid = _valid_mask(valid)
    soft = not np.all((labels == 0) | (labels == 1))
    policy = loss_cfg.policy(soft_labels=soft)
    active = _active(labels, _student_preview(student, student_preview), policy, valid)
    return region_loss(student, labels, loss_cfg, active=active, valid=valid)


def ls_objective(student, smoothed_labels, weights: CompositionWeights,
                 loss_cfg: LossConfig, valid=None, student_preview=None):
    """``lambda_ce * CE(H, SL) + lambda_jml * JML(H, SL)``."""
    valid = _valid_mask(valid)
    return _weighted(
        (weights.lambda_ce, lambda: _ce(student, smoothed_labels, valid)),
        (weights.lambda_jml, lambda: supervised_term(student, smoothed_labels, loss_cfg,
                                                     valid, student_preview)),
    )


def kd_objective(student, teacher_probs, hard_labels, weights: CompositionWeights,
                 loss_cfg: LossConfig, teacher_policy: ActiveClassPolicy | None = None,
                 valid=None, student_preview=None, teacher_preview=None):
    """Distillation objective.

    ``lambda_ce * (mu_L CE(S, L) + mu_T CE(S, T))
    + lambda_jml * (nu_L JML(S, L) + nu_T JML(S, T))``.  The teacher term's
    active classes come from ``teacher_policy`` (LABEL at the config
    threshold by default) applied to the teacher's probabilities.  A
    symbolic ``teacher_probs`` needs its numeric ``teacher_preview``.
    """
    teacher = ad.detach(teacher_probs)
    teacher_np = _numeric(teacher_probs, teacher_preview, "teacher_preview")
    hard_labels = np.asarray(hard_labels, dtype=np.float64)
    if teacher_np.shape[-2] != hard_labels.shape[-2]:
        raise ValueError("student/teacher class counts differ")
    if teacher_policy is None:
        teacher_policy = ActiveClassPolicy("LABEL", loss_cfg.threshold)
    valid = _valid_mask(valid)
    preview = _student_preview(student, student_preview)

    def teacher_region():
        active = _active(teacher_np, preview, teacher_policy, valid)
        return region_loss(student, teacher, loss_cfg, active=active, valid=valid)

    ce_part = _weighted((weights.mu_label, lambda: _ce(student, hard_labels, valid)),
                        (weights.mu_teacher, lambda: _ce(student, teacher, valid)))
    jml_part = _weighted(
        (weights.nu_label, lambda: supervised_term(student, hard_labels, loss_cfg, valid, preview)),
        (weights.nu_teacher, teacher_region))
    return _weighted((weights.lambda_ce, lambda: ce_part), (weights.lambda_jml, lambda: jml_part))


def ssl_objective(student_sup, labels_sup, student_unsup, teacher_targets,
                  weights: CompositionWeights, loss_cfg: LossConfig, valid_sup=None,
                  preview_sup=None, preview_unsup=None, targets_preview=None):
    """Semi-supervised objective over labelled and unlabelled views.

    ``lambda_ce * (eta_S CE_S + eta_U CE_U) + lambda_jml * (theta_S JML_S + theta_U JML_U)``
    where the unlabelled terms compare against detached teacher targets.
    """
    targets = _numeric(teacher_targets, targets_preview, "targets_preview")
    detached = ad.detach(teacher_targets)
    valid_sup = _valid_mask(valid_sup)

    def unsup_region():
        policy = loss_cfg.policy(soft_labels=True)
        active = _active(targets, _student_preview(student_unsup, preview_unsup), policy, None)
        return region_loss(student_unsup, detached, loss_cfg, active=active)

    ce_part = _weighted((weights.eta_sup, lambda: _ce(student_sup, labels_sup, valid_sup)),
                        (weights.eta_unsup, lambda: _ce(student_unsup, detached, None)))
    jml_part = _weighted(
        (weights.theta_sup, lambda: supervised_term(student_sup, labels_sup, loss_cfg,
                                                    valid_sup, preview_sup)),
        (weights.theta_unsup, unsup_region))
    return _weighted((weights.lambda_ce, lambda: ce_part), (weights.lambda_jml, lambda: jml_part))


def ema_update(teacher_params: dict, student_params: dict, decay=DEFAULT_EMA_DECAY) -> dict:
    """In place: ``teacher <- decay * teacher + (1 - decay) * student``."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    if teacher_params.keys() != student_params.keys():
        raise ValueError("teacher and student parameter names differ")
    for name, t in teacher_params.items():
        s = np.asarray(student_params[name])
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch for parameter {name!r}: {t.shape} vs {s.shape}")
        t *= decay
        t += (1.0 - decay) * s
    return teacher_params
