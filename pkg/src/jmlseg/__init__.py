"""Jaccard metric losses, soft-label training objectives and segmentation metrics."""
from .autodiff import ExprGraph, evaluate, finite_difference_check, gradient
from .compositions import (CompositionWeights, ema_update, kd_objective, ls_objective,
                           ssl_objective)
from .data import DatasetSpec, generate_synthetic
from .estimator import JaccardSegmenter
from .experiment import ExperimentConfig, train
from .labels import BoundaryLabelSmoother, boundary_mask, one_hot, smooth_labels
from .losses import (ActiveClassPolicy, LossConfig, aggregate_classes, cross_entropy,
                     iou_loss_hard, jml, lovasz_softmax, select_active_classes, sjl,
                     tversky_metric)
from .metrics import ConfusionAccumulator, calibration_error, miou
from .theory import check_metric_axioms, convex_closure, sjl_gradient_sign

__version__ = "0.1.0"
