"""Adversarial-training bias-variance decomposition toolkit.

Trains small models (linear logistic, small MLPs) on synthetic
distributions under standard, adversarial, randomized-smoothing, and
fixed-Gaussian-noise regimes, and measures bias, variance, and risk across
perturbation-radius sweeps with split-ensemble estimators.
"""

__version__ = "0.1.0"

from .attacks import PerturbationSet, PgdConfig, exact_l2_margin_loss, pgd_attack, project
from .datasets import (
    Dataset,
    SplitPlan,
    add_fixed_gaussian_noise,
    make_split_plan,
    sample_box,
    sample_mog,
    sample_planted,
)
from .estimators import (
    BVPoint,
    PredictionTensor,
    build_prediction_tensor,
    bv_cross_entropy,
    bv_logistic,
    bv_squared,
)
from .models import LinearModel, MlpModel, adv_logistic_grad, linear_forward, mlp_backward, mlp_forward
from .numerics import Rng, log_sum_exp, softmax, softplus
from .training import (
    ModelSpec,
    TrainConfig,
    TrainedModel,
    interpolation_threshold,
    robust_train_error,
    train,
    train_ensemble,
)

__all__ = [
    "BVPoint",
    "Dataset",
    "LinearModel",
    "MlpModel",
    "ModelSpec",
    "PerturbationSet",
    "PgdConfig",
    "PredictionTensor",
    "Rng",
    "SplitPlan",
    "TrainConfig",
    "TrainedModel",
    "add_fixed_gaussian_noise",
    "adv_logistic_grad",
    "build_prediction_tensor",
    "bv_cross_entropy",
    "bv_logistic",
    "bv_squared",
    "exact_l2_margin_loss",
    "interpolation_threshold",
    "linear_forward",
    "log_sum_exp",
    "make_split_plan",
    "mlp_backward",
    "mlp_forward",
    "pgd_attack",
    "project",
    "robust_train_error",
    "sample_box",
    "sample_mog",
    "sample_planted",
    "softmax",
    "softplus",
    "train",
    "train_ensemble",
]
