"""Bias-variance decompositions over split ensembles.

Three decompositions, all exactly additive (risk = bias + variance):

* squared loss on model outputs vs one-hot labels, with the unbiased
  1/(N-1) per-repetition variance averaged over repetitions; bias is
  risk minus variance, so it can sit slightly below the plug-in value
  ||y - mean prediction||^2;
* cross-entropy, where the ensemble average prediction is the normalized
  geometric mean, bias is KL(label || average) and variance is the mean
  KL(average || model);
* the two-class logistic specialization, where the geometric-mean
  normalizer Z_x of a test point satisfies Z_x <= 1 and the variance is
  -E_x log Z_x.  (Jensen applied to exp gives the <= direction, which is
  what makes the variance non-negative.)

Adversarial variants evaluate each model at its own worst-case perturbation
of the test point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import PerturbationSet, PgdConfig, pgd_attack
from .datasets import Dataset
from .models import mlp_loss_and_input_grad
from .numerics import softplus
from .training import _mlp_probs_chunked, _onehot_labels

__all__ = [
    "BVPoint",
    "PredictionTensor",
    "build_prediction_tensor",
    "bv_cross_entropy",
    "bv_logistic",
    "bv_squared",
    "save_tensor_csv",
]

PROB_FLOOR = 1e-12

ADDITIVITY_TOL = {"squared": 1e-8, "cross_entropy": 1e-8, "logistic": 1e-10}


@dataclass
class BVPoint:
    """One sweep-grid point's decomposition and error measurements."""

    sweep_param: float
    bias: float
    variance: float
    risk: float
    robust_train_error: float
    std_train_error: float
    std_test_error: float
    n_models: int
    stderr_bias: float = float("nan")
    stderr_variance: float = float("nan")
    loss_kind: str = "squared"
    per_rep: dict | None = None

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.risk)

    def validate(self) -> None:
        if self.failed:
            return
        tol = ADDITIVITY_TOL[self.loss_kind]
        gap = abs(self.risk - self.bias - self.variance)
        if gap > tol * max(1.0, abs(self.risk)):
            raise ValueError(
                f"additivity violated at {self.sweep_param}: |risk-bias-var|={gap:.3e}"
            )
        if self.variance < -1e-10:
            raise ValueError(f"negative variance {self.variance} at {self.sweep_param}")
        for name in ("robust_train_error", "std_train_error", "std_test_error"):
            v = getattr(self, name)
            if not (-1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class PredictionTensor:
    """Per-model outputs at each test point.

    ``preds`` has shape (points, K, N, C); ``labels`` is (points, C).
    ``perturbations`` holds each model's own evaluation perturbation,
    shape (points, K, N, d), when an attack was used. ``probabilistic``
    says whether rows of preds are probability vectors (softmax outputs);
    the cross-entropy decomposition requires that.
    """

    preds: np.ndarray
    labels: np.ndarray
    perturbations: np.ndarray | None = None
    probabilistic: bool = True

    def __post_init__(self):
        self.preds = np.asarray(self.preds, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.preds.ndim != 4:
            raise ValueError("preds must have shape (points, K, N, C)")
        if self.labels.shape != (self.preds.shape[0], self.preds.shape[3]):
            raise ValueError("labels must have shape (points, C)")
        if self.probabilistic and self.preds.size:
            sums = self.preds.sum(axis=-1)
            if np.max(np.abs(sums - 1.0)) > 1e-10:
                raise ValueError("probability rows must sum to 1 within 1e-10")

    @property
    def repetitions(self) -> int:
        return self.preds.shape[1]

    @property
    def splits(self) -> int:
        return self.preds.shape[2]

    def repetition(self, k: int) -> "PredictionTensor":
        """The single-repetition slice, used for seed-replication errors."""
        pert = None if self.perturbations is None else self.perturbations[:, k:k + 1]
        return PredictionTensor(self.preds[:, k:k + 1], self.labels, pert, self.probabilistic)


def bv_squared(preds: PredictionTensor):
    """(bias, variance, risk) for the squared loss.

    Per point and repetition the variance across the N split models uses the
    unbiased 1/(N-1) normalizer; the estimate averages over points and
    repetitions.  Risk is the mean squared distance to the label over all
    models; bias = risk - variance.
    """
    P, K, N, C = preds.preds.shape
    if N < 2:
        raise ValueError("variance estimation needs at least 2 splits")
    f = preds.preds
    mean_f = f.mean(axis=2, keepdims=True)
    per_xk = ((f - mean_f) ** 2).sum(axis=3).sum(axis=2) / (N - 1)  # (P, K)
    variance = float(per_xk.mean())
    diff = f - preds.labels[:, None, None, :]
    risk = float((diff**2).sum(axis=3).mean())
    return risk - variance, variance, risk


def _floored(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_FLOOR, None)
    p = p / p.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("non-finite probabilities after flooring")
    return p


def bv_cross_entropy(preds: PredictionTensor):
    """(bias, variance, risk) for cross-entropy.

    The average prediction is proportional to exp(mean over models of log f),
    renormalized.  bias = mean KL(y || avg); variance = mean over models of
    KL(avg || f); risk = bias + variance = the mean cross-entropy of the
    floored model outputs.
    """
    if not preds.probabilistic:
        raise ValueError("cross-entropy decomposition needs probability outputs")
    P, K, N, C = preds.preds.shape
    f = _floored(preds.preds.reshape(P, K * N, C))
    log_f = np.log(f)
    mean_log = log_f.mean(axis=1)  # (P, C)
    log_norm = np.log(np.exp(mean_log).sum(axis=1, keepdims=True))
    log_avg = mean_log - log_norm  # log of normalized geometric mean
    y = preds.labels
    ylogy = np.where(y > 0, y * np.log(np.clip(y, PROB_FLOOR, None)), 0.0).sum(axis=1)
    bias = float(np.mean(ylogy - (y * log_avg).sum(axis=1)))
    avg = np.exp(log_avg)
    kl_avg_f = (avg[:, None, :] * (log_avg[:, None, :] - log_f)).sum(axis=2)  # (P, M)
    variance = float(kl_avg_f.mean())
    risk = float(np.mean(-(y[:, None, :] * log_f).sum(axis=2)))
    return bias, variance, risk


def bv_logistic(thetas, test_set: Dataset, epsilon: float = 0.0):
    """(bias, variance, risk) for the binary logistic decomposition.

    ``thetas`` is the (models, d) stack of trained parameter vectors.  With
    epsilon > 0 every score is shifted to its closed-form l2 worst case for
    the true label, giving the adversarial-evaluation variant.

    Per test point, Z_x = exp(-mean loss of class +1) + exp(-mean loss of
    class -1), computed through log-sum-exp; variance = -E_x log Z_x, risk is
    the ensemble-mean test loss, bias = risk - variance.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    X = test_set.X
    y = test_set.y
    if y.ndim != 1:
        raise ValueError("logistic decomposition needs signed labels")
    scores = X @ thetas.T  # (P, M)
    if epsilon > 0.0:
        scores = scores - epsilon * y[:, None] * np.linalg.norm(thetas, axis=1)[None, :]
    loss_pos = softplus(scores)  # loss if the true class were +1
    loss_neg = softplus(-scores)
    mean_pos = loss_pos.mean(axis=1)
    mean_neg = loss_neg.mean(axis=1)
    # log Z via the shifted (log-sum-exp) form
    stacked = np.stack([-mean_pos, -mean_neg])
    top = stacked.max(axis=0)
    log_z = top + np.log(np.exp(stacked - top).sum(axis=0))
    variance = float(-log_z.mean())
    point_risk = np.where(y > 0, mean_pos, mean_neg)
    risk = float(point_risk.mean())
    bias = float((log_z + point_risk).mean())
    return bias, variance, risk


def logistic_z_values(thetas, X: np.ndarray) -> np.ndarray:
    """Z_x for each row of X under the ensemble; always <= 1 (+fp slack)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    scores = np.asarray(X) @ thetas.T
    mean_pos = softplus(scores).mean(axis=1)
    mean_neg = softplus(-scores).mean(axis=1)
    return np.exp(-mean_pos) + np.exp(-mean_neg)


def build_prediction_tensor(
    ensemble,
    test_set: Dataset,
    attack: tuple[PerturbationSet, PgdConfig] | None = None,
    loss_kind: str = "cross_entropy",
    keep_perturbations: bool = True,
    chunk: int = 8192,
) -> PredictionTensor:
    """Evaluate a (K, N) grid of models at the test points.

    Without an attack every model is evaluated at the clean points.  With
    one, each model independently gets its own worst-case perturbation from
    the PGD attack (maximizing ``loss_kind``) and is evaluated there.
    """
    K = len(ensemble)
    N = len(ensemble[0])
    X = test_set.X
    Y = _onehot_labels(test_set.y)
    P, d = X.shape
    C = Y.shape[1]
    preds = np.empty((P, K, N, C))
    perts = None
    pset = pgd_cfg = None
    if attack is not None:
        pset, pgd_cfg = attack
        if pset.epsilon > 0.0 and keep_perturbations:
            perts = np.zeros((P, K, N, d))
    for k in range(K):
        for j in range(N):
            model = ensemble[k][j]
            x_eval = X
            if attack is not None and pset.epsilon > 0.0:
                callback = mlp_loss_and_input_grad(model, loss_kind)
                delta = pgd_attack(callback, X, Y, pset, pgd_cfg, domain_box=test_set.domain_box)
                x_eval = X + delta
                if perts is not None:
                    perts[:, k, j] = delta
            preds[:, k, j] = _mlp_probs_chunked(
                model.weights, model.biases, model.activation, x_eval, chunk=chunk
            )
    return PredictionTensor(preds, Y, perts, probabilistic=True)


def save_tensor_csv(tensor: PredictionTensor, path) -> None:
    """Flat (point, k, j) rows with label and output columns, 17 significant
    digits, for offline re-analysis."""
    P, K, N, C = tensor.preds.shape
    cols = ["point", "k", "j"] + [f"y{c}" for c in range(C)] + [f"f{c}" for c in range(C)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for p in range(P):
            lab = ",".join(f"{v:.17g}" for v in tensor.labels[p])
            for k in range(K):
                for j in range(N):
                    out = ",".join(f"{v:.17g}" for v in tensor.preds[p, k, j])
                    fh.write(f"{p},{k},{j},{lab},{out}\n")
