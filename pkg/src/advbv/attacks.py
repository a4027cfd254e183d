"""Norm-ball perturbation sets, projected gradient ascent on the input, the
closed-form worst case for linear scores over the l2 ball, and per-minibatch
Gaussian smoothing noise.

``pgd_attack`` is batch-shaped: ``x`` may be a single point (d,), a batch
(B, d), or a stacked ensemble batch (E, B, d); the callback must return
per-sample losses for the matching leading shape. The attack keeps the
best (highest-loss) feasible iterate per sample, seeded with delta = 0, so
the returned perturbation never decreases the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, softplus

__all__ = [
    "AttackError",
    "PerturbationSet",
    "PgdConfig",
    "exact_l2_margin_loss",
    "pgd_attack",
    "project",
    "smoothing_noise",
]

L2 = "l2"
LINF = "linf"


class AttackError(RuntimeError):
    def __init__(self, message: str, iterate: int):
        super().__init__(f"{message} (iterate {iterate})")
        self.iterate = iterate


@dataclass(frozen=True)
class PerturbationSet:
    """The feasible set {delta : ||delta||_norm <= epsilon}."""

    norm: str
    epsilon: float

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class PgdConfig:
    steps: int
    step_size: float
    random_start: bool = False
    clip_to_domain: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def project(delta: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """Euclidean projection onto the ball; identity on already-feasible points."""
    delta = np.asarray(delta, dtype=np.float64)
    if pset.norm == LINF:
        return np.clip(delta, -pset.epsilon, pset.epsilon)
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    scale = np.where(norms > pset.epsilon, pset.epsilon / np.maximum(norms, 1e-300), 1.0)
    return delta * scale


def _ascent_step(grad: np.ndarray, pset: PerturbationSet, step_size: float) -> np.ndarray:
    if pset.norm == LINF:
        return step_size * np.sign(grad)
    norms = np.linalg.norm(grad, axis=-1, keepdims=True)
    return step_size * np.where(norms > 0.0, grad / np.maximum(norms, 1e-300), 0.0)


def _random_start(shape, pset: PerturbationSet, rng: Rng) -> np.ndarray:
    if pset.norm == LINF:
        return rng.uniform(shape, -pset.epsilon, pset.epsilon)
    g = rng.normal(shape)
    g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)
    radius = pset.epsilon * rng.uniform(shape[:-1] + (1,)) ** (1.0 / shape[-1])
    return g * radius


def pgd_attack(
    loss_and_grad,
    x: np.ndarray,
    y,
    pset: PerturbationSet,
    cfg: PgdConfig,
    domain_box: tuple[float, float] | None = None,
    rng: Rng | None = None,
) -> np.ndarray:
    """Maximize the per-sample loss over the perturbation ball.

    ``loss_and_grad(x_adv, y) -> (losses, grads)`` where ``losses`` has the
    sample shape ``x.shape[:-1]`` and ``grads`` matches ``x``. Returns the
    best feasible delta per sample; with clip_to_domain and a domain box,
    x + delta also stays inside the box.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]

    def clipped(delta):
        delta = project(delta, pset)
        if cfg.clip_to_domain and domain_box is not None:
            delta = np.clip(x + delta, domain_box[0], domain_box[1]) - x
        return delta

    zero = clipped(np.zeros_like(x))
    if cfg.random_start:
        # the zero iterate stays a candidate so the attack can never hurt
        if rng is None:
            raise ValueError("random_start needs an rng")
        best_loss, _ = loss_and_grad(x + zero, y)
        best_loss = np.asarray(best_loss, dtype=np.float64)
        best_delta = zero
        delta = clipped(_random_start(x.shape, pset, rng))
    else:
        best_loss = None
        best_delta = zero
        delta = zero

    for t in range(cfg.steps + 1):
        loss, grad = loss_and_grad(x + delta, y)
        loss = np.asarray(loss, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise AttackError("non-finite input gradient", iterate=t)
        if best_loss is None:
            best_loss = loss
        else:
            better = loss > best_loss
            if better.any():
                best_loss = np.where(better, loss, best_loss)
                best_delta = np.where(better[..., None], delta, best_delta)
        if t == cfg.steps:
            break
        delta = clipped(delta + _ascent_step(np.asarray(grad), pset, cfg.step_size))

    return best_delta[0] if single else best_delta


def exact_l2_margin_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """Mean logistic loss at the exact worst case over the l2 ball:
    (1/n) sum log(1 + exp(-(y_i <x_i, theta> - epsilon ||theta||_2)))."""
    theta = np.asarray(theta, dtype=np.float64)
    margins = np.asarray(y) * (np.asarray(X) @ theta) - epsilon * np.linalg.norm(theta)
    return float(np.mean(softplus(margins)))


def smoothing_noise(
    batch: np.ndarray,
    sigma: float,
    rng: Rng,
    domain_box: tuple[float, float] | None = None,
) -> np.ndarray:
    """Fresh iid N(0, sigma^2) added per element per call, clamped to the
    domain box when one is given."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = np.asarray(batch, dtype=np.float64) + sigma * rng.normal(np.shape(batch))
    if domain_box is not None:
        out = np.clip(out, domain_box[0], domain_box[1])
    return out
