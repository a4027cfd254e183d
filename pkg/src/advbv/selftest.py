"""Fast invariant battery behind the `advbv selftest` command.

Each check re-verifies one of the package's structural guarantees on fresh
random instances in a few seconds total; the CLI prints one PASS/FAIL line
per check.
"""

from __future__ import annotations

import numpy as np

from .attacks import PerturbationSet, PgdConfig, exact_l2_margin_loss, pgd_attack, project
from .curves import spearman
from .datasets import make_split_plan, sample_box, sample_mog, sample_planted
from .estimators import (
    PredictionTensor,
    bv_cross_entropy,
    bv_logistic,
    bv_squared,
    logistic_z_values,
)
from .models import LinearModel, adv_logistic_grad, init_mlp, mlp_backward
from .numerics import Rng, log_sum_exp, softmax, softplus

__all__ = ["run_selftest"]


def _check_rng():
    a = Rng(11).normal((4, 5))
    b = Rng(11).normal((4, 5))
    assert np.array_equal(a, b), "same seed must reproduce draws"
    c = Rng(11).child("x").normal((4, 5))
    assert not np.array_equal(a, c), "child stream must differ"


def _check_log_sum_exp():
    assert abs(log_sum_exp([0.0, 0.0]) - np.log(2.0)) < 1e-14
    assert abs(log_sum_exp([1000.0, 1000.0]) - (1000.0 + np.log(2.0))) < 1e-10
    rng = Rng(12)
    a = rng.child("a").uniform((1000, 4), -20, 20)
    b = rng.child("b").uniform((1000, 4), -20, 20)
    lhs = np.array([log_sum_exp(0.5 * x + 0.5 * y) for x, y in zip(a, b)])
    rhs = np.array([0.5 * log_sum_exp(x) + 0.5 * log_sum_exp(y) for x, y in zip(a, b)])
    assert np.all(lhs <= rhs + 1e-12), "log-sum-exp convexity violated"


def _check_softmax_shift():
    rng = Rng(13)
    z = rng.uniform((200, 7), -30, 30)
    c = rng.uniform((200, 1), -50, 50)
    assert np.max(np.abs(softmax(z + c) - softmax(z))) < 1e-12


def _check_samplers():
    box = sample_box(500, 2, 0.25, seed=14)
    assert np.all(np.abs(box.X[:, 0] - box.X[:, 1]) >= 0.25 / np.sqrt(2.0))
    boxd = sample_box(500, 10, 0.25, seed=15)
    proj = boxd.X.sum(axis=1) / np.sqrt(10.0)
    assert np.all(np.abs(proj) >= 0.25)
    mog = sample_mog(2000, 20, 0.7, seed=16)
    assert abs(np.mean(mog.y)) < 0.1
    planted = sample_planted(2000, 20, seed=17)
    assert abs(np.mean(planted.y * planted.X[:, 0]) - 0.9) < 0.05


def _check_split_plan():
    rng = np.random.default_rng(18)
    for _ in range(20):
        n = int(rng.integers(4, 200))
        N = int(rng.integers(2, min(5, n) + 1))
        K = int(rng.integers(1, 6))
        plan = make_split_plan(n, K, N, seed=int(rng.integers(1 << 30)))
        for k in range(K):
            union = np.concatenate([plan.part(k, j) for j in range(N)])
            assert sorted(union.tolist()) == list(range(n))
            sizes = [len(plan.part(k, j)) for j in range(N)]
            assert max(sizes) - min(sizes) <= 1


def _check_projection():
    rng = Rng(19)
    for norm in ("l2", "linf"):
        pset = PerturbationSet(norm, 0.7)
        deltas = rng.child(norm).normal((500, 6))
        proj = project(deltas, pset)
        if norm == "l2":
            assert np.all(np.linalg.norm(proj, axis=1) <= 0.7 + 1e-12)
        else:
            assert np.all(np.abs(proj) <= 0.7 + 1e-12)


def _check_pgd_linear():
    rng = Rng(20)
    theta = rng.child("theta").normal(8)
    X = rng.child("x").normal((40, 8))
    y = rng.child("y").signs(40)
    model = LinearModel(theta)

    def callback(x_adv, yy):
        margins = yy * (x_adv @ model.theta)
        w = -1.0 / (1.0 + np.exp(margins))  # d softplus / d margin
        grads = (w * yy)[:, None] * model.theta[None, :]
        return softplus(margins), grads

    pset = PerturbationSet("l2", 0.5)
    cfg = PgdConfig(steps=100, step_size=0.05, clip_to_domain=False)
    delta = pgd_attack(callback, X, y, pset, cfg)
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.5 + 1e-12)
    attacked = float(np.mean(softplus(y * ((X + delta) @ theta))))
    clean = float(np.mean(softplus(y * (X @ theta))))
    exact = exact_l2_margin_loss(theta, X, y, 0.5)
    assert attacked >= clean
    assert abs(attacked - exact) < 1e-3, f"pgd {attacked} vs exact {exact}"


def _check_gradients():
    rng = Rng(21)
    X = rng.child("x").normal((12, 4))
    y = rng.child("y").signs(12)
    theta = rng.child("t").normal(4)
    bundle = adv_logistic_grad(LinearModel(theta), X, y, 0.3)
    h = 1e-5
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        up = exact_l2_margin_loss(theta + e, X, y, 0.3)
        dn = exact_l2_margin_loss(theta - e, X, y, 0.3)
        fd = (up - dn) / (2 * h)
        assert abs(fd - bundle.theta_grad[i]) <= 1e-4 * max(abs(fd), 1e-4)

    model = init_mlp([3, 6, 2], "tanh", rng.child("net"))
    Xb = rng.child("xb").normal((5, 3))
    Yb = np.zeros((5, 2))
    Yb[np.arange(5), rng.child("cls").bernoulli(0.5, 5).astype(int)] = 1.0
    bundle = mlp_backward(model, Xb, Yb, "cross_entropy")
    W0 = model.weights[0]
    for idx in [(0, 0), (2, 3)]:
        orig = W0[idx]
        W0[idx] = orig + 1e-5
        up = mlp_backward(model, Xb, Yb, "cross_entropy").loss
        W0[idx] = orig - 1e-5
        dn = mlp_backward(model, Xb, Yb, "cross_entropy").loss
        W0[idx] = orig
        fd = (up - dn) / 2e-5
        assert abs(fd - bundle.weight_grads[0][idx]) <= 1e-4 * max(abs(fd), 1e-4)


def _check_additivity():
    rng = Rng(22)
    P, K, N, C = 50, 6, 2, 3
    raw = rng.child("p").uniform((P, K, N, C), 0.05, 1.0)
    preds = raw / raw.sum(axis=-1, keepdims=True)
    labels = np.zeros((P, C))
    labels[np.arange(P), (rng.child("y").uniform(P) * C).astype(int)] = 1.0
    tensor = PredictionTensor(preds, labels)
    for fn, tol in ((bv_squared, 1e-8), (bv_cross_entropy, 1e-8)):
        bias, var, risk = fn(tensor)
        assert abs(risk - bias - var) <= tol * max(1.0, risk)
        assert var >= -1e-10
    thetas = rng.child("th").normal((10, 6))
    from .datasets import Dataset

    test = Dataset(rng.child("tx").normal((80, 6)), rng.child("ty").signs(80))
    bias, var, risk = bv_logistic(thetas, test)
    assert abs(risk - bias - var) <= 1e-10 * max(1.0, risk)
    assert var >= 0.0


def _check_logistic_z_bound():
    rng = Rng(23)
    for trial in range(50):
        thetas = rng.child("t", trial).normal((4, 5)) * rng.child("s", trial).uniform((), 0.1, 30)
        X = rng.child("x", trial).normal((20, 5))
        z = logistic_z_values(thetas, X)
        assert np.all(z <= 1.0 + 1e-12), f"Z bound violated: {z.max()}"


def _check_monotone_diag():
    assert spearman([1, 2, 3, 4], [0.1, 0.2, 0.25, 0.9]) == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0


CHECKS = [
    ("rng-reproducibility", _check_rng),
    ("log-sum-exp", _check_log_sum_exp),
    ("softmax-shift-invariance", _check_softmax_shift),
    ("sampler-margins", _check_samplers),
    ("split-plan-partition", _check_split_plan),
    ("projection-feasibility", _check_projection),
    ("pgd-vs-exact-inner-max", _check_pgd_linear),
    ("gradient-oracles", _check_gradients),
    ("decomposition-additivity", _check_additivity),
    ("logistic-z-bound", _check_logistic_z_bound),
    ("rank-correlation", _check_monotone_diag),
]


def run_selftest(print_fn=print) -> int:
    """Run every invariant check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failures += 1
            print_fn(f"FAIL {name}: {exc}")
        else:
            print_fn(f"PASS {name}")
    return failures
