import numpy as np
import pytest

from advbv.attacks import (
    AttackError,
    PerturbationSet,
    PgdConfig,
    exact_l2_margin_loss,
    pgd_attack,
    project,
    smoothing_noise,
)
from advbv.models import init_mlp, mlp_loss_and_input_grad
from advbv.numerics import Rng, softplus

LOG2 = 0.6931471805599453
LOSS_AT_HALF_MARGIN = 0.4740769841801067  # log(1+e^-0.5), 50-digit decimal oracle


def linear_logistic_callback(theta):
    """Per-sample logistic loss and input gradient for a linear score."""

    def callback(x_adv, y):
        margins = y * (x_adv @ theta)
        w = -1.0 / (1.0 + np.exp(margins))  # dl/dmargin
        grads = (w * y)[:, None] * theta[None, :]
        return softplus(margins), grads

    return callback


# --- perturbation sets and projection ---------------------------------------


def test_perturbation_set_validation():
    with pytest.raises(ValueError):
        PerturbationSet("l1", 0.5)
    with pytest.raises(ValueError):
        PerturbationSet("l2", -0.1)


def test_project_identity_inside_ball():
    pset = PerturbationSet("l2", 2.0)
    delta = np.array([0.3, -0.4, 0.1])
    assert np.array_equal(project(delta, pset), delta)
    pset_inf = PerturbationSet("linf", 0.5)
    assert np.array_equal(project(delta, pset_inf), delta)


def test_project_linf_clamp():
    pset = PerturbationSet("linf", 0.1)
    out = project(np.array([0.3, -0.05]), pset)
    assert np.allclose(out, [0.1, -0.05], atol=0)


def test_project_l2_rescale():
    pset = PerturbationSet("l2", 1.0)
    out = project(np.array([3.0, 4.0]), pset)
    assert np.allclose(out, [0.6, 0.8], atol=1e-15)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_project_feasibility_random():
    rng = Rng(1)
    for norm, eps in (("l2", 0.7), ("linf", 0.3), ("l2", 0.0), ("linf", 0.0)):
        pset = PerturbationSet(norm, eps)
        deltas = rng.child(norm, str(eps)).normal((200, 5)) * 3.0
        out = project(deltas, pset)
        if norm == "l2":
            assert np.all(np.linalg.norm(out, axis=1) <= eps + 1e-12)
        else:
            assert np.all(np.abs(out) <= eps + 1e-12)


# --- PGD --------------------------------------------------------------------


def test_pgd_zero_radius_returns_zero():
    rng = Rng(2)
    theta = rng.child("t").normal(4)
    X = rng.child("x").normal((10, 4))
    y = rng.child("y").signs(10)
    delta = pgd_attack(
        linear_logistic_callback(theta), X, y,
        PerturbationSet("l2", 0.0), PgdConfig(steps=5, step_size=0.1),
    )
    assert np.array_equal(delta, np.zeros_like(X))


def test_pgd_linf_reaches_analytic_maximizer():
    # linear score: the cube maximizer is -eps * y * sign(theta)
    rng = Rng(3)
    theta = rng.child("t").normal(6)
    theta[np.abs(theta) < 0.2] += 0.5  # keep coordinates clearly nonzero
    X = rng.child("x").normal((30, 6))
    y = rng.child("y").signs(30)
    eps = 0.25
    delta = pgd_attack(
        linear_logistic_callback(theta), X, y,
        PerturbationSet("linf", eps),
        PgdConfig(steps=10, step_size=0.25 * eps, clip_to_domain=False),
    )
    expected = -eps * y[:, None] * np.sign(theta)[None, :]
    assert np.allclose(delta, expected, atol=1e-12)


def test_pgd_best_iterate_never_hurts():
    rng = Rng(4)
    model = init_mlp([5, 16, 16, 2], "relu", rng.child("net"))
    X = rng.child("x").normal((100, 5))
    labels = rng.child("y").bernoulli(0.5, 100).astype(int)
    Y = np.zeros((100, 2))
    Y[np.arange(100), labels] = 1.0
    callback = mlp_loss_and_input_grad(model, "cross_entropy")
    pset = PerturbationSet("linf", 0.1)
    delta = pgd_attack(callback, X, Y, pset, PgdConfig(steps=10, step_size=0.025))
    clean, _ = callback(X, Y)
    attacked, _ = callback(X + delta, Y)
    assert np.all(attacked >= clean)
    assert np.all(np.abs(delta) <= 0.1 + 1e-12)


def test_pgd_feasibility_with_domain_clip():
    rng = Rng(5)
    model = init_mlp([3, 8, 2], "tanh", rng.child("net"))
    X = rng.child("x").uniform((50, 3), -1.0, 1.0)
    Y = np.tile([1.0, 0.0], (50, 1))
    callback = mlp_loss_and_input_grad(model, "squared")
    delta = pgd_attack(
        callback, X, Y, PerturbationSet("linf", 0.4),
        PgdConfig(steps=7, step_size=0.16), domain_box=(-1.0, 1.0),
    )
    assert np.all(np.abs(delta) <= 0.4 + 1e-12)
    assert np.all(np.abs(X + delta) <= 1.0 + 1e-12)


def test_pgd_single_point_shape():
    rng = Rng(6)
    theta = rng.child("t").normal(4)
    x = rng.child("x").normal(4)
    delta = pgd_attack(
        linear_logistic_callback(theta), x, np.array([1.0]),
        PerturbationSet("l2", 0.2), PgdConfig(steps=5, step_size=0.05),
    )
    assert delta.shape == (4,)
    assert np.linalg.norm(delta) <= 0.2 + 1e-12


def test_pgd_random_start_stays_feasible_and_never_hurts():
    rng = Rng(7)
    theta = rng.child("t").normal(5)
    X = rng.child("x").normal((40, 5))
    y = rng.child("y").signs(40)
    cb = linear_logistic_callback(theta)
    delta = pgd_attack(
        cb, X, y, PerturbationSet("l2", 0.3),
        PgdConfig(steps=8, step_size=0.06, random_start=True),
        rng=rng.child("start"),
    )
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.3 + 1e-12)
    assert np.all(cb(X + delta, y)[0] >= cb(X, y)[0])


def test_pgd_requires_rng_for_random_start():
    with pytest.raises(ValueError):
        pgd_attack(
            lambda x, y: (np.zeros(x.shape[0]), np.zeros_like(x)),
            np.zeros((2, 2)), np.ones(2),
            PerturbationSet("l2", 0.1),
            PgdConfig(steps=1, step_size=0.1, random_start=True),
        )


def test_pgd_attack_error_on_nonfinite_gradient():
    def bad_callback(x_adv, y):
        return np.zeros(x_adv.shape[0]), np.full_like(x_adv, np.nan)

    with pytest.raises(AttackError) as err:
        pgd_attack(
            bad_callback, np.zeros((3, 2)), np.ones(3),
            PerturbationSet("linf", 0.1), PgdConfig(steps=3, step_size=0.05),
        )
    assert err.value.iterate == 0


# --- exact l2 inner maximum --------------------------------------------------


def test_exact_margin_loss_zero_theta():
    X = Rng(8).normal((20, 3))
    y = Rng(8).child("y").signs(20)
    for eps in (0.0, 0.5, 10.0):
        assert exact_l2_margin_loss(np.zeros(3), X, y, eps) == pytest.approx(LOG2, abs=1e-15)


def test_exact_margin_loss_reduces_to_standard_at_zero_radius():
    rng = Rng(9)
    theta = rng.child("t").normal(4)
    X = rng.child("x").normal((25, 4))
    y = rng.child("y").signs(25)
    std = float(np.mean(softplus(y * (X @ theta))))
    assert exact_l2_margin_loss(theta, X, y, 0.0) == pytest.approx(std, abs=1e-15)


def test_exact_margin_loss_single_sample_value():
    loss = exact_l2_margin_loss(np.array([1.0, 0.0]), np.array([[1.0, 0.0]]),
                                np.array([1.0]), 0.5)
    assert loss == pytest.approx(LOSS_AT_HALF_MARGIN, abs=1e-15)


def grid_max_logistic_loss(theta, X, y, eps, n_angles=4096, n_radii=48):
    """Independent oracle: maximize the logistic loss over a dense polar grid
    of the 2-D l2 ball, per sample."""
    ang = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    radii = np.concatenate([np.linspace(0.0, eps, n_radii), [eps]])
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    deltas = radii[:, None, None] * dirs[None, :, :]       # (R, A, 2)
    shifts = deltas @ theta                                  # (R, A)
    margins = y[:, None, None] * ((X @ theta)[:, None, None] + shifts[None])
    per_sample_max = softplus(margins).max(axis=(1, 2))
    return float(per_sample_max.mean())


def test_exact_margin_loss_matches_grid_oracle():
    rng = Rng(10)
    for trial in range(20):
        theta = rng.child("t", trial).normal(2)
        X = rng.child("x", trial).normal((5, 2))
        y = rng.child("y", trial).signs(5)
        eps = float(rng.child("e", trial).uniform((), 0.1, 1.0))
        exact = exact_l2_margin_loss(theta, X, y, eps)
        oracle = grid_max_logistic_loss(theta, X, y, eps)
        assert exact == pytest.approx(oracle, abs=1e-4)
        assert exact >= oracle - 1e-12  # grid can only undershoot the true max


def test_exact_margin_dominates_standard_loss():
    rng = Rng(11)
    for trial in range(20):
        theta = rng.child("t", trial).normal(5)
        X = rng.child("x", trial).normal((30, 5))
        y = rng.child("y", trial).signs(30)
        std = exact_l2_margin_loss(theta, X, y, 0.0)
        adv = exact_l2_margin_loss(theta, X, y, 0.4)
        assert adv >= std


def test_pgd_converges_to_exact_inner_max():
    rng = Rng(12)
    for trial in range(5):
        theta = rng.child("t", trial).normal(6)
        X = rng.child("x", trial).normal((20, 6))
        y = rng.child("y", trial).signs(20)
        eps = 0.5
        delta = pgd_attack(
            linear_logistic_callback(theta), X, y,
            PerturbationSet("l2", eps),
            PgdConfig(steps=100, step_size=eps / 10.0, clip_to_domain=False),
        )
        attacked = float(np.mean(softplus(y * ((X + delta) @ theta))))
        exact = exact_l2_margin_loss(theta, X, y, eps)
        assert attacked <= exact + 1e-12
        assert exact - attacked < 1e-3


# --- smoothing noise ----------------------------------------------------------


def test_smoothing_noise_zero_sigma_identity():
    batch = Rng(13).normal((10, 3))
    out = smoothing_noise(batch, 0.0, Rng(14))
    assert np.array_equal(out, batch)


def test_smoothing_noise_fresh_each_call():
    batch = np.zeros((5, 4))
    rng = Rng(15)
    a = smoothing_noise(batch, 0.5, rng)
    b = smoothing_noise(batch, 0.5, rng)
    assert not np.array_equal(a, b)


def test_smoothing_noise_variance_oracle():
    batch = np.zeros((1000, 1000))
    out = smoothing_noise(batch, 0.5, Rng(16))
    assert np.var(out - batch) == pytest.approx(0.25, abs=0.002)


def test_smoothing_noise_clipped_to_domain():
    batch = np.full((200, 5), 0.9)
    out = smoothing_noise(batch, 1.0, Rng(17), domain_box=(-1.0, 1.0))
    assert out.max() <= 1.0 and out.min() >= -1.0


def test_pgd_never_hurts_trained_mlp_at_100_points():
    from advbv.datasets import sample_box, signed_to_onehot
    from advbv.training import ModelSpec, TrainConfig, train

    ds = sample_box(30, 2, 0.25, seed=90)
    spec = ModelSpec(kind="mlp", hidden=(32, 32), train_loss="cross_entropy")
    cfg = TrainConfig(mode="standard", optimizer="adam", lr=1e-3, epochs=200,
                      batch_size=32, seed=9)
    tm = train(spec, ds, cfg)
    test = sample_box(100, 2, 0.25, seed=91)
    Y = signed_to_onehot(test.y)
    callback = mlp_loss_and_input_grad(tm.model, "cross_entropy")
    delta = pgd_attack(callback, test.X, Y, PerturbationSet("linf", 0.1),
                       PgdConfig(steps=10, step_size=0.025),
                       domain_box=test.domain_box)
    clean, _ = callback(test.X, Y)
    attacked, _ = callback(test.X + delta, Y)
    assert np.all(attacked >= clean)
