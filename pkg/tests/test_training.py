import numpy as np
import pytest

from advbv.attacks import PerturbationSet, PgdConfig
from advbv.datasets import Dataset, sample_box, sample_mog
from advbv.models import LinearModel
from advbv.training import (
    ModelSpec,
    TrainConfig,
    TrainingDivergedError,
    classification_error,
    interpolation_threshold,
    robust_train_error,
    train,
    train_ensemble,
)

MLP_SPEC = ModelSpec(kind="mlp", hidden=(12, 12), activation="relu",
                     train_loss="cross_entropy")


def tiny_mlp_cfg(**kw):
    base = dict(mode="standard", optimizer="adam", lr=1e-3, epochs=30,
                batch_size=16, seed=7)
    base.update(kw)
    return TrainConfig(**base)


# --- interpolation threshold ---------------------------------------------------


def test_threshold_pinned_rule():
    assert interpolation_threshold([(0, 0.0), (2, 0.01), (4, 0.03)]) == 4


def test_threshold_none_when_always_low():
    assert interpolation_threshold([(0, 0.0), (1, 0.02), (2, 0.0)]) is None


def test_threshold_first_point():
    assert interpolation_threshold([(0.5, 0.5), (1, 0.9)]) == 0.5


def test_threshold_errors():
    with pytest.raises(ValueError):
        interpolation_threshold([])
    with pytest.raises(ValueError):
        interpolation_threshold([(2, 0.0), (1, 0.5)])


# --- linear logistic training ---------------------------------------------------


def test_linear_training_convergence_monitor():
    ds = sample_mog(40, 20, 0.7, seed=50)
    cfg = TrainConfig(mode="adversarial", optimizer="full_batch_gd",
                      pset=PerturbationSet("l2", 0.3), max_iters=10000, seed=1)
    tm = train(ModelSpec(kind="linear"), ds, cfg)
    assert tm.final_grad_norm < 1e-6 or tm.iterations == 10000
    assert 0.0 <= tm.robust_train_error <= 1.0
    assert np.all(np.isfinite(tm.loss_trace))
    assert np.all(np.diff(tm.loss_trace) <= 1e-12)  # line search descends


def test_linear_training_deterministic():
    ds = sample_mog(30, 10, 0.7, seed=51)
    cfg = TrainConfig(mode="adversarial", optimizer="full_batch_gd",
                      pset=PerturbationSet("l2", 0.2), max_iters=500, seed=3)
    a = train(ModelSpec(kind="linear"), ds, cfg)
    b = train(ModelSpec(kind="linear"), ds, cfg)
    assert np.array_equal(a.model.theta, b.model.theta)


def test_linear_nonseparable_converges_before_cap():
    # epsilon past the margin but below the kink regime gives an interior,
    # smooth minimizer the gradient criterion can certify
    ds = sample_mog(30, 5, 0.7, seed=52)
    cfg = TrainConfig(mode="adversarial", optimizer="full_batch_gd",
                      pset=PerturbationSet("l2", 1.2), max_iters=10000, seed=3)
    tm = train(ModelSpec(kind="linear"), ds, cfg)
    assert tm.iterations < 10000
    assert tm.final_grad_norm <= 1e-8


def test_linear_validation_errors():
    ds = sample_mog(10, 4, 0.5, seed=53)
    with pytest.raises(ValueError):
        train(ModelSpec(kind="linear"), ds,
              TrainConfig(mode="adversarial", optimizer="full_batch_gd", pset=None))
    with pytest.raises(ValueError):
        train(ModelSpec(kind="linear"), ds,
              TrainConfig(mode="standard", optimizer="adam"))
    with pytest.raises(ValueError):
        train(ModelSpec(kind="linear"), ds,
              TrainConfig(mode="adversarial", optimizer="full_batch_gd",
                          pset=PerturbationSet("linf", 0.1)))
    with pytest.raises(ValueError):
        train(ModelSpec(kind="linear"), ds,
              TrainConfig(mode="smoothing", optimizer="full_batch_gd", sigma=0.5))


# --- MLP training ----------------------------------------------------------------


def test_mlp_adversarial_zero_radius_equals_standard():
    ds = sample_box(16, 2, 0.25, seed=54)
    std = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="standard"))
    adv = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="adversarial",
                                           pset=PerturbationSet("linf", 0.0)))
    for Wa, Wb in zip(std.model.weights, adv.model.weights):
        assert np.array_equal(Wa, Wb)
    for ba, bb in zip(std.model.biases, adv.model.biases):
        assert np.array_equal(ba, bb)


def test_mlp_training_deterministic():
    ds = sample_box(16, 2, 0.25, seed=55)
    cfg = tiny_mlp_cfg(mode="adversarial", pset=PerturbationSet("linf", 0.1),
                       pgd=PgdConfig(steps=4, step_size=0.04))
    a = train(MLP_SPEC, ds, cfg)
    b = train(MLP_SPEC, ds, cfg)
    for Wa, Wb in zip(a.model.weights, b.model.weights):
        assert np.array_equal(Wa, Wb)
    assert np.array_equal(a.loss_trace, b.loss_trace)


def test_mlp_adversarial_loss_dominates_clean_loss():
    from advbv.attacks import pgd_attack
    from advbv.models import mlp_loss_and_input_grad
    from advbv.datasets import signed_to_onehot

    ds = sample_box(20, 2, 0.25, seed=56)
    pset = PerturbationSet("linf", 0.15)
    cfg = tiny_mlp_cfg(mode="adversarial", epochs=150, pset=pset,
                       pgd=PgdConfig(steps=5, step_size=0.06))
    tm = train(MLP_SPEC, ds, cfg)
    Y = signed_to_onehot(ds.y)
    callback = mlp_loss_and_input_grad(tm.model, "cross_entropy")
    delta = pgd_attack(callback, ds.X, Y, pset, PgdConfig(steps=10, step_size=0.03),
                       domain_box=ds.domain_box)
    clean_losses, _ = callback(ds.X, Y)
    adv_losses, _ = callback(ds.X + delta, Y)
    assert adv_losses.mean() >= clean_losses.mean()


def test_smoothing_fresh_noise_fixed_noise_constant():
    ds = sample_box(16, 3, 0.25, seed=57)
    smooth = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="smoothing", sigma=0.5, epochs=4))
    assert len(set(smooth.input_checksums.tolist())) == 4  # fresh noise every epoch
    fixed = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="fixed_noise", sigma=0.5, epochs=4))
    assert len(set(fixed.input_checksums.tolist())) == 1  # same inputs every epoch
    std = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="standard", epochs=4))
    assert len(set(std.input_checksums.tolist())) == 1
    assert not np.array_equal(fixed.input_checksums, std.input_checksums)


def test_fixed_noise_zero_sigma_equals_standard():
    ds = sample_box(16, 3, 0.25, seed=58)
    std = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="standard", epochs=10))
    fixed = train(MLP_SPEC, ds, tiny_mlp_cfg(mode="fixed_noise", sigma=0.0, epochs=10))
    for Wa, Wb in zip(std.model.weights, fixed.model.weights):
        assert np.array_equal(Wa, Wb)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_training_divergence_raises_with_epoch():
    ds = sample_mog(16, 3, 0.5, seed=59)
    cfg = tiny_mlp_cfg(optimizer="sgd_momentum", lr=1e4, momentum=0.9,
                       weight_decay=1.0, epochs=2000)
    with pytest.raises(TrainingDivergedError) as err:
        train(MLP_SPEC, ds, cfg)
    assert err.value.epoch >= 0


def test_train_ensemble_matches_job_count_and_requires_equal_sizes():
    ds = sample_mog(24, 4, 0.5, seed=60)
    subsets = [ds.subset(np.arange(0, 12)), ds.subset(np.arange(12, 24))]
    out = train_ensemble(MLP_SPEC, subsets, tiny_mlp_cfg(epochs=5), [1, 2])
    assert len(out) == 2
    assert not np.array_equal(out[0].model.weights[0], out[1].model.weights[0])
    with pytest.raises(ValueError):
        train_ensemble(MLP_SPEC, [ds.subset(np.arange(10)), ds.subset(np.arange(11))],
                       tiny_mlp_cfg(), [1, 2])
    with pytest.raises(ValueError):
        train_ensemble(MLP_SPEC, subsets, tiny_mlp_cfg(), [1])


def test_sgd_momentum_stage_decay_runs():
    ds = sample_box(16, 2, 0.25, seed=61)
    cfg = tiny_mlp_cfg(optimizer="sgd_momentum", lr=0.1, momentum=0.9,
                       weight_decay=5e-4, epochs=12, lr_decay_epochs=(6, 9))
    tm = train(MLP_SPEC, ds, cfg)
    assert np.all(np.isfinite(tm.loss_trace))


# --- error measurement ------------------------------------------------------------


def test_robust_error_zero_radius_equals_standard():
    ds = sample_box(30, 2, 0.25, seed=62)
    tm = train(MLP_SPEC, ds, tiny_mlp_cfg(epochs=60))
    pset = PerturbationSet("linf", 0.0)
    assert robust_train_error(tm.model, ds, pset) == classification_error(tm.model, ds)


def test_robust_error_linear_margin_rule():
    X = np.array([[2.0, 0.0], [3.0, 1.0], [-2.5, 0.5], [-4.0, -1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    ds = Dataset(X, y)
    model = LinearModel(np.array([1.0, 0.0]))
    # margins are [2, 3, 2.5, 4]; epsilon below 2 keeps the error at zero
    assert robust_train_error(model, ds, PerturbationSet("l2", 1.0)) == 0.0
    assert robust_train_error(model, ds, PerturbationSet("l2", 2.0)) == 0.25  # tie counts
    assert robust_train_error(model, ds, PerturbationSet("l2", 2.5)) == 0.5
    assert robust_train_error(model, ds, PerturbationSet("l2", 4.1)) == 1.0


def test_robust_error_mlp_needs_eval_config():
    ds = sample_box(10, 2, 0.25, seed=63)
    tm = train(MLP_SPEC, ds, tiny_mlp_cfg(epochs=5))
    with pytest.raises(ValueError):
        robust_train_error(tm.model, ds, PerturbationSet("linf", 0.1))


def test_robust_error_at_zero_theta_is_total():
    ds = sample_mog(20, 3, 0.5, seed=64)
    model = LinearModel(np.zeros(3))
    assert robust_train_error(model, ds, PerturbationSet("l2", 0.0)) == 1.0


@pytest.mark.slow
def test_box_2d_standard_training_interpolates():
    # 2-D box data is separable; full training drives the error to zero
    ds = sample_box(20, 2, 0.25, seed=65)
    spec = ModelSpec(kind="mlp", hidden=(100, 100, 100), activation="tanh",
                     train_loss="cross_entropy")
    cfg = TrainConfig(mode="adversarial", optimizer="adam", lr=1e-3, epochs=2000,
                      batch_size=128, pset=PerturbationSet("linf", 0.0), seed=2)
    tm = train(spec, ds, cfg)
    assert tm.std_train_error == 0.0
    assert tm.robust_train_error == 0.0


def test_loss_trace_csv_dump(tmp_path):
    from advbv.training import save_loss_trace

    ds = sample_mog(20, 6, 0.7, seed=66)
    cfg = TrainConfig(mode="adversarial", optimizer="full_batch_gd",
                      pset=PerturbationSet("l2", 0.2), max_iters=50,
                      track_robust_error=True, seed=4)
    tm = train(ModelSpec(kind="linear"), ds, cfg)
    assert tm.robust_error_trace is not None
    path = tmp_path / "trace.csv"
    save_loss_trace(tm, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,robust_train_error"
    assert len(lines) == 1 + len(tm.loss_trace)
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == tm.loss_trace[0]

    mlp = train(MLP_SPEC, sample_box(12, 2, 0.25, seed=67),
                tiny_mlp_cfg(epochs=6, track_robust_error=True))
    assert mlp.robust_error_trace is not None and len(mlp.robust_error_trace) == 6
    untracked = train(MLP_SPEC, sample_box(12, 2, 0.25, seed=67),
                      tiny_mlp_cfg(epochs=3))
    save_loss_trace(untracked, tmp_path / "untracked.csv")
    assert "nan" in (tmp_path / "untracked.csv").read_text()


def test_sgd_image_recipe_is_a_valid_config():
    from advbv.training import SGD_IMAGE_RECIPE

    cfg = TrainConfig(mode="standard", **SGD_IMAGE_RECIPE)
    cfg.validate(MLP_SPEC)
    assert cfg.lr == 0.1 and cfg.momentum == 0.9
    assert cfg.weight_decay == 5e-4
    assert cfg.lr_decay_epochs == (100, 150)
