"""Outer minimization for the four training regimes (standard, adversarial,
randomized smoothing, fixed Gaussian noise), robust training error, and the
robust-interpolation-threshold rule.

Two entry points:

* ``train`` runs one job and is the reference single-model API;
* ``train_ensemble`` trains many same-shaped jobs in lockstep with a stacked
  ensemble axis, which is what the sweep harness uses (one Python-level step
  drives every model of a grid point, so desk-scale sweeps stay fast on one
  core).

Every random draw of a job comes from children of its own seed, so results
depend only on (spec, data, config, seed), never on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import PerturbationSet, PgdConfig, pgd_attack
from .datasets import Dataset, add_fixed_gaussian_noise, signed_to_onehot
from .models import (
    CROSS_ENTROPY,
    LinearModel,
    MlpModel,
    _activate_grad,
    _backward_pass,
    _forward_pass,
    _logits_grad,
    _per_sample_loss,
    init_mlp,
    mlp_loss_and_input_grad,
)
from .numerics import Rng, sigmoid, softmax, softplus

__all__ = [
    "ModelSpec",
    "ROBUST_INTERPOLATION_ERROR",
    "TrainConfig",
    "TrainedModel",
    "TrainingDivergedError",
    "classification_error",
    "interpolation_threshold",
    "robust_train_error",
    "save_loss_trace",
    "train",
    "train_ensemble",
]


def save_loss_trace(tm, path) -> None:
    """Dump a training trace as `epoch,loss,robust_train_error` rows; the
    robust column is nan unless the run tracked it (track_robust_error)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,robust_train_error\n")
        for epoch, loss in enumerate(tm.loss_trace):
            if tm.robust_error_trace is not None:
                rob = f"{tm.robust_error_trace[epoch]:.17g}"
            else:
                rob = "nan"
            fh.write(f"{epoch},{loss:.17g},{rob}\n")

ROBUST_INTERPOLATION_ERROR = 0.02

MODES = ("standard", "adversarial", "smoothing", "fixed_noise")
OPTIMIZERS = ("adam", "sgd_momentum", "full_batch_gd")

# stage-decayed momentum-SGD recipe used for image-scale runs; the synthetic
# presets use Adam instead
SGD_IMAGE_RECIPE = dict(
    optimizer="sgd_momentum",
    lr=0.1,
    momentum=0.9,
    weight_decay=5e-4,
    epochs=200,
    batch_size=128,
    lr_decay_epochs=(100, 150),
    lr_decay_factor=0.1,
)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, job: int = 0):
        super().__init__(f"loss became non-finite at epoch {epoch} (job {job})")
        self.epoch = epoch
        self.job = job


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "linear"
    hidden: tuple = (100, 100, 100)
    activation: str = "relu"
    train_loss: str = CROSS_ENTROPY

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "standard"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 2000
    batch_size: int = 128
    pgd: PgdConfig | None = None
    pset: PerturbationSet | None = None
    sigma: float = 0.0
    seed: int = 0
    grad_tol: float = 1e-8
    max_iters: int = 10000
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    track_robust_error: bool = False

    def validate(self, spec: ModelSpec) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode == "adversarial":
            if self.pset is None:
                raise ValueError("adversarial mode needs a perturbation set")
            if spec.kind == "mlp" and self.pset.epsilon > 0 and self.pgd is None:
                raise ValueError("adversarial MLP training needs a PGD config")
            if spec.kind == "linear" and self.pset.norm != "l2":
                raise ValueError("linear adversarial training uses the exact l2 form")
        if self.mode in ("smoothing", "fixed_noise") and self.sigma < 0:
            raise ValueError("noise modes need sigma >= 0")
        if self.mode == "smoothing" and spec.kind == "linear":
            raise ValueError("smoothing mode is defined for minibatch (MLP) training")
        if spec.kind == "linear" and self.optimizer != "full_batch_gd":
            raise ValueError("linear logistic training uses full_batch_gd")


@dataclass
class TrainedModel:
    model: object
    robust_train_error: float
    std_train_error: float
    loss_trace: np.ndarray
    robust_error_trace: np.ndarray | None = None
    input_checksums: np.ndarray | None = None
    iterations: int | None = None
    final_grad_norm: float | None = None
    seed: int = 0


def interpolation_threshold(curve) -> float | None:
    """First grid value whose robust training error exceeds 2%; None if the
    whole curve stays at or below 2%."""
    curve = list(curve)
    if not curve:
        raise ValueError("empty curve")
    params = [p for p, _ in curve]
    if any(b < a for a, b in zip(params, params[1:])):
        raise ValueError("curve must be sorted by parameter")
    for param, err in curve:
        if err > ROBUST_INTERPOLATION_ERROR:
            return param
    return None


def classification_error(model, ds: Dataset) -> float:
    """Clean 0-1 error; sign ties count as errors."""
    if ds.n == 0:
        return 0.0
    if isinstance(model, LinearModel):
        scores = ds.X @ model.theta
        y = ds.y if ds.y.ndim == 1 else np.where(ds.y.argmax(axis=1) > 0, 1.0, -1.0)
        return float(np.mean(y * scores <= 0.0))
    probs = _mlp_probs_chunked(model.weights, model.biases, model.activation, ds.X)
    pred = probs.argmax(axis=-1)
    truth = _class_indices(ds.y)
    return float(np.mean(pred != truth))


def robust_train_error(
    model,
    ds: Dataset,
    pset: PerturbationSet,
    pgd_eval: PgdConfig | None = None,
    loss_kind: str = CROSS_ENTROPY,
) -> float:
    """Fraction of points misclassified at their worst-case perturbation.

    Linear models use the closed-form margin test y(<x, theta> - eps||theta||)
    over the l2 ball; MLPs attack each point with the evaluation PGD config.
    """
    if ds.n == 0:
        return 0.0
    if isinstance(model, LinearModel):
        margins = ds.y * (ds.X @ model.theta) - pset.epsilon * np.linalg.norm(model.theta)
        return float(np.mean(margins <= 0.0))
    if pset.epsilon == 0.0:
        return classification_error(model, ds)
    if pgd_eval is None:
        raise ValueError("MLP robust error needs a PGD evaluation config")
    Y = _onehot_labels(ds.y)
    callback = mlp_loss_and_input_grad(model, loss_kind)
    delta = pgd_attack(callback, ds.X, Y, pset, pgd_eval, domain_box=ds.domain_box)
    probs = _mlp_probs_chunked(model.weights, model.biases, model.activation, ds.X + delta)
    pred = probs.argmax(axis=-1)
    return float(np.mean(pred != _class_indices(ds.y)))


def train(spec: ModelSpec, ds: Dataset, cfg: TrainConfig) -> TrainedModel:
    """Train one model; deterministic given (spec, ds, cfg)."""
    return train_ensemble(spec, [ds], cfg, [cfg.seed])[0]


def train_ensemble(
    spec: ModelSpec,
    datasets: list,
    cfg: TrainConfig,
    seeds: list,
) -> list:
    """Train one model per (dataset, seed) pair in lockstep.

    All datasets must share (n, d) and label encoding; the harness groups
    jobs accordingly.  Per-job randomness (init, shuffling, noise) comes from
    children of each job's own seed.
    """
    cfg.validate(spec)
    if len(datasets) != len(seeds):
        raise ValueError("one seed per dataset")
    if not datasets:
        return []
    shapes = {(d.n, d.d) for d in datasets}
    if len(shapes) != 1:
        raise ValueError("lockstep training needs equally sized datasets")
    if any(d.n == 0 for d in datasets):
        raise ValueError("cannot train on an empty dataset")
    if spec.kind == "linear":
        return _train_linear_ensemble(datasets, cfg, seeds)
    return _train_mlp_ensemble(spec, datasets, cfg, seeds)


# ---------------------------------------------------------------------------
# linear logistic: full-batch GD with backtracking on the exact robust loss
# ---------------------------------------------------------------------------


def _train_linear_ensemble(datasets, cfg, seeds):
    mode = cfg.mode
    eps = cfg.pset.epsilon if (mode == "adversarial" and cfg.pset is not None) else 0.0
    if mode == "fixed_noise":
        datasets = [
            add_fixed_gaussian_noise(d, cfg.sigma, Rng(s).derive_seed("fixed_noise"))
            for d, s in zip(datasets, seeds)
        ]
    X = np.stack([d.X for d in datasets])  # (E, m, d)
    y = np.stack([d.y for d in datasets])  # (E, m)
    E, m, dim = X.shape
    Xt = np.swapaxes(X, -1, -2)

    def value(thetas):
        norms = np.linalg.norm(thetas, axis=1)
        margins = y * (X @ thetas[:, :, None])[:, :, 0] - eps * norms[:, None]
        return softplus(margins).mean(axis=1)

    def value_and_grad(thetas):
        norms = np.linalg.norm(thetas, axis=1)
        margins = y * (X @ thetas[:, :, None])[:, :, 0] - eps * norms[:, None]
        losses = softplus(margins).mean(axis=1)
        w = sigmoid(-margins)
        unit = np.where(norms[:, None] > 0, thetas / np.maximum(norms[:, None], 1e-300), 0.0)
        grads = (-(Xt @ (w * y)[:, :, None])[:, :, 0] + eps * w.sum(axis=1)[:, None] * unit) / m
        return losses, grads

    thetas = np.zeros((E, dim))
    losses, grads = value_and_grad(thetas)
    active = np.ones(E, dtype=bool)
    iterations = np.zeros(E, dtype=int)
    grad_norms = np.linalg.norm(grads, axis=1)
    trace = [losses.copy()]

    def robust_errors(th):
        norms = np.linalg.norm(th, axis=1)
        margins = y * (X @ th[:, :, None])[:, :, 0] - eps * norms[:, None]
        return (margins <= 0.0).mean(axis=1)

    rob_trace = [robust_errors(thetas)] if cfg.track_robust_error else None

    armijo = 1e-4
    for it in range(cfg.max_iters):
        converged = grad_norms <= cfg.grad_tol
        active &= ~converged
        if not active.any():
            break
        iterations[active] += 1
        # textbook Armijo backtracking, restarted from a unit step, per model
        step = np.ones(E)
        accepted = ~active  # inactive models need no step
        for _ in range(60):
            cand = thetas - step[:, None] * grads
            cand_losses = value(cand)
            ok = cand_losses <= losses - armijo * step * grad_norms**2
            take = active & ~accepted & ok
            if take.any():
                thetas = np.where(take[:, None], cand, thetas)
                accepted |= take
            if accepted.all():
                break
            step = np.where(active & ~accepted, step * 0.5, step)
        # models whose line search exhausted stall at their current iterate
        losses, grads = value_and_grad(thetas)
        if not np.all(np.isfinite(losses)):
            raise TrainingDivergedError(epoch=it, job=int(np.flatnonzero(~np.isfinite(losses))[0]))
        grad_norms = np.linalg.norm(grads, axis=1)
        trace.append(losses.copy())
        if rob_trace is not None:
            rob_trace.append(robust_errors(thetas))

    trace_arr = np.array(trace)
    rob_arr = np.array(rob_trace) if rob_trace is not None else None
    out = []
    for e in range(E):
        model = LinearModel(thetas[e])
        margins = y[e] * (X[e] @ thetas[e]) - eps * np.linalg.norm(thetas[e])
        robust_err = float(np.mean(margins <= 0.0))
        std_err = float(np.mean(y[e] * (X[e] @ thetas[e]) <= 0.0))
        out.append(
            TrainedModel(
                model=model,
                robust_train_error=robust_err,
                std_train_error=std_err,
                loss_trace=trace_arr[:, e],
                robust_error_trace=None if rob_arr is None else rob_arr[:, e],
                iterations=int(iterations[e]),
                final_grad_norm=float(grad_norms[e]),
                seed=int(seeds[e]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# MLP: minibatch Adam / momentum SGD with the four data regimes
# ---------------------------------------------------------------------------


def _class_indices(y: np.ndarray) -> np.ndarray:
    if y.ndim == 1:
        return (y > 0).astype(int)
    return y.argmax(axis=-1)


def _onehot_labels(y: np.ndarray) -> np.ndarray:
    return signed_to_onehot(y) if y.ndim == 1 else np.asarray(y, dtype=np.float64)


def _mlp_probs_chunked(weights, biases, activation, X, chunk: int = 8192) -> np.ndarray:
    outs = []
    for start in range(0, X.shape[-2], chunk):
        block = X[..., start:start + chunk, :]
        logits, _, _ = _forward_pass(weights, biases, activation, block)
        outs.append(softmax(logits))
    return np.concatenate(outs, axis=-2)


def _stacked_callback(weights, biases, activation, loss_kind):
    def callback(x_adv, Y):
        logits, acts, pre = _forward_pass(weights, biases, activation, x_adv)
        losses = _per_sample_loss(logits, Y, loss_kind)
        dZ = _logits_grad(logits, Y, loss_kind)
        for i in range(len(weights) - 1, 0, -1):
            dH = dZ @ np.swapaxes(weights[i], -1, -2)
            dZ = dH * _activate_grad(pre[i - 1], acts[i], activation)
        dX = dZ @ np.swapaxes(weights[0], -1, -2)
        return losses, dX

    return callback


def _train_mlp_ensemble(spec, datasets, cfg, seeds):
    mode = cfg.mode
    if mode == "fixed_noise":
        datasets = [
            add_fixed_gaussian_noise(d, cfg.sigma, Rng(s).derive_seed("fixed_noise"))
            for d, s in zip(datasets, seeds)
        ]
    X = np.stack([d.X for d in datasets])
    Y = np.stack([_onehot_labels(d.y) for d in datasets])
    domain_box = datasets[0].domain_box
    E, m, dim = X.shape
    n_classes = Y.shape[-1]

    sizes = [dim, *spec.hidden, n_classes]
    inits = [init_mlp(sizes, spec.activation, Rng(s).child("init")) for s in seeds]
    weights = [np.stack([mdl.weights[i] for mdl in inits]) for i in range(len(sizes) - 1)]
    biases = [np.stack([mdl.biases[i] for mdl in inits]) for i in range(len(sizes) - 1)]

    shuffle_rngs = [Rng(s).child("shuffle") for s in seeds]
    noise_rngs = [Rng(s).child("noise") for s in seeds]

    batch = min(cfg.batch_size, m)
    n_batches = (m + batch - 1) // batch

    opt_state = _init_optimizer(cfg.optimizer, weights, biases)
    lr = cfg.lr
    loss_trace = np.zeros((cfg.epochs, E))
    checksums = np.zeros((cfg.epochs, E), dtype=np.uint64)
    rob_trace = np.zeros((cfg.epochs, E)) if cfg.track_robust_error else None

    def epoch_robust_errors():
        vals = np.zeros(E)
        for e in range(E):
            model = MlpModel([W[e] for W in weights], [b[e] for b in biases],
                             spec.activation)
            vals[e] = _mode_robust_error(model, datasets[e], cfg, spec, noise_rngs[e])
        return vals

    eps = cfg.pset.epsilon if (mode == "adversarial" and cfg.pset is not None) else 0.0

    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_decay_epochs:
            lr *= cfg.lr_decay_factor
        perms = np.stack([r.permutation(m) for r in shuffle_rngs])
        Xp = np.take_along_axis(X, perms[:, :, None], axis=1)
        Yp = np.take_along_axis(Y, perms[:, :, None], axis=1)
        epoch_loss = np.zeros(E)
        epoch_sum = np.zeros(E, dtype=np.uint64)
        for b in range(n_batches):
            sl = slice(b * batch, min((b + 1) * batch, m))
            xb = Xp[:, sl]
            yb = Yp[:, sl]
            if mode == "adversarial" and eps > 0.0:
                callback = _stacked_callback(weights, biases, spec.activation, spec.train_loss)
                delta = pgd_attack(callback, xb, yb, cfg.pset, cfg.pgd, domain_box=domain_box)
                x_used = xb + delta
            elif mode == "smoothing" and cfg.sigma > 0.0:
                noise = np.stack([r.normal(xb.shape[1:]) for r in noise_rngs])
                x_used = xb + cfg.sigma * noise
                if domain_box is not None:
                    x_used = np.clip(x_used, domain_box[0], domain_box[1])
            else:
                x_used = xb
            epoch_sum += _bit_checksum(x_used)
            try:
                losses, w_grads, b_grads, _, _ = _backward_pass(
                    weights, biases, spec.activation, x_used, yb, spec.train_loss
                )
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch=epoch) from exc
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(
                    epoch=epoch, job=int(np.flatnonzero(~np.isfinite(losses))[0])
                )
            _optimizer_step(cfg, opt_state, lr, weights, biases, w_grads, b_grads)
            epoch_loss += losses * (sl.stop - sl.start)
        loss_trace[epoch] = epoch_loss / m
        checksums[epoch] = epoch_sum
        if rob_trace is not None:
            rob_trace[epoch] = epoch_robust_errors()

    out = []
    for e in range(E):
        model = MlpModel([W[e] for W in weights], [b[e] for b in biases], spec.activation)
        ds_e = datasets[e]
        std_err = classification_error(model, ds_e)
        robust_err = _mode_robust_error(model, ds_e, cfg, spec, noise_rngs[e])
        out.append(
            TrainedModel(
                model=model,
                robust_train_error=robust_err,
                std_train_error=std_err,
                loss_trace=loss_trace[:, e],
                robust_error_trace=None if rob_trace is None else rob_trace[:, e],
                input_checksums=checksums[:, e],
                seed=int(seeds[e]),
            )
        )
    return out


def _mode_robust_error(model, ds, cfg, spec, noise_rng):
    """The training-regime notion of robust training error: worst-case
    perturbation for adversarial mode, a fresh noisy copy for smoothing,
    the (possibly pre-noised) training inputs otherwise."""
    if cfg.mode == "adversarial" and cfg.pset is not None and cfg.pset.epsilon > 0.0:
        return robust_train_error(model, ds, cfg.pset, cfg.pgd, spec.train_loss)
    if cfg.mode == "smoothing" and cfg.sigma > 0.0:
        noisy = ds.X + cfg.sigma * noise_rng.child("eval").normal(ds.X.shape)
        if ds.domain_box is not None:
            noisy = np.clip(noisy, ds.domain_box[0], ds.domain_box[1])
        probs = _mlp_probs_chunked(model.weights, model.biases, model.activation, noisy)
        return float(np.mean(probs.argmax(axis=-1) != _class_indices(ds.y)))
    return classification_error(model, ds)


def _bit_checksum(x: np.ndarray) -> np.ndarray:
    """Order-independent exact checksum per model: modular uint64 sum of the
    raw float bit patterns over the trailing (batch, feature) axes."""
    bits = np.ascontiguousarray(x).view(np.uint64)
    flat = bits.reshape(bits.shape[0], -1)
    out = np.zeros(bits.shape[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in range(0, flat.shape[1], 65536):
            out += flat[:, col:col + 65536].sum(axis=1, dtype=np.uint64)
    return out


def _init_optimizer(kind, weights, biases):
    if kind == "adam":
        return {
            "t": 0,
            "mw": [np.zeros_like(W) for W in weights],
            "vw": [np.zeros_like(W) for W in weights],
            "mb": [np.zeros_like(b) for b in biases],
            "vb": [np.zeros_like(b) for b in biases],
        }
    if kind == "sgd_momentum":
        return {
            "vw": [np.zeros_like(W) for W in weights],
            "vb": [np.zeros_like(b) for b in biases],
        }
    raise ValueError(f"optimizer {kind!r} does not apply to minibatch training")


def _optimizer_step(cfg, state, lr, weights, biases, w_grads, b_grads):
    wd = cfg.weight_decay
    if cfg.optimizer == "adam":
        state["t"] += 1
        t = state["t"]
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for i in range(len(weights)):
            for arr, grad, mkey, vkey in (
                (weights[i], w_grads[i], "mw", "vw"),
                (biases[i], b_grads[i], "mb", "vb"),
            ):
                g = grad + wd * arr if wd else grad
                m = state[mkey][i]
                v = state[vkey][i]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                arr -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    else:  # sgd_momentum
        mu = cfg.momentum
        for i in range(len(weights)):
            for arr, grad, vkey in (
                (weights[i], w_grads[i], "vw"),
                (biases[i], b_grads[i], "vb"),
            ):
                g = grad + wd * arr if wd else grad
                vel = state[vkey][i]
                vel *= mu
                vel += g
                arr -= lr * vel
