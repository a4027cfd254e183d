"""The two predictor families: a linear score model for logistic problems and
a small fully connected net with manual forward/backward.

The MLP math is written against trailing axes only, so parameters of shape
(in, out) and stacked parameters of shape (E, in, out) both work; the latter
is what the lockstep ensemble trainer uses.  Losses are per-model means over
the batch; per-sample variants back the input-gradient callbacks the attacks
need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, ensure_finite, log_softmax, sigmoid, softmax, softplus

__all__ = [
    "GradientBundle",
    "LinearModel",
    "MlpModel",
    "adv_logistic_grad",
    "init_mlp",
    "linear_forward",
    "load_model",
    "mlp_backward",
    "mlp_forward",
    "mlp_loss_and_input_grad",
    "save_model",
]

CROSS_ENTROPY = "cross_entropy"
SQUARED = "squared"


@dataclass
class LinearModel:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = ensure_finite(np.asarray(self.theta, dtype=np.float64), "theta")


@dataclass
class MlpModel:
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            ensure_finite(W, f"layer {i} weights")
            ensure_finite(b, f"layer {i} bias")
            if W.shape[-1] != b.shape[-1]:
                raise ValueError(f"layer {i} weight/bias width mismatch")
            if i > 0 and self.weights[i - 1].shape[-1] != W.shape[-2]:
                raise ValueError(f"layer {i} does not chain with layer {i - 1}")

    @property
    def layer_sizes(self) -> list:
        sizes = [W.shape[-2] for W in self.weights]
        sizes.append(self.weights[-1].shape[-1])
        return sizes


@dataclass
class GradientBundle:
    loss: float
    weight_grads: list = field(default_factory=list)
    bias_grads: list = field(default_factory=list)
    input_grad: np.ndarray | None = None
    theta_grad: np.ndarray | None = None


def init_mlp(layer_sizes, activation: str, rng: Rng) -> MlpModel:
    """He-style uniform fan-in init on the documented stream; zero biases."""
    weights, biases = [], []
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        bound = np.sqrt(6.0 / fan_in)
        W = rng.child("W", i).uniform((fan_in, fan_out), -bound, bound)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, activation)


def linear_forward(model: LinearModel, x: np.ndarray):
    """<theta, x>; x may be a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.theta.shape[0]:
        raise ValueError("dimension mismatch between theta and x")
    out = x @ model.theta
    return float(out) if out.ndim == 0 else out


def adv_logistic_grad(model: LinearModel, X: np.ndarray, y: np.ndarray, epsilon: float) -> GradientBundle:
    """Value and gradient of the exact l2-robust logistic objective
    (1/n) sum l(y_i <x_i, theta> - eps ||theta||); at theta = 0 the norm term
    uses the zero subgradient."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    theta = model.theta
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    norm = np.linalg.norm(theta)
    margins = y * (X @ theta) - epsilon * norm
    loss = float(np.mean(softplus(margins)))
    w = sigmoid(-margins)  # -l'(m)
    unit = theta / norm if norm > 0 else np.zeros_like(theta)
    grad = (-(w * y) @ X + epsilon * w.sum() * unit) / n
    return GradientBundle(loss=loss, theta_grad=grad)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _forward_pass(weights, biases, activation, X):
    """Returns (logits, hidden activations); X has shape (..., B, d)."""
    h = X
    acts = [h]
    pre = []
    for i in range(len(weights) - 1):
        z = h @ weights[i] + biases[i][..., None, :]
        h = _activate(z, activation)
        pre.append(z)
        acts.append(h)
    logits = h @ weights[-1] + biases[-1][..., None, :]
    return logits, acts, pre


def mlp_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities; x is one point (d,) or a batch (..., B, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != model.weights[0].shape[-2]:
        raise ValueError("input width does not match the first layer")
    logits, _, _ = _forward_pass(model.weights, model.biases, model.activation, x)
    probs = softmax(logits)
    return probs[0] if single else probs


def _per_sample_loss(logits: np.ndarray, Y: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind == CROSS_ENTROPY:
        return -np.sum(Y * log_softmax(logits), axis=-1)
    probs = softmax(logits)
    return np.sum((probs - Y) ** 2, axis=-1)


def _logits_grad(logits: np.ndarray, Y: np.ndarray, loss_kind: str) -> np.ndarray:
    """d(per-sample loss)/d logits."""
    probs = softmax(logits)
    if loss_kind == CROSS_ENTROPY:
        return probs - Y
    g = 2.0 * (probs - Y)
    return probs * (g - np.sum(g * probs, axis=-1, keepdims=True))


def _backward_pass(weights, biases, activation, X, Y, loss_kind, want_params=True):
    """Mean-over-batch loss with parameter grads, plus per-sample input grads.

    Shapes broadcast over any leading ensemble axes; the batch axis is -2.
    """
    logits, acts, pre = _forward_pass(weights, biases, activation, X)
    batch = X.shape[-2]
    losses = _per_sample_loss(logits, Y, loss_kind)
    loss = losses.mean(axis=-1)
    dZ = _logits_grad(logits, Y, loss_kind) / batch
    w_grads: list = [None] * len(weights)
    b_grads: list = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        if want_params:
            w_grads[i] = np.swapaxes(acts[i], -1, -2) @ dZ
            b_grads[i] = dZ.sum(axis=-2)
        dH = dZ @ np.swapaxes(weights[i], -1, -2)
        if not np.all(np.isfinite(dH)):
            raise FloatingPointError(f"non-finite gradient at layer {i}")
        if i > 0:
            dZ = dH * _activate_grad(pre[i - 1], acts[i], activation)
    return loss, w_grads, b_grads, dH, losses


def mlp_backward(model: MlpModel, X: np.ndarray, Y: np.ndarray, loss_kind: str) -> GradientBundle:
    """Exact gradients of the mean loss over the batch w.r.t. parameters and input.

    Y is one-hot (B, k); loss_kind is "cross_entropy" or the squared error
    between softmax outputs and the one-hot target.
    """
    if loss_kind not in (CROSS_ENTROPY, SQUARED):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    loss, w_grads, b_grads, dX, _ = _backward_pass(
        model.weights, model.biases, model.activation, X, Y, loss_kind
    )
    return GradientBundle(
        loss=float(loss),
        weight_grads=w_grads,
        bias_grads=b_grads,
        input_grad=dX,
    )


def mlp_loss_and_input_grad(model: MlpModel, loss_kind: str):
    """Per-sample loss/input-gradient callback for the PGD attack."""

    def callback(x_adv, Y):
        logits, acts, pre = _forward_pass(model.weights, model.biases, model.activation, x_adv)
        losses = _per_sample_loss(logits, Y, loss_kind)
        dZ = _logits_grad(logits, Y, loss_kind)
        for i in range(len(model.weights) - 1, 0, -1):
            dH = dZ @ np.swapaxes(model.weights[i], -1, -2)
            dZ = dH * _activate_grad(pre[i - 1], acts[i], model.activation)
        dX = dZ @ np.swapaxes(model.weights[0], -1, -2)
        return losses, dX

    return callback


def save_model(model, path) -> None:
    """Self-describing npz checkpoint; float64 arrays round-trip bit-exactly."""
    if isinstance(model, LinearModel):
        header = {"kind": "linear"}
        np.savez(path, header=json.dumps(header), theta=model.theta)
    elif isinstance(model, MlpModel):
        header = {
            "kind": "mlp",
            "activation": model.activation,
            "n_layers": len(model.weights),
        }
        arrays = {"header": json.dumps(header)}
        for i, (W, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        np.savez(path, **arrays)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(data["header"].item())
        if header["kind"] == "linear":
            return LinearModel(data["theta"])
        weights = [data[f"W{i}"] for i in range(header["n_layers"])]
        biases = [data[f"b{i}"] for i in range(header["n_layers"])]
        return MlpModel(weights, biases, header["activation"])
