"""Seeded randomness and the small numerical kernel the rest of the package builds on.

Everything runs in float64. Random streams are fully documented so runs are
reproducible bit-for-bit:

* bit generator: Philox4x64, keyed by the first 16 bytes of
  ``SHA-256("advbv:{seed}:{path}")`` where ``path`` joins the stream id
  components with ``/``;
* uniforms: ``numpy.random.Generator.random`` on that bit generator;
* normals: Box-Muller applied to the uniform stream (not numpy's ziggurat);
* permutations: stable argsort of a row of iid uniforms.

Child streams derived from distinct (seed, path) pairs are independent.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "Rng",
    "ensure_finite",
    "log_sum_exp",
    "log_softmax",
    "sigmoid",
    "softmax",
    "softplus",
]


def ensure_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    """Reject NaN/Inf in values that flow downstream."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")
    return arr


class Rng:
    """Deterministic random stream identified by (seed, path).

    ``child(*path)`` derives an independent stream; the same (seed, path)
    always yields the same draws, on any platform, in any call order
    relative to sibling streams.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        key = self._derive_key(self.seed, self.path)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @staticmethod
    def _derive_key(seed: int, path: tuple) -> np.ndarray:
        label = "advbv:%d:%s" % (seed, "/".join(str(p) for p in path))
        digest = hashlib.sha256(label.encode("utf-8")).digest()[:16]
        return np.frombuffer(digest, dtype=np.uint64)

    def child(self, *path) -> "Rng":
        return Rng(self.seed, self.path + tuple(path))

    def derive_seed(self, *path) -> int:
        """A 63-bit integer seed derived from (seed, path), for APIs that
        take a plain seed."""
        digest = hashlib.sha256(
            ("advbv-seed:%d:%s" % (self.seed, "/".join(str(p) for p in self.path + path)))
            .encode("utf-8")
        ).digest()
        return int.from_bytes(digest[:8], "little") >> 1

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size=None) -> np.ndarray:
        """Standard normals via Box-Muller on the uniform stream."""
        if size is None:
            return self.normal(1)[0]
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self._gen.random((2, pairs))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1-u in (0,1] keeps log finite
        ang = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return z.reshape(shape)

    def signs(self, size) -> np.ndarray:
        """Uniform labels on {-1.0, +1.0}."""
        return np.where(self._gen.random(size) < 0.5, -1.0, 1.0)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self._gen.random(size) < p

    def permutation(self, n: int) -> np.ndarray:
        return self.permutations(1, n)[0]

    def permutations(self, count: int, n: int) -> np.ndarray:
        """(count, n) independent permutations via stable argsort of uniforms."""
        u = self._gen.random((count, n))
        return np.argsort(u, axis=1, kind="stable")


def log_sum_exp(values, axis=None):
    """log sum exp with max-shift; stable for widely spread inputs."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if axis is None:
        m = float(np.max(v))
        return m + float(np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softplus(t):
    """log(1 + exp(-t)), stable over the whole float64 range.

    This is the logistic loss of a margin t: monotone decreasing, ~ -t for
    very negative t and ~ exp(-t) for very positive t.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.where(
        t >= 0.0,
        np.log1p(np.exp(-np.abs(t))),
        -t + np.log1p(np.exp(-np.abs(t))),
    )
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    if out.ndim == 0:
        return float(out)
    return out


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
