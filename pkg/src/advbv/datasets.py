"""Seeded samplers for the three synthetic families, dataset noise transforms,
and the repeated-split machinery used by the ensemble estimators.

All samplers are pure functions of (parameters, seed): calling twice with the
same arguments yields bit-identical datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, ensure_finite

__all__ = [
    "Dataset",
    "GenerationError",
    "SplitPlan",
    "add_fixed_gaussian_noise",
    "load_csv",
    "make_split_plan",
    "sample_box",
    "sample_mog",
    "sample_planted",
    "save_csv",
    "signed_to_onehot",
]


class GenerationError(RuntimeError):
    """Rejection sampling could not reach the requested sample count."""


@dataclass
class Dataset:
    """Feature matrix plus labels.

    ``y`` is either a signed (+-1) vector of shape (n,) or a one-hot matrix
    of shape (n, k).  ``domain_box`` is the (lo, hi) clipping interval applied
    to every coordinate, present only for bounded domains.
    """

    X: np.ndarray
    y: np.ndarray
    domain_box: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.validate()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def validate(self) -> None:
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("label count does not match row count")
        ensure_finite(self.X, "dataset features")
        ensure_finite(self.y, "dataset labels")
        if self.y.ndim == 1:
            if self.y.size and not np.all(np.isin(self.y, (-1.0, 1.0))):
                raise ValueError("signed labels must be -1 or +1")
        elif self.y.ndim == 2:
            if self.y.size:
                if not np.allclose(self.y.sum(axis=1), 1.0):
                    raise ValueError("one-hot rows must sum to 1")
                if not np.all((self.y == 0.0) | (self.y == 1.0)):
                    raise ValueError("one-hot entries must be 0 or 1")
        else:
            raise ValueError("labels must be a vector or a one-hot matrix")
        if self.domain_box is not None:
            lo, hi = self.domain_box
            if self.X.size and (self.X.min() < lo or self.X.max() > hi):
                raise ValueError("features fall outside the domain box")

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.domain_box, dict(self.meta))


def signed_to_onehot(y: np.ndarray) -> np.ndarray:
    """Map signed labels to one-hot rows: -1 -> class 0, +1 -> class 1."""
    y = np.asarray(y)
    out = np.zeros((y.shape[0], 2), dtype=np.float64)
    out[np.arange(y.shape[0]), (y > 0).astype(int)] = 1.0
    return out


def sample_mog(n: int, d: int, sigma: float, seed: int) -> Dataset:
    """Two-cluster Gaussian mixture: y uniform on {-1,+1}, x | y ~ N(y*v, sigma^2 I)
    with v the all-ones direction scaled to unit norm."""
    if n < 0 or d < 1 or sigma < 0:
        raise ValueError("need n >= 0, d >= 1, sigma >= 0")
    rng = Rng(seed)
    y = rng.child("labels").signs(n)
    v = np.full(d, 1.0 / np.sqrt(d))
    X = y[:, None] * v[None, :] + sigma * rng.child("noise").normal((n, d))
    meta = {"generator": "mog", "n": n, "d": d, "sigma": sigma, "seed": seed}
    return Dataset(X, y, None, meta)


def sample_planted(n: int, d: int, seed: int) -> Dataset:
    """Mixture-of-Gaussians features with a planted robust first coordinate:
    x1 = +y with probability 0.95 and -y otherwise; the remaining d-1
    coordinates are N(y*v, I) with v = 1/sqrt(d) in each entry."""
    if n < 0 or d < 2:
        raise ValueError("need n >= 0, d >= 2")
    rng = Rng(seed)
    y = rng.child("labels").signs(n)
    flip = rng.child("flip").bernoulli(0.05, n)
    x1 = np.where(flip, -y, y)
    v = np.full(d - 1, 1.0 / np.sqrt(d))
    rest = y[:, None] * v[None, :] + rng.child("noise").normal((n, d - 1))
    X = np.concatenate([x1[:, None], rest], axis=1)
    meta = {"generator": "planted", "n": n, "d": d, "seed": seed}
    return Dataset(X, y, None, meta)


def sample_box(
    n: int,
    d: int,
    gamma: float,
    seed: int,
    margin_threshold: float | None = None,
) -> Dataset:
    """Uniform rejection sampler on [-1,1]^d with a margin band removed.

    d = 2 keeps x with |x1 - x2| >= gamma/sqrt(2) and labels y = sign(x1 - x2);
    d > 2 keeps x with |<x, 1/sqrt(d)>| >= gamma and labels y = sign(<x, 1>).
    The two margin rules come as stated (they scale differently along the
    separating direction); ``margin_threshold`` overrides the raw threshold
    applied to the projection.
    """
    if n < 0 or d < 2:
        raise ValueError("need n >= 0, d >= 2")
    if margin_threshold is None and not (0.0 < gamma < 1.0):
        raise ValueError("need 0 < gamma < 1")
    rng = Rng(seed).child("draws")
    if d == 2:
        threshold = gamma / np.sqrt(2.0) if margin_threshold is None else margin_threshold
    else:
        threshold = gamma if margin_threshold is None else margin_threshold

    kept: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    total_kept = 0
    total_drawn = 0
    batch = max(4 * max(n, 1), 1024)
    while total_kept < n:
        cand = rng.uniform((batch, d), -1.0, 1.0)
        if d == 2:
            proj = cand[:, 0] - cand[:, 1]
        else:
            proj = cand.sum(axis=1) / np.sqrt(d)
        ok = np.abs(proj) >= threshold
        total_drawn += batch
        if ok.any():
            kept.append(cand[ok])
            labels.append(np.sign(proj[ok]))
            total_kept += int(ok.sum())
        if total_drawn >= 5_000_000 and total_kept / total_drawn < 1e-6:
            raise GenerationError(
                f"acceptance rate below 1e-6 after {total_drawn} draws "
                f"(threshold {threshold:.6g} too tight for d={d})"
            )
    if n == 0:
        X = np.empty((0, d))
        y = np.empty((0,))
    else:
        X = np.concatenate(kept)[:n]
        y = np.concatenate(labels)[:n]
    meta = {"generator": "box", "n": n, "d": d, "gamma": gamma, "seed": seed}
    return Dataset(X, y, (-1.0, 1.0), meta)


def add_fixed_gaussian_noise(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """One fixed draw of N(0, sigma^2) noise added to every feature, clipped
    back into the domain box when the dataset has one.  Labels unchanged."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = Rng(seed).child("fixed_noise").normal(ds.X.shape)
    X = ds.X + sigma * noise
    if ds.domain_box is not None:
        X = np.clip(X, ds.domain_box[0], ds.domain_box[1])
    meta = dict(ds.meta)
    meta["fixed_noise"] = {"sigma": sigma, "seed": seed}
    return Dataset(X, ds.y.copy(), ds.domain_box, meta)


@dataclass
class SplitPlan:
    """K independent partitions of {0..n-1}, each into N near-equal parts."""

    n: int
    repetitions: int
    splits: int
    seed: int
    parts: list = field(default_factory=list)

    @property
    def n_models(self) -> int:
        return self.repetitions * self.splits

    def part(self, k: int, j: int) -> np.ndarray:
        return self.parts[k][j]


def make_split_plan(n: int, repetitions: int, splits: int, seed: int) -> SplitPlan:
    if splits < 2 or repetitions < 1 or n < splits:
        raise ValueError("need splits >= 2, repetitions >= 1, n >= splits")
    rng = Rng(seed).child("splits")
    perms = rng.permutations(repetitions, n)
    base, rem = divmod(n, splits)
    sizes = [base + 1 if j < rem else base for j in range(splits)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    parts = [
        [np.sort(perms[k, offsets[j]:offsets[j + 1]]) for j in range(splits)]
        for k in range(repetitions)
    ]
    return SplitPlan(n, repetitions, splits, seed, parts)


def save_csv(ds: Dataset, path) -> None:
    """Write `x0..x{d-1},y` rows with 17 significant digits (lossless for
    float64). Only signed-label datasets have a CSV form."""
    if ds.y.ndim != 1:
        raise ValueError("CSV serialization covers signed-label datasets only")
    header = ",".join([f"x{i}" for i in range(ds.d)] + ["y"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.X[i]] + [f"{ds.y[i]:.17g}"]
            f.write(",".join(row) + "\n")


def load_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if not header or header[-1] != "y" or header[0] != "x0":
            raise ValueError(f"unrecognized dataset CSV header in {path}")
        d = len(header) - 1
        rows = [line.strip().split(",") for line in f if line.strip()]
    if rows:
        data = np.array([[float(v) for v in r] for r in rows])
        X, y = data[:, :d], data[:, d]
    else:
        X, y = np.empty((0, d)), np.empty((0,))
    return Dataset(X, y, None, {"generator": "csv", "path": str(path)})
