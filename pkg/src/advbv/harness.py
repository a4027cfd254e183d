"""Sweep orchestration: strict JSON configs, named presets, deterministic
seeded execution with resume, and CSV/SVG emission.

A sweep fixes one dataset, one K x N split plan, and one test set, then walks
the grid. Each grid point trains the whole split ensemble (lockstep),
decomposes each repetition's N-model ensemble, averages the K per-repetition
estimates into the row values (their spread gives the stderr columns), and
lands one CSV row. Per-job seeds derive from (master seed, grid index, k, j),
so results never depend on scheduling or worker count. Completed grid points
are reused on re-run when their stored provenance hash matches.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import PerturbationSet, PgdConfig
from .datasets import (
    Dataset,
    add_fixed_gaussian_noise,
    make_split_plan,
    sample_box,
    sample_mog,
    sample_planted,
)
from .estimators import (
    BVPoint,
    build_prediction_tensor,
    bv_cross_entropy,
    bv_logistic,
    bv_squared,
)
from .numerics import Rng
from .svg import render_curves
from .training import (
    ModelSpec,
    TrainConfig,
    classification_error,
    interpolation_threshold,
    robust_train_error,
    train_ensemble,
)

__all__ = [
    "ConfigError",
    "SweepResult",
    "emit_csv",
    "emit_plot",
    "load_config",
    "parse_csv",
    "preset_configs",
    "run_sweep",
    "validate_config",
]

CSV_HEADER = (
    "sweep_param,bias,variance,risk,robust_train_error,std_train_error,"
    "std_test_error,n_models,stderr_bias,stderr_variance"
)


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

_SCHEMA = {
    "name": None,
    "seed": None,
    "threads": None,
    "dataset": {"kind", "n", "d", "sigma", "gamma", "n_per_dim"},
    "model": {"kind", "hidden", "activation", "train_loss"},
    "training": {
        "mode", "optimizer", "lr", "momentum", "weight_decay", "epochs",
        "batch_size", "norm", "epsilon", "sigma", "pgd_steps", "pgd_step_frac",
        "pgd_random_start", "clip_to_domain", "grad_tol", "max_iters",
        "lr_decay_epochs", "lr_decay_factor",
    },
    "sweep": {"axis", "grid"},
    "estimation": {
        "loss", "repetitions", "splits", "test_size", "adversarial_eval",
        "eval_pgd_steps", "eval_pgd_step_frac",
    },
    "output": {"dir"},
}

_DEFAULTS = {
    "name": "sweep",
    "threads": None,
    "model": {"kind": "linear", "hidden": [100, 100, 100], "activation": "relu",
              "train_loss": "cross_entropy"},
    "training": {
        "mode": "standard", "optimizer": "adam", "lr": 1e-3, "momentum": 0.9,
        "weight_decay": 0.0, "epochs": 2000, "batch_size": 128, "norm": "l2",
        "epsilon": 0.0, "sigma": 0.0, "pgd_steps": 10, "pgd_step_frac": 0.25,
        "pgd_random_start": False, "clip_to_domain": True, "grad_tol": 1e-8,
        "max_iters": 10000, "lr_decay_epochs": [], "lr_decay_factor": 0.1,
    },
    "estimation": {
        "loss": "squared", "repetitions": 30, "splits": 2, "test_size": 10000,
        "adversarial_eval": False, "eval_pgd_steps": 20, "eval_pgd_step_frac": 0.15,
    },
    "output": {"dir": "out"},
}


def validate_config(raw: dict) -> dict:
    """Strict validation: every key must be known, required keys present,
    cross-field invariants enforced. Returns the fully resolved config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key)
        allowed = _SCHEMA[key]
        if allowed is not None:
            sub = raw[key]
            if not isinstance(sub, dict):
                raise ConfigError(f"{key} must be an object", key=key)
            for sub_key in sub:
                if sub_key not in allowed:
                    raise ConfigError(f"unknown key {key}.{sub_key}", key=f"{key}.{sub_key}")
    for required in ("seed", "dataset", "sweep"):
        if required not in raw:
            raise ConfigError(f"missing required key {required!r}", key=required)

    cfg = {
        "name": raw.get("name", _DEFAULTS["name"]),
        "seed": int(raw["seed"]),
        "threads": raw.get("threads"),
        "dataset": dict(raw["dataset"]),
        "model": {**_DEFAULTS["model"], **raw.get("model", {})},
        "training": {**_DEFAULTS["training"], **raw.get("training", {})},
        "sweep": dict(raw["sweep"]),
        "estimation": {**_DEFAULTS["estimation"], **raw.get("estimation", {})},
        "output": {**_DEFAULTS["output"], **raw.get("output", {})},
    }

    ds = cfg["dataset"]
    kind = ds.get("kind")
    if kind not in ("mog", "planted", "box"):
        raise ConfigError(f"dataset.kind must be mog|planted|box, got {kind!r}", key="dataset.kind")
    if "n" not in ds and "n_per_dim" not in ds:
        raise ConfigError("dataset needs n (or n_per_dim for dimension sweeps)", key="dataset.n")
    if "d" not in ds:
        raise ConfigError("dataset.d is required", key="dataset.d")
    if kind == "mog" and "sigma" not in ds:
        raise ConfigError("mog dataset needs sigma", key="dataset.sigma")
    if kind == "box" and "gamma" not in ds:
        raise ConfigError("box dataset needs gamma", key="dataset.gamma")

    model = cfg["model"]
    if model["kind"] not in ("linear", "mlp"):
        raise ConfigError(f"model.kind must be linear|mlp, got {model['kind']!r}", key="model.kind")

    sweep = cfg["sweep"]
    axis = sweep.get("axis")
    if axis not in ("epsilon", "sigma", "width", "dimension"):
        raise ConfigError(f"sweep.axis must be epsilon|sigma|width|dimension, got {axis!r}",
                          key="sweep.axis")
    grid = sweep.get("grid")
    if not isinstance(grid, (list, tuple)) or len(grid) == 0:
        raise ConfigError("sweep.grid must be a non-empty list", key="sweep.grid")
    grid = [float(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep.grid must be strictly increasing", key="sweep.grid")
    sweep["grid"] = grid

    tr = cfg["training"]
    mode = tr["mode"]
    if axis == "sigma" and mode not in ("smoothing", "fixed_noise"):
        raise ConfigError("sigma sweeps need a noise training mode", key="sweep.axis")
    if mode in ("smoothing", "fixed_noise") and axis not in ("sigma", "width", "dimension"):
        raise ConfigError("noise modes sweep sigma (or width/dimension)", key="training.mode")
    if axis == "epsilon" and mode != "adversarial":
        raise ConfigError("epsilon sweeps need adversarial training", key="sweep.axis")
    if axis == "width" and model["kind"] != "mlp":
        raise ConfigError("width sweeps need an MLP model", key="sweep.axis")

    est = cfg["estimation"]
    if est["loss"] not in ("squared", "cross_entropy", "logistic"):
        raise ConfigError(f"estimation.loss must be squared|cross_entropy|logistic, "
                          f"got {est['loss']!r}", key="estimation.loss")
    if model["kind"] == "linear" and est["loss"] != "logistic":
        raise ConfigError("linear models use the logistic decomposition", key="estimation.loss")
    if model["kind"] == "mlp" and est["loss"] == "logistic":
        raise ConfigError("the logistic decomposition applies to linear models",
                          key="estimation.loss")
    if int(est["splits"]) < 2:
        raise ConfigError("estimation.splits must be >= 2", key="estimation.splits")
    if int(est["repetitions"]) < 1:
        raise ConfigError("estimation.repetitions must be >= 1", key="estimation.repetitions")
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def provenance_hash(cfg: dict) -> str:
    payload = canonical_json(cfg) + "|" + __version__
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# presets (the named experimental setups)
# ---------------------------------------------------------------------------


def _grid(lo: float, hi: float, count: int) -> list:
    return [round(v, 10) for v in np.linspace(lo, hi, count)]


def preset_configs() -> dict:
    """The six named configurations; grids span the relevant robust
    interpolation thresholds at desk scale."""
    mlp_training = {
        "mode": "adversarial", "optimizer": "adam", "lr": 1e-3, "epochs": 2000,
        "batch_size": 128, "norm": "linf", "pgd_steps": 10, "pgd_step_frac": 0.4,
    }
    presets = {
        "mog-logistic": {
            "name": "mog-logistic",
            "seed": 20240801,
            "dataset": {"kind": "mog", "n": 100, "d": 100, "sigma": 0.7},
            "model": {"kind": "linear"},
            "training": {"mode": "adversarial", "optimizer": "full_batch_gd",
                         "norm": "l2", "max_iters": 2000},
            "sweep": {"axis": "epsilon", "grid": _grid(0.0, 1.6, 16)},
            "estimation": {"loss": "logistic", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/mog-logistic"},
        },
        "planted-logistic": {
            "name": "planted-logistic",
            "seed": 20240802,
            "dataset": {"kind": "planted", "n": 150, "d": 100},
            "model": {"kind": "linear"},
            "training": {"mode": "adversarial", "optimizer": "full_batch_gd",
                         "norm": "l2", "max_iters": 2000},
            "sweep": {"axis": "epsilon", "grid": _grid(0.0, 2.0, 16)},
            "estimation": {"loss": "logistic", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/planted-logistic"},
        },
        "box-2d": {
            "name": "box-2d",
            "seed": 20240803,
            "dataset": {"kind": "box", "n": 20, "d": 2, "gamma": 0.25},
            "model": {"kind": "mlp", "hidden": [100, 100, 100], "activation": "tanh",
                      "train_loss": "cross_entropy"},
            "training": dict(mlp_training),
            "sweep": {"axis": "epsilon", "grid": _grid(0.0, 0.5, 9)},
            "estimation": {"loss": "squared", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/box-2d"},
        },
        "box-highd": {
            "name": "box-highd",
            "seed": 20240804,
            "dataset": {"kind": "box", "n": 200, "d": 20, "gamma": 0.25},
            "model": {"kind": "mlp", "hidden": [100, 100, 100], "activation": "tanh",
                      "train_loss": "cross_entropy"},
            "training": dict(mlp_training),
            "sweep": {"axis": "epsilon", "grid": _grid(0.0, 0.8, 9)},
            "estimation": {"loss": "squared", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/box-highd"},
        },
        "smoothing": {
            "name": "smoothing",
            "seed": 20240805,
            "dataset": {"kind": "box", "n": 200, "d": 20, "gamma": 0.25},
            "model": {"kind": "mlp", "hidden": [100, 100, 100], "activation": "tanh",
                      "train_loss": "cross_entropy"},
            "training": {"mode": "smoothing", "optimizer": "adam", "lr": 1e-3,
                         "epochs": 2000, "batch_size": 128},
            "sweep": {"axis": "sigma", "grid": [k * 0.125 for k in range(9)]},
            "estimation": {"loss": "squared", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/smoothing"},
        },
        "fixed-noise": {
            "name": "fixed-noise",
            "seed": 20240806,
            "dataset": {"kind": "box", "n": 200, "d": 20, "gamma": 0.25},
            "model": {"kind": "mlp", "hidden": [100, 100, 100], "activation": "tanh",
                      "train_loss": "cross_entropy"},
            "training": {"mode": "fixed_noise", "optimizer": "adam", "lr": 1e-3,
                         "epochs": 2000, "batch_size": 128},
            "sweep": {"axis": "sigma", "grid": [k * 0.125 for k in range(9)]},
            "estimation": {"loss": "squared", "repetitions": 30, "splits": 2,
                           "test_size": 10000},
            "output": {"dir": "out/fixed-noise"},
        },
    }
    return {name: validate_config(cfg) for name, cfg in presets.items()}


# ---------------------------------------------------------------------------
# sweep execution
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    config: dict
    points: list
    threshold: float | None
    provenance: dict

    @property
    def grid(self) -> list:
        return [p.sweep_param for p in self.points]


def _build_dataset(cfg: dict, grid_index: int | None, value: float | None) -> Dataset:
    ds = cfg["dataset"]
    seed = Rng(cfg["seed"]).derive_seed("data") if grid_index is None else \
        Rng(cfg["seed"]).derive_seed("data", grid_index)
    d = int(ds["d"]) if value is None else int(value)
    n = int(ds.get("n", 0))
    if "n_per_dim" in ds:
        n = int(ds["n_per_dim"]) * d
    if ds["kind"] == "mog":
        return sample_mog(n, d, float(ds["sigma"]), seed)
    if ds["kind"] == "planted":
        return sample_planted(n, d, seed)
    return sample_box(n, d, float(ds["gamma"]), seed)


def _build_test_set(cfg: dict, grid_index: int | None, value: float | None) -> Dataset:
    ds = cfg["dataset"]
    seed = Rng(cfg["seed"]).derive_seed("test") if grid_index is None else \
        Rng(cfg["seed"]).derive_seed("test", grid_index)
    d = int(ds["d"]) if value is None else int(value)
    n = int(cfg["estimation"]["test_size"])
    if ds["kind"] == "mog":
        return sample_mog(n, d, float(ds["sigma"]), seed)
    if ds["kind"] == "planted":
        return sample_planted(n, d, seed)
    return sample_box(n, d, float(ds["gamma"]), seed)


def _point_params(cfg: dict, grid_index: int, value: float):
    """Resolve (epsilon, sigma, hidden, dimension-value) for one grid point."""
    axis = cfg["sweep"]["axis"]
    tr = cfg["training"]
    epsilon = float(tr["epsilon"])
    sigma = float(tr["sigma"])
    hidden = tuple(int(h) for h in cfg["model"]["hidden"])
    dim_value = None
    if axis == "epsilon":
        epsilon = value
    elif axis == "sigma":
        sigma = value
    elif axis == "width":
        hidden = tuple([int(value)] * len(hidden))
    elif axis == "dimension":
        dim_value = value
    return epsilon, sigma, hidden, dim_value


def _train_config(cfg: dict, epsilon: float, sigma: float, seed: int) -> TrainConfig:
    tr = cfg["training"]
    mode = tr["mode"]
    pset = pgd = None
    if mode == "adversarial":
        pset = PerturbationSet(tr["norm"], epsilon)
        if epsilon > 0:
            pgd = PgdConfig(
                steps=int(tr["pgd_steps"]),
                step_size=float(tr["pgd_step_frac"]) * epsilon,
                random_start=bool(tr["pgd_random_start"]),
                clip_to_domain=bool(tr["clip_to_domain"]),
            )
    return TrainConfig(
        mode=mode,
        optimizer=tr["optimizer"],
        lr=float(tr["lr"]),
        momentum=float(tr["momentum"]),
        weight_decay=float(tr["weight_decay"]),
        epochs=int(tr["epochs"]),
        batch_size=int(tr["batch_size"]),
        pgd=pgd,
        pset=pset,
        sigma=sigma,
        seed=seed,
        grad_tol=float(tr["grad_tol"]),
        max_iters=int(tr["max_iters"]),
        lr_decay_epochs=tuple(int(e) for e in tr["lr_decay_epochs"]),
        lr_decay_factor=float(tr["lr_decay_factor"]),
    )


def _eval_pgd(cfg: dict, epsilon: float) -> PgdConfig | None:
    est = cfg["estimation"]
    if epsilon <= 0:
        return None
    return PgdConfig(
        steps=int(est["eval_pgd_steps"]),
        step_size=float(est["eval_pgd_step_frac"]) * epsilon,
        random_start=False,
        clip_to_domain=bool(cfg["training"]["clip_to_domain"]),
    )


def compute_point(cfg: dict, grid_index: int) -> dict:
    """Train the split ensemble at one grid value and decompose. Returns the
    row dict that lands in the CSV plus per-repetition replicates."""
    value = cfg["sweep"]["grid"][grid_index]
    axis = cfg["sweep"]["axis"]
    epsilon, sigma, hidden, dim_value = _point_params(cfg, grid_index, value)
    per_point_data = axis == "dimension"
    data_gi = grid_index if per_point_data else None
    dataset = _build_dataset(cfg, data_gi, dim_value)
    test_set = _build_test_set(cfg, data_gi, dim_value)
    est = cfg["estimation"]
    K, N = int(est["repetitions"]), int(est["splits"])
    plan_seed = Rng(cfg["seed"]).derive_seed("splits") if not per_point_data else \
        Rng(cfg["seed"]).derive_seed("splits", grid_index)
    plan = make_split_plan(dataset.n, K, N, plan_seed)

    mode = cfg["training"]["mode"]
    if mode == "fixed_noise" and sigma > 0:
        # one fixed noise draw shared by the whole ensemble at this grid value
        noisy = add_fixed_gaussian_noise(
            dataset, sigma, Rng(cfg["seed"]).derive_seed("fixed_noise", grid_index)
        )
        train_mode_cfg_mode = "standard"
        train_data = noisy
    else:
        train_mode_cfg_mode = mode
        train_data = dataset

    spec = ModelSpec(
        kind=cfg["model"]["kind"],
        hidden=hidden,
        activation=cfg["model"]["activation"],
        train_loss=cfg["model"]["train_loss"],
    )
    master = Rng(cfg["seed"])
    jobs = []  # (k, j, subset, seed)
    for k in range(K):
        for j in range(N):
            subset = train_data.subset(plan.part(k, j))
            jobs.append((k, j, subset, master.derive_seed("job", grid_index, k, j)))

    # lockstep groups need equal subset sizes; near-equal splits give <= 2 sizes
    by_size: dict = {}
    for job in jobs:
        by_size.setdefault(job[2].n, []).append(job)
    trained: dict = {}
    for size_jobs in by_size.values():
        cfg_train = dataclasses.replace(
            _train_config(cfg, epsilon, sigma, seed=0), mode=train_mode_cfg_mode
        )
        results = train_ensemble(
            spec,
            [job[2] for job in size_jobs],
            cfg_train,
            [job[3] for job in size_jobs],
        )
        for job, res in zip(size_jobs, results):
            trained[(job[0], job[1])] = res

    ensemble = [[trained[(k, j)] for j in range(N)] for k in range(K)]
    models = [[tm.model for tm in row] for row in ensemble]

    # error measurements
    eval_pgd = _eval_pgd(cfg, epsilon)
    robust_errs = []
    std_errs = []
    test_errs = []
    pset_eval = PerturbationSet(cfg["training"]["norm"], epsilon) if mode == "adversarial" else None
    for k in range(K):
        for j in range(N):
            tm = trained[(k, j)]
            if mode == "adversarial" and epsilon > 0 and spec.kind == "mlp":
                subset = train_data.subset(plan.part(k, j))
                robust_errs.append(
                    robust_train_error(tm.model, subset, pset_eval, eval_pgd, spec.train_loss)
                )
            else:
                robust_errs.append(tm.robust_train_error)
            std_errs.append(tm.std_train_error)
            test_errs.append(classification_error(tm.model, test_set))

    # decomposition: one estimate per repetition (each repetition's N split
    # models form one ensemble), averaged over the K repetitions
    loss_kind = est["loss"]
    adversarial_eval = bool(est["adversarial_eval"])
    per_rep = {"bias": [], "variance": [], "risk": []}
    if loss_kind == "logistic":
        eval_eps = epsilon if adversarial_eval else 0.0
        for k in range(K):
            tk = np.stack([trained[(k, j)].model.theta for j in range(N)])
            b_k, v_k, r_k = bv_logistic(tk, test_set, eval_eps)
            per_rep["bias"].append(b_k)
            per_rep["variance"].append(v_k)
            per_rep["risk"].append(r_k)
    else:
        attack = None
        if adversarial_eval and epsilon > 0 and mode == "adversarial":
            attack = (pset_eval, eval_pgd)
        tensor = build_prediction_tensor(
            models, test_set, attack=attack, loss_kind=loss_kind, keep_perturbations=False
        )
        decompose = bv_squared if loss_kind == "squared" else bv_cross_entropy
        for k in range(K):
            b_k, v_k, r_k = decompose(tensor.repetition(k))
            per_rep["bias"].append(b_k)
            per_rep["variance"].append(v_k)
            per_rep["risk"].append(r_k)
    bias = float(np.mean(per_rep["bias"]))
    variance = float(np.mean(per_rep["variance"]))
    risk = float(np.mean(per_rep["risk"]))

    def _stderr(vals):
        arr = np.asarray(vals)
        if arr.size < 2:
            return float("nan")
        return float(arr.std(ddof=1) / np.sqrt(arr.size))

    point = BVPoint(
        sweep_param=value,
        bias=bias,
        variance=variance,
        risk=risk,
        robust_train_error=float(np.mean(robust_errs)),
        std_train_error=float(np.mean(std_errs)),
        std_test_error=float(np.mean(test_errs)),
        n_models=K * N,
        stderr_bias=_stderr(per_rep["bias"]),
        stderr_variance=_stderr(per_rep["variance"]),
        loss_kind=loss_kind,
        per_rep=per_rep,
    )
    point.validate()
    return _point_to_row(point)


def _point_to_row(point: BVPoint) -> dict:
    return {
        "sweep_param": point.sweep_param,
        "bias": point.bias,
        "variance": point.variance,
        "risk": point.risk,
        "robust_train_error": point.robust_train_error,
        "std_train_error": point.std_train_error,
        "std_test_error": point.std_test_error,
        "n_models": point.n_models,
        "stderr_bias": point.stderr_bias,
        "stderr_variance": point.stderr_variance,
        "loss_kind": point.loss_kind,
        "per_rep": point.per_rep,
    }


def _row_to_point(row: dict) -> BVPoint:
    return BVPoint(
        sweep_param=row["sweep_param"],
        bias=row["bias"],
        variance=row["variance"],
        risk=row["risk"],
        robust_train_error=row["robust_train_error"],
        std_train_error=row["std_train_error"],
        std_test_error=row["std_test_error"],
        n_models=row["n_models"],
        stderr_bias=row["stderr_bias"],
        stderr_variance=row["stderr_variance"],
        loss_kind=row.get("loss_kind", "squared"),
        per_rep=row.get("per_rep"),
    )


def _worker(args):
    cfg_json, grid_index = args
    cfg = json.loads(cfg_json)
    try:
        return grid_index, compute_point(cfg, grid_index)
    except Exception as exc:  # noqa: BLE001 - failure rows keep the sweep alive
        nan = float("nan")
        return grid_index, {
            "sweep_param": cfg["sweep"]["grid"][grid_index],
            "bias": nan, "variance": nan, "risk": nan,
            "robust_train_error": nan, "std_train_error": nan, "std_test_error": nan,
            "n_models": 0, "stderr_bias": nan, "stderr_variance": nan,
            "loss_kind": cfg["estimation"]["loss"], "per_rep": None,
            "error": f"{type(exc).__name__}: {exc}",
        }


def resolve_threads(cli_threads: int | None, cfg: dict) -> int:
    if cli_threads is not None:
        return max(1, int(cli_threads))
    if cfg.get("threads"):
        return max(1, int(cfg["threads"]))
    env = os.environ.get("ADVBV_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"ADVBV_THREADS must be an integer, got {env!r}") from exc
    return max(1, os.cpu_count() or 1)


def run_sweep(
    cfg: dict,
    out_dir=None,
    seed_override: int | None = None,
    threads: int | None = None,
    quiet: bool = True,
) -> SweepResult:
    """Run (or resume) a sweep and write CSV, SVG and provenance artifacts."""
    cfg = validate_config(cfg)
    seed_overridden = seed_override is not None
    if seed_overridden:
        cfg["seed"] = int(seed_override)
    out = Path(out_dir) if out_dir is not None else Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    points_dir = out / "points"
    points_dir.mkdir(exist_ok=True)
    n_threads = resolve_threads(threads, cfg)
    phash = provenance_hash(cfg)

    grid = cfg["sweep"]["grid"]
    rows: dict = {}
    pending = []
    for gi in range(len(grid)):
        row_path = points_dir / f"point_{gi:04d}.json"
        if row_path.exists():
            with open(row_path, "r", encoding="utf-8") as fh:
                stored = json.load(fh)
            if stored.get("hash") == phash:
                rows[gi] = stored["row"]
                continue
        pending.append(gi)

    cfg_json = canonical_json(cfg)
    if pending:
        if n_threads > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=n_threads) as pool:
                for gi, row in pool.map(_worker, [(cfg_json, gi) for gi in pending]):
                    rows[gi] = row
                    _store_row(points_dir, gi, phash, row)
                    if not quiet:
                        print(f"[advbv] point {gi} done ({row.get('error', 'ok')})")
        else:
            for gi in pending:
                gi, row = _worker((cfg_json, gi))
                rows[gi] = row
                _store_row(points_dir, gi, phash, row)
                if not quiet:
                    print(f"[advbv] point {gi} done ({row.get('error', 'ok')})")

    points = [_row_to_point(rows[gi]) for gi in range(len(grid))]
    curve = [(p.sweep_param, p.robust_train_error) for p in points
             if np.isfinite(p.robust_train_error)]
    threshold = interpolation_threshold(curve) if curve else None

    provenance = {
        "config": cfg,
        "seed": cfg["seed"],
        "seed_overridden": seed_overridden,
        "code_version": __version__,
        "hash": phash,
        "threshold": threshold,
        "threads": n_threads,
    }
    result = SweepResult(config=cfg, points=points, threshold=threshold, provenance=provenance)
    emit_csv(result, out / "sweep.csv")
    if any(not p.failed for p in points):
        emit_plot(result, out / "sweep.svg")
    with open(out / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _store_row(points_dir: Path, gi: int, phash: str, row: dict) -> None:
    with open(points_dir / f"point_{gi:04d}.json", "w", encoding="utf-8") as fh:
        json.dump({"hash": phash, "grid_index": gi, "row": row}, fh, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _f17(v) -> str:
    return f"{float(v):.17g}"


def emit_csv(result: SweepResult, path) -> None:
    """Rows in grid order, 17 significant digits, fixed header."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for p in result.points:
            fields = [
                _f17(p.sweep_param), _f17(p.bias), _f17(p.variance), _f17(p.risk),
                _f17(p.robust_train_error), _f17(p.std_train_error),
                _f17(p.std_test_error), str(int(p.n_models)),
                _f17(p.stderr_bias), _f17(p.stderr_variance),
            ]
            fh.write(",".join(fields) + "\n")


def parse_csv(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}")
        cols = header.split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    out = {c: [] for c in cols}
    for row in rows:
        for c, v in zip(cols, row):
            out[c].append(int(v) if c == "n_models" else float(v))
    return {c: np.asarray(v) for c, v in out.items()}


def emit_plot(result: SweepResult, path) -> None:
    ok = [p for p in result.points if not p.failed]
    if not ok:
        raise ValueError("no successful points to plot")
    x = np.array([p.sweep_param for p in ok])
    series = {
        "bias": np.array([p.bias for p in ok]),
        "variance": np.array([p.variance for p in ok]),
        "risk": np.array([p.risk for p in ok]),
    }
    axis = result.config["sweep"]["axis"]
    render_curves(
        path,
        x,
        series,
        threshold=result.threshold,
        xlabel=axis,
        ylabel="loss decomposition",
        title=result.config.get("name", "sweep"),
    )
