"""Experiment configuration, seed orchestration, and persistence.

Configs are JSON dicts with strict unknown-key rejection (a typo in a
hyperparameter name is an error, never a silent default). Every output
embeds the config digest, the seed, and the PRNG identifier; re-running a
config produces byte-identical summaries. Trajectory CSVs use the fixed
column order ``step,loss,grad_norm_sq[,test_error]``.

Comparative experiments (label-noise robustness, the beta0 sweep, the
lr x weight-decay grid) report seed-majority directional outcomes rather
than point values: at desk scale only the direction of the effect is
reproducible, so each comparison counts per-seed wins on paired runs that
share data, initialization, and minibatch sequence.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    RNG_ALGORITHM,
    DivergenceError,
    NonFiniteError,
    RngStream,
    Trajectory,
    config_digest,
)
from .optim import Optimizer, WeightDecay, make_optimizer
from .problems import (
    AdditiveNoiseOracle,
    FiniteDataset,
    LabelNoiseSpec,
    LinearRegressionProblem,
    QuadraticModel,
    RosenbrockProblem,
    TinyMlpProblem,
    apply_label_noise,
    load_csv_dataset,
    make_two_moons,
)


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def check_config_keys(d: dict, allowed: set[str], context: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {sorted(unknown)}")


def _weight_decay_from(cfg: Optional[dict]) -> WeightDecay:
    if cfg is None:
        return WeightDecay()
    check_config_keys(cfg, {"mode", "lam"}, "weight_decay")
    try:
        return WeightDecay(cfg.get("mode", "none"), float(cfg.get("lam", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


_OPTIMIZER_KEYS = {
    "name", "lr", "beta0", "beta1", "beta2", "beta3", "eps", "amsgrad",
    "weight_decay",
}


def build_optimizer(cfg: dict, dim: int) -> Optimizer:
    check_config_keys(cfg, _OPTIMIZER_KEYS, "optimizer")
    if "name" not in cfg or "lr" not in cfg:
        raise ConfigError("optimizer config needs 'name' and 'lr'")
    kwargs = {k: v for k, v in cfg.items() if k not in ("name", "weight_decay")}
    kwargs["weight_decay"] = _weight_decay_from(cfg.get("weight_decay"))
    try:
        return make_optimizer(cfg["name"], dim=dim, **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad optimizer config: {exc}") from exc


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

@dataclass
class ClassificationTask:
    """A train/test split with the clean-label bookkeeping the label-noise
    protocol needs: corruption applies to training labels only."""

    problem: TinyMlpProblem
    train: FiniteDataset
    test: FiniteDataset
    clean_train: FiniteDataset
    corrupted_mask: np.ndarray
    theta0: np.ndarray


def _split(dataset: FiniteDataset, test_fraction: float, rng: RngStream):
    n = dataset.n_samples
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise ConfigError("test_fraction must leave both splits nonempty")
    perm = rng.permutation(n)
    return dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])


def build_classification_task(cfg: dict, seed: int) -> ClassificationTask:
    """Materialize a dataset + MLP task for one seed.

    Stream layout: spawn(0) generates the data, spawn(1) corrupts labels,
    spawn(2) initializes weights, spawn(4) draws the train/test split.
    The training loop owns spawn(3); distinct keys keep every source of
    randomness independent.
    """
    check_config_keys(cfg, {
        "name", "n", "noise", "hidden", "test_fraction", "label_noise",
        "init_scale", "csv_path",
    }, "problem")
    root = RngStream(seed)
    name = cfg["name"]
    if name == "two_moons_mlp":
        data = make_two_moons(int(cfg.get("n", 2000)), float(cfg.get("noise", 0.2)),
                              root.spawn(0))
    elif name == "csv_mlp":
        if "csv_path" not in cfg:
            raise ConfigError("csv_mlp needs 'csv_path'")
        data = load_csv_dataset(cfg["csv_path"], classification=True)
        data = data.subset(root.spawn(0).permutation(data.n_samples))
    else:
        raise ConfigError(f"not a classification problem: {name!r}")
    train, test = _split(data, float(cfg.get("test_fraction", 0.5)), root.spawn(4))
    clean_train = train
    mask = np.zeros(train.n_samples, dtype=bool)
    ln = cfg.get("label_noise")
    if ln is not None:
        check_config_keys(ln, {"kind", "rate"}, "label_noise")
        spec = LabelNoiseSpec(ln.get("kind", "symmetric"), float(ln.get("rate", 0.0)))
        train, mask = apply_label_noise(train, spec, root.spawn(1))
    problem = TinyMlpProblem(train, hidden=int(cfg.get("hidden", 16)))
    theta0 = problem.init_params(root.spawn(2), scale=float(cfg.get("init_scale", 0.5)))
    return ClassificationTask(problem, train, test, clean_train, mask, theta0)


def build_analytic_oracle(cfg: dict, seed: int):
    """Quadratic / Rosenbrock oracles with optional additive noise."""
    check_config_keys(cfg, {
        "name", "dim", "eigenvalues", "theta_star", "f0", "noise_sigma2", "theta0",
    }, "problem")
    name = cfg["name"]
    if name == "quadratic":
        eigs = cfg.get("eigenvalues")
        dim = int(cfg.get("dim", len(eigs) if eigs else 2))
        eigs = np.asarray(eigs if eigs is not None else np.ones(dim), dtype=np.float64)
        theta_star = np.asarray(cfg.get("theta_star", np.zeros(dim)), dtype=np.float64)
        base = QuadraticModel(theta_star, np.diag(eigs), float(cfg.get("f0", 0.0)))
        theta0 = np.asarray(cfg.get("theta0", np.ones(dim)), dtype=np.float64)
    elif name == "rosenbrock":
        base = RosenbrockProblem()
        theta0 = np.asarray(cfg.get("theta0", [-1.2, 1.0]), dtype=np.float64)
    elif name == "linear_regression":
        root = RngStream(seed).spawn(0)
        dim = int(cfg.get("dim", 5))
        n = int(cfg.get("n", 200))
        X = root.standard_normal((n, dim))
        w = root.standard_normal(dim)
        y = X @ w + 0.1 * root.standard_normal(n)
        base = LinearRegressionProblem(FiniteDataset(X, y))
        theta0 = np.asarray(cfg.get("theta0", np.zeros(dim)), dtype=np.float64)
    else:
        raise ConfigError(f"unknown problem {name!r}")
    sigma2 = float(cfg.get("noise_sigma2", 0.0))
    oracle = AdditiveNoiseOracle(base, sigma2) if sigma2 > 0 else base
    return oracle, theta0


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """Per-seed outcome. ``wall_clock`` is informational and excluded from
    the summary files so reruns stay byte-identical."""

    config_digest: str
    seed: int
    final_loss: float
    min_grad_norm_sq: float
    final_test_error: Optional[float] = None
    best_test_error: Optional[float] = None
    final_corrupted_train_error: Optional[float] = None
    final_clean_train_error: Optional[float] = None
    prng: str = RNG_ALGORITHM
    wall_clock: float = 0.0
    trajectory: Optional[Trajectory] = None

    def summary_fields(self) -> dict:
        out = {
            "seed": self.seed,
            "final_loss": self.final_loss,
            "min_grad_norm_sq": self.min_grad_norm_sq,
        }
        for key in ("final_test_error", "best_test_error",
                    "final_corrupted_train_error", "final_clean_train_error"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


_RUN_KEYS = {
    "problem", "optimizer", "steps", "batch_size", "seeds", "eval_every",
    "snapshots", "lr_decay",
}


def _decay_schedule(cfg: dict) -> tuple[set[int], float]:
    """Piecewise-constant decay: multiply lr by ``factor`` at each milestone."""
    decay = cfg.get("lr_decay")
    if decay is None:
        return set(), 1.0
    check_config_keys(decay, {"milestones", "factor"}, "lr_decay")
    return {int(m) for m in decay.get("milestones", [])}, float(decay.get("factor", 0.1))


_CLASSIFICATION_PROBLEMS = ("two_moons_mlp", "csv_mlp")


def validate_run_config(cfg: dict) -> None:
    check_config_keys(cfg, _RUN_KEYS, "config")
    for key in ("problem", "optimizer", "steps", "seeds"):
        if key not in cfg:
            raise ConfigError(f"config needs '{key}'")
    if not isinstance(cfg["seeds"], list) or not cfg["seeds"]:
        raise ConfigError("'seeds' must be a nonempty list of integers")
    if "name" not in cfg["problem"]:
        raise ConfigError("problem config needs 'name'")


def _run_classification_seed(cfg: dict, seed: int, digest: str,
                             snapshots: bool) -> RunResult:
    t0 = time.perf_counter()
    task = build_classification_task(cfg["problem"], seed)
    problem = task.problem
    opt = build_optimizer(cfg["optimizer"], problem.dim)
    steps = int(cfg["steps"])
    batch_size = int(cfg.get("batch_size", min(128, problem.dataset_size)))
    eval_every = int(cfg.get("eval_every", max(1, steps // 50)))
    batch_rng = RngStream(seed).spawn(3)

    theta = task.theta0.copy()
    traj = Trajectory(seed=seed, config_digest=digest, keep_snapshots=snapshots)
    clean_idx = np.flatnonzero(~task.corrupted_mask)
    best_test = math.inf
    min_gsq = math.inf

    def evaluate(step: int) -> float:
        nonlocal min_gsq
        loss, grad = problem.full_gradient(theta)
        gsq = float(grad @ grad)
        min_gsq = min(min_gsq, gsq)
        test_err = problem.error_rate(theta, task.test)
        traj.append(step, loss, gsq, theta if snapshots else None, test_error=test_err)
        return test_err

    milestones, factor = _decay_schedule(cfg)
    evaluate(0)
    for step in range(1, steps + 1):
        if step in milestones:
            opt.lr *= factor
        sample = problem.minibatch_gradient(theta, batch_size, batch_rng)
        theta = opt.step(theta, sample)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"parameters became non-finite at step {step}")
        if step % eval_every == 0 or step == steps:
            best_test = min(best_test, evaluate(step))

    final_loss, final_grad = problem.full_gradient(theta)
    final_test = problem.error_rate(theta, task.test)
    corrupted_train = problem.error_rate(theta, task.train)
    if clean_idx.size:
        clean_subset = task.clean_train.subset(clean_idx)
        clean_train = problem.error_rate(theta, clean_subset)
    else:
        clean_train = corrupted_train
    return RunResult(
        config_digest=digest,
        seed=seed,
        final_loss=final_loss,
        min_grad_norm_sq=min(min_gsq, float(final_grad @ final_grad)),
        final_test_error=final_test,
        best_test_error=min(best_test, final_test),
        final_corrupted_train_error=corrupted_train,
        final_clean_train_error=clean_train,
        wall_clock=time.perf_counter() - t0,
        trajectory=traj,
    )


def _run_analytic_seed(cfg: dict, seed: int, digest: str,
                       snapshots: bool) -> RunResult:
    t0 = time.perf_counter()
    oracle, theta0 = build_analytic_oracle(cfg["problem"], seed)
    opt = build_optimizer(cfg["optimizer"], theta0.shape[0])
    steps = int(cfg["steps"])
    eval_every = int(cfg.get("eval_every", max(1, steps // 100)))
    rng = RngStream(seed).spawn(3)
    theta = theta0.copy()
    traj = Trajectory(seed=seed, config_digest=digest, keep_snapshots=snapshots)
    min_gsq = math.inf

    def evaluate(step: int) -> None:
        nonlocal min_gsq
        loss, grad = oracle.full_gradient(theta)
        gsq = float(grad @ grad)
        min_gsq = min(min_gsq, gsq)
        traj.append(step, loss, gsq, theta if snapshots else None)

    milestones, factor = _decay_schedule(cfg)
    evaluate(0)
    for step in range(1, steps + 1):
        if step in milestones:
            opt.lr *= factor
        sample = oracle.stochastic_gradient(theta, rng)
        theta = opt.step(theta, sample)
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 1e10:
            raise DivergenceError(f"run diverged at step {step}")
        if step % eval_every == 0 or step == steps:
            evaluate(step)

    final_loss, _ = oracle.full_gradient(theta)
    return RunResult(
        config_digest=digest,
        seed=seed,
        final_loss=final_loss,
        min_grad_norm_sq=min_gsq,
        wall_clock=time.perf_counter() - t0,
        trajectory=traj,
    )


def run_seed(cfg: dict, seed: int, digest: str, snapshots: bool = False) -> RunResult:
    if cfg["problem"]["name"] in _CLASSIFICATION_PROBLEMS:
        return _run_classification_seed(cfg, seed, digest, snapshots)
    return _run_analytic_seed(cfg, seed, digest, snapshots)


def aggregate(values) -> dict:
    """Mean and population standard deviation, the reporting convention
    for all multi-seed tables."""
    arr = np.asarray(list(values), dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def run(cfg: dict, out_dir: Optional[Path] = None, threads: int = 1,
        snapshots: bool = False) -> dict:
    """Execute one config over its seeds; returns (and writes) a summary.

    Seeds may run on a thread pool; results are ordered by position in
    the seed list before any output is written, so parallelism never
    changes a byte of output.
    """
    validate_run_config(cfg)
    digest = config_digest(cfg)
    seeds = [int(s) for s in cfg["seeds"]]
    snapshots = snapshots or bool(cfg.get("snapshots", False))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda s: run_seed(cfg, s, digest, snapshots), seeds))
    else:
        results = [run_seed(cfg, s, digest, snapshots) for s in seeds]

    summary = {
        "config": cfg,
        "config_digest": digest,
        "prng": RNG_ALGORITHM,
        "results": [r.summary_fields() for r in results],
    }
    metrics = {}
    metrics["final_loss"] = aggregate(r.final_loss for r in results)
    if results[0].final_test_error is not None:
        metrics["final_test_error"] = aggregate(r.final_test_error for r in results)
        metrics["best_test_error"] = aggregate(r.best_test_error for r in results)
    summary["aggregate"] = metrics

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            write_trajectory_csv(out_dir / f"trajectory_{digest}_seed{r.seed}.csv", r)
        write_json(out_dir / f"summary_{digest}.json", summary)
    return summary


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_trajectory_csv(path: Path, result: RunResult) -> None:
    traj = result.trajectory
    has_test = any(rec.test_error is not None for rec in traj.records)
    lines = [f"# config_digest={result.config_digest} seed={result.seed} prng={result.prng}"]
    header = "step,loss,grad_norm_sq" + (",test_error" if has_test else "")
    lines.append(header)
    for rec in traj.records:
        row = f"{rec.step},{rec.loss!r},{rec.grad_norm_sq!r}"
        if has_test:
            err = rec.test_error if rec.test_error is not None else float("nan")
            row += f",{err!r}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Comparative experiments
# ---------------------------------------------------------------------------

def seed_majority_wins(errors_a, errors_b) -> dict:
    """Count per-seed pairwise wins of A over B (lower error wins)."""
    a = np.asarray(list(errors_a), dtype=np.float64)
    b = np.asarray(list(errors_b), dtype=np.float64)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    return {"wins": wins, "losses": losses, "ties": int(a.size - wins - losses),
            "majority": wins > losses}


def _with_optimizer(cfg: dict, opt_cfg: dict) -> dict:
    new = dict(cfg)
    new["optimizer"] = opt_cfg
    return new


def label_noise_experiment(cfg: dict, optimizer_a: dict, optimizer_b: dict,
                           out_dir: Optional[Path] = None, threads: int = 1) -> dict:
    """Paired comparison of two optimizers on a label-corrupted task.

    Both optimizers see identical data, corruption, initialization, and
    minibatch sequences within each seed. Reports final clean-test error,
    corrupted-train error, and clean-subset train error per seed, plus the
    seed-majority outcome for A beating B on clean test error.
    """
    cfg_a = _with_optimizer(cfg, optimizer_a)
    cfg_b = _with_optimizer(cfg, optimizer_b)
    summary_a = run(cfg_a, None, threads)
    summary_b = run(cfg_b, None, threads)
    errs_a = [r["final_test_error"] for r in summary_a["results"]]
    errs_b = [r["final_test_error"] for r in summary_b["results"]]
    rate = (cfg["problem"].get("label_noise") or {}).get("rate", 0.0)
    report = {
        "label_noise_rate": rate,
        "no_corruption": rate == 0.0,
        "optimizer_a": optimizer_a,
        "optimizer_b": optimizer_b,
        "per_seed": {
            "a": summary_a["results"],
            "b": summary_b["results"],
        },
        "aggregate": {
            "a": summary_a["aggregate"],
            "b": summary_b["aggregate"],
        },
        "test_error_comparison": seed_majority_wins(errs_a, errs_b),
        "config_digest": config_digest(cfg),
        "prng": RNG_ALGORITHM,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "label_noise_report.json", report)
    return report


def beta0_sweep(cfg: dict, beta0_grid, out_dir: Optional[Path] = None,
                threads: int = 1) -> dict:
    """Run the PNM config across a grid of beta0 values.

    The table carries mean/std test error per beta0; the flags record
    whether some beta0 > 0 beats every beta0 <= 0 by seed majority on the
    paired per-seed errors.
    """
    beta0_grid = [float(b) for b in beta0_grid]
    if not beta0_grid:
        raise ConfigError("beta0 grid must be nonempty")
    if cfg["optimizer"].get("name", "").lower() not in ("pnm", "adapnm"):
        raise ConfigError("beta0 sweep requires a pnm or adapnm optimizer")
    rows = []
    per_seed = {}
    for b0 in beta0_grid:
        opt_cfg = dict(cfg["optimizer"])
        opt_cfg["beta0"] = b0
        summary = run(_with_optimizer(cfg, opt_cfg), None, threads)
        errors = [r["final_test_error"] for r in summary["results"]]
        per_seed[b0] = errors
        rows.append({"beta0": b0, **aggregate(errors)})

    positive = [b for b in beta0_grid if b > 0]
    nonpositive = [b for b in beta0_grid if b <= 0]
    dominating = []
    for bp in positive:
        if all(seed_majority_wins(per_seed[bp], per_seed[bn])["majority"]
               for bn in nonpositive):
            dominating.append(bp)
    report = {
        "table": rows,
        "per_seed_errors": {str(k): v for k, v in per_seed.items()},
        "positive_beta0_dominates": bool(dominating) if nonpositive else False,
        "dominating_beta0": dominating,
        "config_digest": config_digest(cfg),
        "prng": RNG_ALGORITHM,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "beta0_sweep.json", report)
        lines = [
            f"# config_digest={report['config_digest']} prng={RNG_ALGORITHM}",
            "beta0,mean_test_error,std_test_error",
        ]
        for row in rows:
            lines.append(f"{row['beta0']!r},{row['mean']!r},{row['std']!r}")
        (out_dir / "beta0_sweep.csv").write_text("\n".join(lines) + "\n")
    return report


def lr_wd_grid(cfg: dict, lrs, lams, out_dir: Optional[Path] = None,
               threads: int = 1) -> dict:
    """Full-factorial learning-rate x weight-decay sweep.

    Diverging cells are marked, not reported as numbers.
    """
    lrs = [float(x) for x in lrs]
    lams = [float(x) for x in lams]
    if not lrs or not lams:
        raise ConfigError("grids must be nonempty")
    matrix = []
    for lr in lrs:
        row = []
        for lam in lams:
            opt_cfg = dict(cfg["optimizer"])
            opt_cfg["lr"] = lr
            wd = dict(opt_cfg.get("weight_decay") or {"mode": "decoupled"})
            wd["lam"] = lam
            opt_cfg["weight_decay"] = wd
            try:
                summary = run(_with_optimizer(cfg, opt_cfg), None, threads)
                agg = summary["aggregate"]
                metric = agg.get("final_test_error", agg["final_loss"])
                row.append(metric["mean"])
            except (DivergenceError, NonFiniteError):
                row.append("diverged")
        matrix.append(row)
    report = {
        "lrs": lrs,
        "lams": lams,
        "mean_test_error": matrix,
        "config_digest": config_digest(cfg),
        "prng": RNG_ALGORITHM,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "lr_wd_grid.json", report)
        lines = [
            f"# config_digest={report['config_digest']} prng={RNG_ALGORITHM}",
            "lr\\lam," + ",".join(repr(l) for l in lams),
        ]
        for lr, row in zip(lrs, matrix):
            lines.append(repr(lr) + "," + ",".join(
                c if isinstance(c, str) else repr(c) for c in row))
        (out_dir / "lr_wd_grid.csv").write_text("\n".join(lines) + "\n")
    return report
