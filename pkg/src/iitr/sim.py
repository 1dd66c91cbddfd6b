"""Synthetic benchmark with a planted two-variable optimal regime.

Covariates are i.i.d. standard normal. The propensity and the control
outcome are generalized linear models; the treatment effect is the quadratic

    tau(x) = (x1 + x2 - threshold) * (x1 + x2 + offset)

whose sign is that of ``x1 + x2 - threshold`` whenever ``x1 + x2 > -offset``,
so the optimal regime is linear although the effect is not.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .dataset import Dataset
from .losses import PenaltySpec
from .nuisance import ContrastEstimate
from .pipeline import PipelineConfig, predict, run_pipeline
from . import solvers

log = logging.getLogger(__name__)

BENCH_COLUMNS = ("rep", "value", "value_ratio", "ccr", "n_selected", "selected_x1",
                 "selected_x2", "false_positives", "converged")


def _sparse(p: int, entries: dict[int, float]) -> tuple[float, ...]:
    v = np.zeros(p)
    for j, c in entries.items():
        if j < p:
            v[j] = c
    return tuple(v)


@dataclass(frozen=True)
class DGPConfig:
    """Data-generating process; coefficient tuples have length ``p``.

    Defaults: ``logit e(x) = 0.3 x1 - 0.3 x3`` and
    ``mu0(x) = 1 + 0.5 x1 + 0.5 x3 - 0.5 x4``.
    """

    n: int = 3000
    p: int = 20
    seed: int = 0
    noise_sd: float = 1.0
    propensity_intercept: float = 0.0
    propensity_coef: tuple[float, ...] | None = None
    mu0_intercept: float = 1.0
    mu0_coef: tuple[float, ...] | None = None
    tau_threshold: float = 0.5
    tau_offset: float = 10.0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.propensity_coef is None:
            object.__setattr__(self, "propensity_coef", _sparse(self.p, {0: 0.3, 2: -0.3}))
        if self.mu0_coef is None:
            object.__setattr__(self, "mu0_coef", _sparse(self.p, {0: 0.5, 2: 0.5, 3: -0.5}))
        for name in ("propensity_coef", "mu0_coef"):
            v = tuple(float(c) for c in getattr(self, name))
            if len(v) != self.p:
                raise ValueError(f"{name} must have length p={self.p}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class Oracle:
    true_tau: np.ndarray
    true_propensity: np.ndarray
    true_mu0: np.ndarray
    true_mu1: np.ndarray
    optimal_assignment: np.ndarray

    def subset(self, idx) -> "Oracle":
        return Oracle(self.true_tau[idx], self.true_propensity[idx], self.true_mu0[idx],
                      self.true_mu1[idx], self.optimal_assignment[idx])


def true_effect(X, cfg: DGPConfig) -> np.ndarray:
    s = X[:, 0] + X[:, 1]
    return (s - cfg.tau_threshold) * (s + cfg.tau_offset)


def true_propensity(X, cfg: DGPConfig) -> np.ndarray:
    return expit(cfg.propensity_intercept + X @ np.asarray(cfg.propensity_coef))


def true_mu0(X, cfg: DGPConfig) -> np.ndarray:
    return cfg.mu0_intercept + X @ np.asarray(cfg.mu0_coef)


def generate(cfg: DGPConfig) -> tuple[Dataset, Oracle]:
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n, cfg.p))
    e = true_propensity(X, cfg)
    A = (rng.random(cfg.n) < e).astype(int)
    mu0 = true_mu0(X, cfg)
    tau = true_effect(X, cfg)
    Y = mu0 + A * tau + cfg.noise_sd * rng.standard_normal(cfg.n)
    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    oracle = Oracle(tau, e, mu0, mu0 + tau, (tau > 0).astype(int))
    return Dataset(X, A, Y, names), oracle


def true_value(policy_assignments, oracle: Oracle) -> float:
    d = np.asarray(policy_assignments, dtype=float)
    if d.shape != oracle.true_tau.shape:
        raise ValueError("assignments are not aligned with the oracle")
    return float(np.mean(d * oracle.true_mu1 + (1 - d) * oracle.true_mu0))


def ccr(policy_assignments, oracle: Oracle) -> float:
    d = np.asarray(policy_assignments)
    if d.shape != oracle.optimal_assignment.shape:
        raise ValueError("assignments are not aligned with the oracle")
    return float(np.mean(d == oracle.optimal_assignment))


def best_linear_value(data: Dataset, oracle: Oracle, cfg: DGPConfig,
                      solver: solvers.SolverConfig = solvers.SolverConfig()) -> float:
    """Oracle value of the best linear regime on ``data``.

    Takes the better of an unpenalized d.c. fit against the true effect and
    the planted boundary ``x1 + x2 > threshold``, which is linear.
    """
    X = np.column_stack([np.ones(data.n), data.covariates])
    contrast = ContrastEstimate.from_tau(oracle.true_tau)
    fit = solvers.dc_fit(X, contrast, PenaltySpec(), solvers.wls_seed(X, contrast), solver)
    fitted = true_value((X @ fit.eta > 0).astype(int), oracle)
    s = data.covariates[:, 0] + data.covariates[:, 1]
    planted = true_value((s > cfg.tau_threshold).astype(int), oracle)
    return max(fitted, planted)


def _one_rep(args) -> dict:
    rep, dgp, pcfg, n_train, n_eval = args
    seed = dgp.seed + rep
    data, oracle = generate(replace(dgp, n=n_train + n_eval, seed=seed))
    train = data.subset(np.arange(n_train))
    ev = np.arange(n_train, n_train + n_eval)
    eval_data, eval_oracle = data.subset(ev), oracle.subset(ev)
    try:
        policy, _, _ = run_pipeline(train, replace(pcfg, seed=seed))
    except Exception as exc:  # counted, not fatal
        log.error("replication %d failed: %s", rep, exc)
        return {"rep": rep, "failed": True, "error": str(exc)}
    d = predict(policy, eval_data.covariates)
    value = true_value(d, eval_oracle)
    best = best_linear_value(eval_data, eval_oracle, dgp, pcfg.solver)
    sel = set(policy.selected)
    return {
        "rep": rep,
        "failed": False,
        "value": value,
        "value_ratio": value / best,
        "ccr": ccr(d, eval_oracle),
        "n_selected": len(sel),
        "selected_x1": int(0 in sel),
        "selected_x2": int(1 in sel),
        "false_positives": len(sel - {0, 1}),
        "converged": int(policy.converged),
        "selected": sorted(sel),
    }


@dataclass
class BenchmarkResult:
    rows: list[dict]
    failures: list[dict]
    p: int
    elapsed: float = field(default=0.0, compare=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in self.rows:
            w.writerow([r["rep"], f"{r['value']:.12g}", f"{r['value_ratio']:.12g}",
                        f"{r['ccr']:.12g}", r["n_selected"], r["selected_x1"],
                        r["selected_x2"], r["false_positives"], r["converged"]])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"reps": len(self.rows) + len(self.failures), "failed": len(self.failures)}
        if not self.rows:
            return out
        for key in ("value", "value_ratio", "ccr", "n_selected", "false_positives"):
            v = np.array([r[key] for r in self.rows], dtype=float)
            out[key] = {"mean": round(float(v.mean()), 12),
                        "sd": round(float(v.std(ddof=1)), 12) if v.size > 1 else 0.0}
        freq = np.zeros(self.p)
        for r in self.rows:
            freq[r["selected"]] += 1
        freq /= len(self.rows)
        out["selection_frequency"] = {f"x{j + 1}": round(float(f), 12) for j, f in enumerate(freq)}
        out["converged_fraction"] = round(float(np.mean([r["converged"] for r in self.rows])), 12)
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def run_benchmark(reps: int, dgp: DGPConfig = DGPConfig(),
                  pipeline: PipelineConfig = PipelineConfig(prune_frac=0.01),
                  n_train: int = 3000, n_eval: int = 1000, n_jobs: int = 1) -> BenchmarkResult:
    """Repeat train-on-``n_train`` / evaluate-on-``n_eval`` with fresh samples.

    Replication ``r`` uses seed ``dgp.seed + r`` for both the data and the
    folds, so results do not depend on ``n_jobs``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    t0 = time.perf_counter()
    jobs = [(r, dgp, pipeline, n_train, n_eval) for r in range(reps)]
    if n_jobs == 1:
        results = [_one_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_one_rep, jobs))
    rows = [r for r in results if not r["failed"]]
    failures = [r for r in results if r["failed"]]
    return BenchmarkResult(rows, failures, dgp.p, time.perf_counter() - t0)


def dgp_to_dict(cfg: DGPConfig) -> dict:
    d = asdict(cfg)
    d["propensity_coef"] = list(cfg.propensity_coef)
    d["mu0_coef"] = list(cfg.mu0_coef)
    return d
