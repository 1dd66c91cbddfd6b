"""Cross-validated adaptive-LASSO regime estimation and the value curve.

Typical use::

    nd = normalize(dataset)
    policy, cv, nuisance = run_pipeline(dataset, PipelineConfig(prune_frac=0.01))
    assign = predict(policy, new_covariates)
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import solvers
from .dataset import DataError, Dataset, FoldAssignment, NormalizedDataset, kfold_split, normalize
from .losses import PenaltySpec
from .nuisance import (
    DEFAULT_CLIP,
    GLMNuisance,
    NuisanceFit,
    confidence_interval,
    estimate_contrast_aipw,
    estimate_value_aipw,
)
from .solvers import SolverConfig

log = logging.getLogger(__name__)

LOSS_KINDS = ("hinge", "ramp")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tuning knob of the cross-validated fit.

    The lambda grid is geometric from ``lambda_min`` to ``lambda_max`` with
    ``n_lambda`` points. ``exclude`` names covariates kept out of the policy
    (they still enter the nuisance models). ``max_vars`` optionally caps the
    number of variables retained after pruning.
    """

    K: int = 5
    lambda_min: float = 1e-4
    lambda_max: float = 10.0
    n_lambda: int = 20
    loss_kind: str = "ramp"
    gamma: float = 1.0
    prune_frac: float = 0.1
    clip: tuple[float, float] = DEFAULT_CLIP
    lambda_rule: str = "min"
    exclude: tuple[str, ...] = ()
    max_vars: int | None = None
    penalize_intercept: bool = False
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"need K >= 2 folds, got {self.K}")
        if not 0 < self.lambda_min <= self.lambda_max or self.n_lambda < 1:
            raise ValueError("lambda grid needs 0 < lambda_min <= lambda_max and n_lambda >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not 0 <= self.prune_frac < 1:
            raise ValueError(f"prune_frac must be in [0, 1), got {self.prune_frac}")
        if self.lambda_rule not in ("min", "1se"):
            raise ValueError(f"lambda_rule must be 'min' or '1se', got {self.lambda_rule!r}")
        if self.max_vars is not None and self.max_vars < 1:
            raise ValueError("max_vars must be >= 1")
        object.__setattr__(self, "clip", tuple(float(c) for c in self.clip))
        object.__setattr__(self, "exclude", tuple(self.exclude))

    def lambdas(self) -> np.ndarray:
        return np.geomspace(self.lambda_min, self.lambda_max, self.n_lambda)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip"] = list(self.clip)
        d["exclude"] = list(self.exclude)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Policy:
    """Linear regime ``d(x) = I(x @ eta > 0)`` on standardized covariates."""

    eta: np.ndarray
    selected: tuple[int, ...]
    loss_kind: str
    lambda_used: float
    refit: bool
    names: tuple[str, ...]
    column_means: np.ndarray
    column_sds: np.ndarray
    eta_full: np.ndarray | None = None
    trivial: bool = False
    converged: bool = True
    config_hash: str = ""

    def decision_scores(self, design) -> np.ndarray:
        return np.asarray(design) @ self.eta

    def raw_coefficients(self) -> tuple[float, np.ndarray]:
        """Intercept and slopes of the same rule on the original covariate scale."""
        slopes = self.eta[1:] / self.column_sds
        return float(self.eta[0] - slopes @ self.column_means), slopes

    def to_dict(self) -> dict:
        b0, slopes = self.raw_coefficients()
        norm = {"(intercept)": float(self.eta[0])}
        norm.update({nm: float(c) for nm, c in zip(self.names, self.eta[1:])})
        raw = {"(intercept)": b0}
        raw.update({nm: float(c) for nm, c in zip(self.names, slopes)})
        out = {
            "coefficients_normalized": norm,
            "coefficients_raw": raw,
            "selected": [self.names[j] for j in self.selected],
            "loss_kind": self.loss_kind,
            "lambda_used": float(self.lambda_used),
            "refit": self.refit,
            "trivial": self.trivial,
            "converged": self.converged,
            "column_means": dict(zip(self.names, map(float, self.column_means))),
            "column_sds": dict(zip(self.names, map(float, self.column_sds))),
            "config_hash": self.config_hash,
        }
        if self.eta_full is not None:
            out["eta_full"] = [float(v) for v in self.eta_full]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "Policy":
        norm = obj["coefficients_normalized"]
        names = tuple(k for k in norm if k != "(intercept)")
        eta = np.array([norm["(intercept)"]] + [norm[k] for k in names], dtype=float)
        selected = tuple(names.index(s) for s in obj.get("selected", []))
        eta_full = obj.get("eta_full")
        return cls(
            eta=eta,
            selected=selected,
            loss_kind=obj.get("loss_kind", "ramp"),
            lambda_used=float(obj.get("lambda_used", 0.0)),
            refit=bool(obj.get("refit", False)),
            names=names,
            column_means=np.array([obj["column_means"][k] for k in names], dtype=float),
            column_sds=np.array([obj["column_sds"][k] for k in names], dtype=float),
            eta_full=None if eta_full is None else np.array(eta_full, dtype=float),
            trivial=bool(obj.get("trivial", False)),
            converged=bool(obj.get("converged", True)),
            config_hash=obj.get("config_hash", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        return cls.from_dict(json.loads(text))


@dataclass
class CVResult:
    lambdas: np.ndarray
    mean_value: np.ndarray
    se_value: np.ndarray
    lambda_min: float
    lambda_1se: float
    fold_values: np.ndarray | None = None
    converged: np.ndarray | None = None

    def to_csv(self, path) -> None:
        n_used = (self.converged.sum(axis=0) if self.converged is not None
                  else np.full(self.lambdas.shape, -1))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "mean_value", "se_value", "n_folds", "is_lambda_min",
                        "is_lambda_1se"])
            for lam, m, s, k in zip(self.lambdas, self.mean_value, self.se_value, n_used):
                w.writerow([_fmt(lam), _fmt(m), _fmt(s), int(k),
                            int(lam == self.lambda_min), int(lam == self.lambda_1se)])


@dataclass
class ValueCurve:
    k: np.ndarray
    value_k: np.ndarray
    variance_k: np.ndarray
    ci_k: np.ndarray
    ranked_names: tuple[str, ...]
    failed: np.ndarray
    trivial_arm: int

    @property
    def se_k(self) -> np.ndarray:
        return np.sqrt(self.variance_k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "added_variable", "value", "se", "ci_lo", "ci_hi", "failed"])
            for i, k in enumerate(self.k):
                added = f"all_{self.trivial_arm}" if k == 0 else self.ranked_names[k - 1]
                w.writerow([int(k), added, _fmt(self.value_k[i]), _fmt(self.se_k[i]),
                            _fmt(self.ci_k[i, 0]), _fmt(self.ci_k[i, 1]), int(self.failed[i])])


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def select_lambda(lambdas, mean_value, se_value) -> tuple[float, float]:
    """``lambda_min`` maximizes the mean value (largest lambda on ties);
    ``lambda_1se`` is the largest lambda whose mean is within one SE of it."""
    lambdas = np.asarray(lambdas, dtype=float)
    mean_value = np.asarray(mean_value, dtype=float)
    se_value = np.asarray(se_value, dtype=float)
    ok = np.isfinite(mean_value)
    if not ok.any():
        raise RuntimeError("no lambda has a finite cross-validated value")
    best = np.nanmax(np.where(ok, mean_value, np.nan))
    i_min = max(np.flatnonzero(ok & (mean_value == best)), key=lambda i: lambdas[i])
    se = se_value[i_min] if np.isfinite(se_value[i_min]) else 0.0
    within = np.flatnonzero(ok & (mean_value >= mean_value[i_min] - se))
    i_1se = max(within, key=lambda i: lambdas[i])
    return float(lambdas[i_min]), float(lambdas[i_1se])


def policy_columns(names: Sequence[str], exclude: Sequence[str] = ()) -> np.ndarray:
    """Design-column indices (intercept first) usable by the policy."""
    unknown = set(exclude) - set(names)
    if unknown:
        raise DataError(f"excluded variable(s) not in data: {sorted(unknown)}")
    return np.array([0] + [1 + j for j, nm in enumerate(names) if nm not in set(exclude)])


def _fit_path(P, contrast, eta_int, lambdas_desc, gamma, loss_kind, solver_cfg,
              penalize_intercept):
    """Fits along a descending lambda path, each warm-started from the previous."""
    out = []
    eta = eta_int
    for lam in lambdas_desc:
        spec = PenaltySpec(lam=lam, gamma=gamma, eta_int=eta_int,
                           penalize_intercept=penalize_intercept)
        fit = solvers.fit_surrogate(P, contrast, spec, loss_kind, eta, solver_cfg)
        eta = fit.eta
        out.append(fit)
    return out


def cv_path(nd: NormalizedDataset, folds: FoldAssignment, lambdas, loss_kind: str = "ramp",
            cfg: PipelineConfig = PipelineConfig(),
            nuisance_factory: Callable[[], object] | None = None,
            columns=None) -> CVResult:
    """K-fold cross-validated AIPW value of the adaptive-LASSO fit for each lambda.

    In each fold the nuisance models are fit on the training part; the
    contrast and the fits use the training part and the value is estimated on
    the held-out part with the training nuisance models. Cells whose d.c. loop
    did not converge are left out of the average.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0 or np.any(np.diff(lambdas) <= 0) or np.any(lambdas < 0):
        raise ValueError("lambdas must be a non-empty ascending grid of nonnegative values")
    if folds.K < 2:
        raise ValueError(f"need K >= 2 folds, got {folds.K}")
    factory = nuisance_factory or (lambda: GLMNuisance(cfg.clip))
    cols = policy_columns(nd.names, cfg.exclude) if columns is None else np.asarray(columns)
    X, A, Y = nd.design, nd.treatment, nd.outcome
    K, L = folds.K, lambdas.size
    values = np.full((K, L), np.nan)
    conv = np.zeros((K, L), dtype=bool)
    order = np.arange(L)[::-1]
    for k in range(K):
        tr, te = folds.train_test(k)
        if np.unique(A[tr]).size < 2 or np.unique(A[te]).size < 2:
            raise DataError(f"fold {k} lacks one treatment arm")
        model = factory().fit(X[tr], A[tr], Y[tr])
        contrast = estimate_contrast_aipw(A[tr], Y[tr], model.predict(X[tr]))
        nf_te = model.predict(X[te])
        P_tr, P_te = X[tr][:, cols], X[te][:, cols]
        eta_int = solvers.initial_fit(P_tr, contrast, loss_kind, cfg.solver,
                                      cfg.penalize_intercept).eta
        fits = _fit_path(P_tr, contrast, eta_int, lambdas[order], cfg.gamma, loss_kind,
                         cfg.solver, cfg.penalize_intercept)
        for i, fit in zip(order, fits):
            d = (P_te @ fit.eta > 0).astype(int)
            values[k, i] = estimate_value_aipw(A[te], Y[te], nf_te, d)[0]
            conv[k, i] = fit.converged
    if not conv.all():
        log.warning("%d of %d CV cells did not converge and are excluded",
                    int((~conv).sum()), conv.size)
    used = np.where(conv, values, np.nan)
    n_used = conv.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n_used > 0, np.nansum(used, axis=0) / np.maximum(n_used, 1), np.nan)
        dev = np.where(conv, (values - mean) ** 2, 0.0).sum(axis=0)
        se = np.where(n_used > 1, np.sqrt(dev / np.maximum(n_used - 1, 1) / np.maximum(n_used, 1)),
                      np.nan)
    lam_min, lam_1se = select_lambda(lambdas, mean, se)
    return CVResult(lambdas, mean, se, lam_min, lam_1se, values, conv)


def _nuisance_full(nd, cfg, nuisance_factory):
    factory = nuisance_factory or (lambda: GLMNuisance(cfg.clip))
    return factory().fit(nd.design, nd.treatment, nd.outcome).predict(nd.design)


def fit_full(nd: NormalizedDataset, lam: float, loss_kind: str = "ramp", prune_frac: float = 0.1,
             cfg: PipelineConfig = PipelineConfig(), nuisance: NuisanceFit | None = None,
             nuisance_factory=None, columns=None) -> Policy:
    """Fit on all data at ``lam``, prune small coefficients, refit unpenalized.

    A coefficient is pruned when its magnitude is below ``prune_frac`` times
    the largest non-intercept magnitude. If nothing survives, the returned
    policy is intercept-only and marked ``trivial``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not 0 <= prune_frac < 1:
        raise ValueError("prune_frac must be in [0, 1)")
    nf = nuisance if nuisance is not None else _nuisance_full(nd, cfg, nuisance_factory)
    contrast = estimate_contrast_aipw(nd.treatment, nd.outcome, nf)
    cols = policy_columns(nd.names, cfg.exclude) if columns is None else np.asarray(columns)
    X = nd.design
    P = X[:, cols]
    eta_int = solvers.initial_fit(P, contrast, loss_kind, cfg.solver, cfg.penalize_intercept).eta
    spec = PenaltySpec(lam=lam, gamma=cfg.gamma, eta_int=eta_int,
                       penalize_intercept=cfg.penalize_intercept)
    full = solvers.fit_surrogate(P, contrast, spec, loss_kind, eta_int, cfg.solver)
    eta_full = np.zeros(X.shape[1])
    eta_full[cols] = full.eta

    slopes = np.abs(eta_full[1:])
    top = slopes.max()
    keep = np.flatnonzero((slopes > 0) & (slopes >= prune_frac * top))
    if cfg.max_vars is not None and keep.size > cfg.max_vars:
        keep = keep[np.argsort(-slopes[keep], kind="stable")[: cfg.max_vars]]
        keep.sort()
    refit_cols = np.concatenate([[0], 1 + keep]).astype(int)
    refit = solvers.initial_fit(X[:, refit_cols], contrast, loss_kind, cfg.solver,
                                cfg.penalize_intercept)
    eta = np.zeros(X.shape[1])
    eta[refit_cols] = refit.eta
    if keep.size == 0:
        log.warning("all variables pruned at lambda=%g; policy is trivial", lam)
    return Policy(
        eta=eta,
        selected=tuple(int(j) for j in keep),
        loss_kind=loss_kind,
        lambda_used=float(lam),
        refit=True,
        names=nd.names,
        column_means=np.asarray(nd.column_means, dtype=float),
        column_sds=np.asarray(nd.column_sds, dtype=float),
        eta_full=eta_full,
        trivial=keep.size == 0,
        converged=bool(full.converged and refit.converged),
        config_hash=cfg.digest(),
    )


def complementary_analysis(nd: NormalizedDataset, nuisance: NuisanceFit, eta_full,
                           excluded: Sequence[str] = (), loss_kind: str = "ramp",
                           cfg: PipelineConfig = PipelineConfig()) -> ValueCurve:
    """Value (with 95% CI) of unpenalized policies on the top-k ranked variables.

    Variables are ranked by ``|eta_full|`` on the standardized scale. The
    ``k = 0`` entry is the better of treat-all and treat-none.
    """
    eta_full = np.asarray(eta_full, dtype=float)
    if eta_full.shape != (nd.design.shape[1],):
        raise ValueError("eta_full must have one entry per design column")
    cols = policy_columns(nd.names, excluded)[1:] - 1
    if cols.size == 0:
        raise DataError("no variables available for the policy after exclusion")
    ranked = cols[np.argsort(-np.abs(eta_full[1 + cols]), kind="stable")]
    A, Y, X = nd.treatment, nd.outcome, nd.design
    contrast = estimate_contrast_aipw(A, Y, nuisance)
    n = X.shape[0]

    trivial = [estimate_value_aipw(A, Y, nuisance, np.full(n, arm)) for arm in (0, 1)]
    arm = int(trivial[1][0] > trivial[0][0])
    values, variances, failed = [trivial[arm][0]], [trivial[arm][1]], [False]
    for k in range(1, ranked.size + 1):
        use = np.concatenate([[0], 1 + ranked[:k]])
        try:
            fit = solvers.initial_fit(X[:, use], contrast, loss_kind, cfg.solver,
                                      cfg.penalize_intercept)
        except (RuntimeError, ValueError) as exc:
            log.warning("value curve: fit with k=%d failed: %s", k, exc)
            values.append(np.nan)
            variances.append(np.nan)
            failed.append(True)
            continue
        d = (X[:, use] @ fit.eta > 0).astype(int)
        v, var = estimate_value_aipw(A, Y, nuisance, d)
        values.append(v)
        variances.append(var)
        failed.append(not fit.converged)
    values = np.array(values)
    variances = np.array(variances)
    ci = np.array([confidence_interval(v, s) for v, s in zip(values, variances)])
    return ValueCurve(np.arange(ranked.size + 1), values, variances, ci,
                      tuple(nd.names[j] for j in ranked), np.array(failed), arm)


def predict(policy: Policy, raw_covariates, names: Sequence[str] | None = None) -> np.ndarray:
    """Treatment assignments ``I(x @ eta > 0)`` for raw (unstandardized) covariates.

    With ``names``, columns are matched by name and only the variables the
    policy actually uses have to be present.
    """
    X = np.asarray(raw_covariates, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    used = np.flatnonzero(policy.eta[1:] != 0)
    if names is not None:
        names = list(names)
        missing = [policy.names[j] for j in used if policy.names[j] not in names]
        if missing:
            raise DataError(f"policy uses column(s) absent from the data: {missing}")
        cols = [names.index(policy.names[j]) for j in used]
    else:
        if X.shape[1] != len(policy.names):
            raise DataError(f"expected {len(policy.names)} covariate columns, got {X.shape[1]}")
        cols = list(used)
    Z = (X[:, cols] - policy.column_means[used]) / policy.column_sds[used]
    score = policy.eta[0] + Z @ policy.eta[1 + used]
    return (score > 0).astype(int)


def run_pipeline(data: Dataset, cfg: PipelineConfig = PipelineConfig(),
                 nuisance_factory=None) -> tuple[Policy, CVResult, NuisanceFit]:
    """Normalize, cross-validate lambda, fit on all data, prune and refit."""
    nd = normalize(data)
    folds = kfold_split(data.treatment, cfg.K, cfg.seed)
    cv = cv_path(nd, folds, cfg.lambdas(), cfg.loss_kind, cfg, nuisance_factory)
    lam = cv.lambda_min if cfg.lambda_rule == "min" else cv.lambda_1se
    nf = _nuisance_full(nd, cfg, nuisance_factory)
    policy = fit_full(nd, lam, cfg.loss_kind, cfg.prune_frac, cfg, nuisance=nf)
    return policy, cv, nf


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **kw)
