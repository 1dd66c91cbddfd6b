"""Propensity/outcome nuisance models and AIPW estimators.

The default nuisance model is a logistic regression for the propensity score
(fit by IRLS) and one ordinary least-squares fit per treatment arm for the
outcome. Any object with ``fit(design, treatment, outcome)`` and
``predict(design) -> NuisanceFit`` can stand in for :class:`GLMNuisance`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import expit, log_expit

DEFAULT_CLIP = (0.01, 0.99)


class SeparationError(RuntimeError):
    """The logistic fit diverges because the arms are (quasi-)separable."""


class ConvergenceError(RuntimeError):
    pass


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class NuisanceFit:
    propensity: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    clip_bounds: tuple[float, float] = DEFAULT_CLIP

    def __post_init__(self):
        c1, c2 = self.clip_bounds
        _check_bounds(c1, c2)
        e = clip_propensity(self.propensity, c1, c2)
        mu0 = np.asarray(self.mu0, dtype=float)
        mu1 = np.asarray(self.mu1, dtype=float)
        if not (e.shape == mu0.shape == mu1.shape) or e.ndim != 1:
            raise ValueError("propensity, mu0 and mu1 must be 1-d arrays of equal length")
        object.__setattr__(self, "propensity", e)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "clip_bounds", (float(c1), float(c2)))

    def __len__(self):
        return self.propensity.shape[0]

    def subset(self, idx) -> "NuisanceFit":
        return NuisanceFit(self.propensity[idx], self.mu0[idx], self.mu1[idx], self.clip_bounds)

    def to_json(self) -> str:
        return json.dumps(
            {
                "propensity": self.propensity.tolist(),
                "mu0": self.mu0.tolist(),
                "mu1": self.mu1.tolist(),
                "clip_bounds": list(self.clip_bounds),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NuisanceFit":
        obj = json.loads(text)
        return cls(
            np.array(obj["propensity"], dtype=float),
            np.array(obj["mu0"], dtype=float),
            np.array(obj["mu1"], dtype=float),
            tuple(obj["clip_bounds"]),
        )


@dataclass(frozen=True)
class ContrastEstimate:
    """Per-unit contrast ``tau`` with classification labels and weights.

    ``labels`` is ``+1`` where ``tau > 0`` and ``-1`` otherwise (ties go to
    ``-1``; they carry zero weight). ``weights`` is ``|tau|``.
    """

    tau: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_tau(cls, tau) -> "ContrastEstimate":
        tau = np.asarray(tau, dtype=float)
        return cls(tau, np.where(tau > 0, 1.0, -1.0), np.abs(tau))

    def subset(self, idx) -> "ContrastEstimate":
        return ContrastEstimate(self.tau[idx], self.labels[idx], self.weights[idx])


class NuisanceModel(Protocol):
    def fit(self, design, treatment, outcome) -> "NuisanceModel": ...

    def predict(self, design) -> NuisanceFit: ...


def _check_bounds(c1, c2):
    if not (0 < c1 < c2 < 1):
        raise ValueError(f"clip bounds must satisfy 0 < c1 < c2 < 1, got ({c1}, {c2})")


def clip_propensity(e, c1: float, c2: float) -> np.ndarray:
    _check_bounds(c1, c2)
    return np.clip(np.asarray(e, dtype=float), c1, c2)


def logistic_irls(design, treatment, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Maximum-likelihood logistic regression coefficients via Newton/IRLS.

    Stops when the relative change of the log-likelihood drops below ``tol``.
    Raises :class:`SeparationError` when the coefficient norm exceeds 1e3,
    the usual symptom of (quasi-)complete separation.
    """
    X = np.asarray(design, dtype=float)
    a = np.asarray(treatment, dtype=float)
    beta = np.zeros(X.shape[1])
    loglik = -np.inf
    for _ in range(max_iter):
        eta = X @ beta
        p = expit(eta)
        w = p * (1 - p)
        H = X.T @ (w[:, None] * X)
        g = X.T @ (a - p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > 1e3:
            raise SeparationError(
                "propensity model diverged (coefficient norm > 1e3): treatment is "
                "(quasi-)separable by the covariates; review covariates or rely on clipping"
            )
        eta = X @ beta
        new = float(np.sum(a * log_expit(eta) + (1 - a) * log_expit(-eta)))
        if abs(new - loglik) <= tol * max(abs(new), 1e-300):
            return beta
        loglik = new
    raise ConvergenceError(f"logistic IRLS did not converge in {max_iter} iterations")


def fit_propensity(design, treatment, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Fitted (unclipped) propensity scores from a logistic regression."""
    beta = logistic_irls(design, treatment, max_iter=max_iter, tol=tol)
    return expit(np.asarray(design, dtype=float) @ beta)


def _ols(X, y, arm: int) -> np.ndarray:
    n, q = X.shape
    if n <= q:
        raise RankError(f"arm {arm} has {n} units but the design has {q} columns")
    rank = np.linalg.matrix_rank(X)
    if rank < q:
        # Greedy scan for columns that add nothing to the span of earlier ones.
        dependent, kept = [], []
        for j in range(q):
            if np.linalg.matrix_rank(X[:, kept + [j]]) == len(kept) + 1:
                kept.append(j)
            else:
                dependent.append(j)
        raise RankError(
            f"design is rank deficient within arm {arm}; dependent column index(es) {dependent}"
        )
    return np.linalg.lstsq(X, y, rcond=None)[0]


def outcome_ols(design, treatment, outcome) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm OLS coefficients ``(beta0, beta1)``."""
    X = np.asarray(design, dtype=float)
    A = np.asarray(treatment)
    Y = np.asarray(outcome, dtype=float)
    return _ols(X[A == 0], Y[A == 0], 0), _ols(X[A == 1], Y[A == 1], 1)


def fit_outcome(design, treatment, outcome) -> tuple[np.ndarray, np.ndarray]:
    """Predicted ``(mu0, mu1)`` for every unit from per-arm OLS fits."""
    b0, b1 = outcome_ols(design, treatment, outcome)
    X = np.asarray(design, dtype=float)
    return X @ b0, X @ b1


class GLMNuisance:
    """Logistic propensity plus per-arm linear outcome models.

    Parameters
    ----------
    clip_bounds : (float, float)
        Propensity clipping applied at prediction time.
    propensity_design, outcome_design : callable, optional
        Feature maps applied to the design before the respective fit; the
        identity by default. Useful to plug in a correctly specified or a
        deliberately misspecified model.
    """

    def __init__(self, clip_bounds=DEFAULT_CLIP, propensity_design=None, outcome_design=None,
                 max_iter: int = 100, tol: float = 1e-10):
        _check_bounds(*clip_bounds)
        self.clip_bounds = tuple(clip_bounds)
        self.propensity_design = propensity_design or (lambda X: X)
        self.outcome_design = outcome_design or (lambda X: X)
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, design, treatment, outcome) -> "GLMNuisance":
        self.beta_e_ = logistic_irls(
            self.propensity_design(design), treatment, self.max_iter, self.tol
        )
        self.beta0_, self.beta1_ = outcome_ols(self.outcome_design(design), treatment, outcome)
        return self

    def predict(self, design) -> NuisanceFit:
        Xe = np.asarray(self.propensity_design(design), dtype=float)
        Xm = np.asarray(self.outcome_design(design), dtype=float)
        return NuisanceFit(expit(Xe @ self.beta_e_), Xm @ self.beta0_, Xm @ self.beta1_,
                           self.clip_bounds)


def estimate_contrast_aipw(treatment, outcome, nf: NuisanceFit) -> ContrastEstimate:
    """AIPW pseudo-outcomes of the individual treatment effect."""
    A = np.asarray(treatment, dtype=float)
    Y = np.asarray(outcome, dtype=float)
    if A.shape != (len(nf),) or Y.shape != (len(nf),):
        raise ValueError("nuisance fit is not aligned with the data")
    e = nf.propensity
    tau = (A * (Y - nf.mu1) / e - (1 - A) * (Y - nf.mu0) / (1 - e)
           + nf.mu1 - nf.mu0)
    return ContrastEstimate.from_tau(tau)


def aipw_contributions(treatment, outcome, nf: NuisanceFit, assignments) -> np.ndarray:
    """Per-unit doubly robust value contributions for the regime ``assignments``."""
    A = np.asarray(treatment, dtype=float)
    Y = np.asarray(outcome, dtype=float)
    d = np.asarray(assignments, dtype=float)
    if not (A.shape == Y.shape == d.shape == (len(nf),)):
        raise ValueError("treatment, outcome, assignments and nuisance fit must be aligned")
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("policy assignments must be 0 or 1")
    e = nf.propensity
    w = A * d / e + (1 - A) * (1 - d) / (1 - e)
    mu_d = np.where(d == 1, nf.mu1, nf.mu0)
    return w * (Y - mu_d) + mu_d


def estimate_value_aipw(treatment, outcome, nf: NuisanceFit, assignments) -> tuple[float, float]:
    """AIPW value of a regime and its influence-function variance.

    The 95% interval is ``value +/- 1.96 * sqrt(variance)``.
    """
    phi = aipw_contributions(treatment, outcome, nf, assignments)
    n = phi.shape[0]
    value = float(phi.mean())
    variance = float(np.sum((phi - value) ** 2) / n**2)
    return value, variance


def confidence_interval(value: float, variance: float, z: float = 1.96) -> tuple[float, float]:
    half = z * np.sqrt(variance)
    return value - half, value + half
