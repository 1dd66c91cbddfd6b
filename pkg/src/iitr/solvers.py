"""Solvers for the penalized surrogate risks.

``dc_fit`` minimizes the smoothed-ramp risk plus an adaptive LASSO penalty by
the difference-of-convex algorithm: the concave part is linearized at the
current iterate and the resulting convex subproblem is solved by accelerated
proximal gradient (``solve_convex_subproblem``). ``hinge_fit`` solves the
weighted-SVM problem, a linear program, with HiGHS.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from numba import njit
from scipy.optimize import linprog

from .losses import PenaltySpec, dloss_s, loss_hinge, loss_ramp, loss_s, penalty
from .nuisance import ContrastEstimate

log = logging.getLogger(__name__)


class DegenerateContrastError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration caps.

    ``stop_rule="loss"`` stops the d.c. loop when the objective changes by at
    most ``tol``; ``"coef"`` uses the Euclidean change of the coefficients.
    ``init`` selects the seed of the unpenalized initial fit (``"wls"`` or
    ``"zero"``).
    """

    tol: float = 1e-5
    max_outer_iter: int = 200
    max_inner_iter: int = 5000
    inner_tol: float = 1e-8
    stop_rule: str = "loss"
    init: str = "wls"

    def __post_init__(self):
        for name in ("tol", "max_outer_iter", "max_inner_iter", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.stop_rule not in ("loss", "coef"):
            raise ValueError(f"stop_rule must be 'loss' or 'coef', got {self.stop_rule!r}")
        if self.init not in ("wls", "zero"):
            raise ValueError(f"init must be 'wls' or 'zero', got {self.init!r}")


@dataclass
class FitResult:
    eta: np.ndarray
    final_objective: float
    outer_iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)

    def to_dict(self, names=None) -> dict:
        names = names or [f"x{j}" for j in range(1, self.eta.shape[0])]
        coefs = {"(intercept)": float(self.eta[0])}
        coefs.update({nm: float(c) for nm, c in zip(names, self.eta[1:])})
        return {
            "coefficients": coefs,
            "final_objective": self.final_objective,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "objective_trace": list(self.objective_trace),
        }

    def to_json(self, names=None) -> str:
        return json.dumps(self.to_dict(names), indent=2)


@dataclass
class SubproblemResult:
    eta: np.ndarray
    objective: float
    iterations: int
    converged: bool


def soft_threshold(v, t):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _check_weights(contrast: ContrastEstimate):
    if not np.any(contrast.weights > 0):
        raise DegenerateContrastError("degenerate contrast: all tau estimates are 0")


def dc_objective(eta, design, contrast: ContrastEstimate, spec: PenaltySpec) -> float:
    """Smoothed-ramp risk plus penalty, the quantity the d.c. loop decreases."""
    u = contrast.labels * (np.asarray(design) @ eta)
    return float(np.mean(contrast.weights * loss_ramp(u))) + penalty(eta, spec)


def hinge_objective(eta, design, contrast: ContrastEstimate, spec: PenaltySpec) -> float:
    u = contrast.labels * (np.asarray(design) @ eta)
    return float(np.mean(contrast.weights * loss_hinge(u))) + penalty(eta, spec)


def subproblem_objective(eta, design, contrast, xi, spec) -> float:
    u = contrast.labels * (np.asarray(design) @ eta)
    return float(np.mean(contrast.weights * loss_s(u, 1.0) - xi * u)) + penalty(eta, spec)


class _Problem:
    """Units with zero weight dropped, excluded coordinates removed."""

    def __init__(self, design, contrast, spec, xi=None):
        X = np.asarray(design, dtype=float)
        self.n = X.shape[0]
        self.dim = X.shape[1]
        keep = contrast.weights > 0
        pen_w, excluded = spec.weights(self.dim)
        self.active = np.flatnonzero(~excluded)
        self.M = (contrast.labels[keep, None] * X[keep])[:, self.active]
        self.w = contrast.weights[keep]
        self.xi = None if xi is None else np.asarray(xi, dtype=float)[keep]
        self.thresh = spec.lam * pen_w[self.active]

    def expand(self, beta) -> np.ndarray:
        eta = np.zeros(self.dim)
        eta[self.active] = beta
        return eta

    def lipschitz(self) -> float:
        G = self.M.T @ (self.w[:, None] * self.M)
        return max(2.0 * float(np.linalg.eigvalsh(G)[-1]) / self.n, 1e-12)


@njit(cache=True)
def _smooth_grad(M, MT, w, xi, u, n, grad):
    """Value of the smooth part at margins ``u``; writes its gradient into ``grad``."""
    m = u.shape[0]
    r = np.empty(m)
    val = 0.0
    for i in range(m):
        d = 1.0 - u[i]
        if d <= 0.0:
            c = 0.0
            val -= xi[i] * u[i]
        elif d <= 1.0:
            c = d
            val += w[i] * d * d - xi[i] * u[i]
        else:
            c = 1.0
            val += w[i] * (2.0 * d - 1.0) - xi[i] * u[i]
        r[i] = (-2.0 * w[i] * c - xi[i]) / n
    grad[:] = np.dot(MT, r)
    return val / n


@njit(cache=True)
def _smooth(w, xi, u, n):
    val = 0.0
    for i in range(u.shape[0]):
        d = 1.0 - u[i]
        if d <= 0.0:
            val -= xi[i] * u[i]
        elif d <= 1.0:
            val += w[i] * d * d - xi[i] * u[i]
        else:
            val += w[i] * (2.0 * d - 1.0) - xi[i] * u[i]
    return val / n


@njit(cache=True)
def _l1(thr, x):
    s = 0.0
    for j in range(x.shape[0]):
        s += thr[j] * abs(x[j])
    return s


@njit(cache=True)
def _fista(M, MT, w, xi, thr, x0, n, step, max_iter, tol):
    q = x0.shape[0]
    x = x0.copy()
    ux = np.dot(M, x)
    Fx = _smooth(w, xi, ux, n) + _l1(thr, x)
    best = x.copy()
    best_F = Fx
    y = x.copy()
    uy = ux.copy()
    t = 1.0
    grad = np.empty(q)
    xn = np.empty(q)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        gy = _smooth_grad(M, MT, w, xi, uy, n, grad)
        while True:
            for j in range(q):
                v = y[j] - step * grad[j]
                a = abs(v) - step * thr[j]
                xn[j] = np.sign(v) * a if a > 0.0 else 0.0
            un = np.dot(M, xn)
            lin = 0.0
            quad = 0.0
            for j in range(q):
                dj = xn[j] - y[j]
                lin += grad[j] * dj
                quad += dj * dj
            gn = _smooth(w, xi, un, n)
            # quad == 0: the prox step does not move, so the test reduces to
            # comparing gy with gn, which differ only by rounding in uy.
            if quad == 0.0 or gn <= gy + lin + quad / (2.0 * step) + 1e-15 * abs(gy):
                break
            step *= 0.5
            if step < 1e-300:
                break
        Fn = gn + _l1(thr, xn)
        if Fn > Fx:
            # Momentum overshoot: restart from the last accepted point.
            if t == 1.0:
                converged = True
                break
            y[:] = x
            uy[:] = ux
            t = 1.0
            continue
        if Fn < best_F:
            best[:] = xn
            best_F = Fn
        done = abs(Fx - Fn) <= tol * max(abs(Fn), 1e-12)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        for j in range(q):
            y[j] = xn[j] + beta * (xn[j] - x[j])
            x[j] = xn[j]
        for i in range(un.shape[0]):
            uy[i] = un[i] + beta * (un[i] - ux[i])
            ux[i] = un[i]
        Fx = Fn
        t = t_next
        if done:
            converged = True
            break
    return best, best_F, it, converged


def solve_convex_subproblem(design, contrast: ContrastEstimate, xi, spec: PenaltySpec,
                            warm_start, cfg: SolverConfig = SolverConfig()) -> SubproblemResult:
    """Minimize ``mean(w * loss_s(u, 1) - xi * u) + penalty`` by FISTA.

    Uses backtracking from the global curvature bound, adaptive restart when
    the objective increases, and returns the best iterate seen (never worse
    than ``warm_start``).
    """
    P = _Problem(design, contrast, spec, xi)
    M = np.ascontiguousarray(P.M)
    x0 = np.asarray(warm_start, dtype=float)[P.active].copy()
    best, best_F, it, converged = _fista(
        M, np.ascontiguousarray(M.T), P.w, P.xi, P.thresh, x0, float(P.n),
        1.0 / P.lipschitz(), cfg.max_inner_iter, cfg.inner_tol,
    )
    return SubproblemResult(P.expand(best), float(best_F), int(it), bool(converged))


def dc_fit(design, contrast: ContrastEstimate, spec: PenaltySpec, eta0,
           cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Difference-of-convex minimization of the penalized smoothed-ramp risk."""
    _check_weights(contrast)
    X = np.asarray(design, dtype=float)
    _, excluded = spec.weights(X.shape[1])
    eta = np.asarray(eta0, dtype=float).copy()
    eta[excluded] = 0.0
    obj = dc_objective(eta, X, contrast, spec)
    trace = [obj]
    converged = False
    t = 0
    for t in range(1, cfg.max_outer_iter + 1):
        u = contrast.labels * (X @ eta)
        xi = contrast.weights * dloss_s(u, 0.0)
        sub = solve_convex_subproblem(X, contrast, xi, spec, eta, cfg)
        new_obj = dc_objective(sub.eta, X, contrast, spec)
        change = (abs(new_obj - obj) if cfg.stop_rule == "loss"
                  else float(np.linalg.norm(sub.eta - eta)))
        eta, obj = sub.eta, new_obj
        trace.append(obj)
        if change <= cfg.tol:
            converged = True
            break
    if not converged:
        log.warning("d.c. loop hit max_outer_iter=%d (lambda=%g)", cfg.max_outer_iter, spec.lam)
    return FitResult(eta, obj, t, converged, trace)


def hinge_fit(design, contrast: ContrastEstimate, spec: PenaltySpec,
              cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Weighted SVM with adaptive LASSO penalty, solved exactly as an LP.

    Variables are the active coefficients (split into positive and negative
    parts where penalized) and one hinge slack per weighted unit.
    """
    _check_weights(contrast)
    P = _Problem(design, contrast, spec)
    m, q = P.M.shape
    pen = P.thresh > 0
    free = ~pen
    Mf, Mp = P.M[:, free], P.M[:, pen]
    c = np.concatenate([np.zeros(free.sum()), P.thresh[pen], P.thresh[pen], P.w / P.n])
    A = sparse.hstack([
        sparse.csr_matrix(-Mf), sparse.csr_matrix(-Mp), sparse.csr_matrix(Mp),
        -sparse.identity(m, format="csr"),
    ], format="csr")
    bounds = [(None, None)] * int(free.sum()) + [(0, None)] * (2 * int(pen.sum()) + m)
    res = linprog(c, A_ub=A, b_ub=-np.ones(m), bounds=bounds, method="highs-ds",
                  options={"maxiter": cfg.max_inner_iter * max(10, m)})
    if res.x is None:
        log.warning("hinge LP failed: %s", res.message)
        beta = np.zeros(q)
    else:
        nf, npen = int(free.sum()), int(pen.sum())
        beta = np.zeros(q)
        beta[free] = res.x[:nf]
        beta[pen] = res.x[nf:nf + npen] - res.x[nf + npen:nf + 2 * npen]
    eta = P.expand(beta)
    obj = hinge_objective(eta, design, contrast, spec)
    return FitResult(eta, obj, 1, bool(res.status == 0), [obj])


def wls_seed(design, contrast: ContrastEstimate) -> np.ndarray:
    """Weighted least-squares regression of the labels on the design."""
    _check_weights(contrast)
    X = np.asarray(design, dtype=float)
    sw = np.sqrt(contrast.weights)
    return np.linalg.lstsq(sw[:, None] * X, sw * contrast.labels, rcond=None)[0]


def fit_surrogate(design, contrast, spec, loss_kind: str, eta0=None,
                  cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Dispatch to :func:`dc_fit` (``"ramp"``) or :func:`hinge_fit` (``"hinge"``)."""
    if loss_kind == "hinge":
        return hinge_fit(design, contrast, spec, cfg)
    if loss_kind != "ramp":
        raise ValueError(f"loss_kind must be 'hinge' or 'ramp', got {loss_kind!r}")
    if eta0 is None:
        eta0 = _seed(design, contrast, cfg)
    return dc_fit(design, contrast, spec, eta0, cfg)


def _seed(design, contrast, cfg):
    if cfg.init == "zero":
        _check_weights(contrast)
        return np.zeros(np.asarray(design).shape[1])
    return wls_seed(design, contrast)


def initial_fit(design, contrast: ContrastEstimate, loss_kind: str,
                cfg: SolverConfig = SolverConfig(), penalize_intercept: bool = False) -> FitResult:
    """Unpenalized surrogate fit used as the adaptive-LASSO reference."""
    spec = PenaltySpec(lam=0.0, penalize_intercept=penalize_intercept)
    return fit_surrogate(design, contrast, spec, loss_kind, None, cfg)


def initial_estimate(design, contrast: ContrastEstimate, loss_kind: str,
                     cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    return initial_fit(design, contrast, loss_kind, cfg).eta
