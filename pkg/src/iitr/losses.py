"""Loss functions for the weighted-classification view of treatment regimes.

All loss functions are vectorized over ``u`` (the signed margin
``z * x @ eta``) and return arrays of the same shape; scalar input gives a
0-d array, which behaves like a float.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nuisance import ContrastEstimate

EXCLUDE_TOL = 1e-12

LOSS_KINDS = ("01", "hinge", "ramp")


def loss_01(u):
    """0-1 loss ``I(u <= 0)``; the boundary ``u = 0`` counts as an error."""
    return (np.asarray(u, dtype=float) <= 0).astype(float)


def loss_hinge(u):
    return np.maximum(1.0 - np.asarray(u, dtype=float), 0.0)


def loss_s(u, s):
    """Convex piece of the smoothed ramp loss.

    ``0`` for ``u >= s``, ``(s - u)**2`` on ``[s - 1, s)`` and the tangent
    line ``2s - 2u - 1`` below ``s - 1``.
    """
    u = np.asarray(u, dtype=float)
    d = s - u
    return np.where(d <= 0, 0.0, np.where(d <= 1, d * d, 2.0 * d - 1.0))


def dloss_s(u, s):
    """Derivative of :func:`loss_s` with respect to ``u`` (continuous)."""
    u = np.asarray(u, dtype=float)
    d = s - u
    return np.where(d <= 0, 0.0, np.where(d <= 1, -2.0 * d, -2.0))


def loss_ramp(u):
    """Smoothed ramp loss, bounded in ``[0, 2]``.

    Equal to ``loss_s(u, 1) - loss_s(u, 0)`` everywhere.
    """
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 1, 0.0, (1.0 - u) ** 2)
    out = np.where(u < 0, 2.0 - (1.0 + u) ** 2, out)
    return np.where(u <= -1, 2.0, out)


_LOSSES = {"01": loss_01, "hinge": loss_hinge, "ramp": loss_ramp}


def margins(eta, contrast: ContrastEstimate, design) -> np.ndarray:
    return contrast.labels * (np.asarray(design) @ np.asarray(eta, dtype=float))


def empirical_risk(eta, contrast: ContrastEstimate, design, loss: str = "01") -> float:
    """Weighted empirical risk ``mean(w * loss(z * x @ eta))``."""
    try:
        fn = _LOSSES[loss]
    except KeyError:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_KINDS}") from None
    u = margins(eta, contrast, design)
    return float(np.mean(contrast.weights * fn(u)))


@dataclass(frozen=True)
class PenaltySpec:
    """Adaptive LASSO penalty ``lam * sum_j |eta_j| / |eta_int_j|**gamma``.

    With ``eta_int=None`` every coordinate gets weight one (plain LASSO).
    Coordinate 0 is treated as the intercept and left unpenalized unless
    ``penalize_intercept`` is set.
    """

    lam: float = 0.0
    gamma: float = 1.0
    eta_int: np.ndarray | None = None
    penalize_intercept: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.eta_int is not None:
            object.__setattr__(self, "eta_int", np.asarray(self.eta_int, dtype=float))

    def weights(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate penalty weights and the mask of excluded coordinates.

        Excluded coordinates (``|eta_int_j| < 1e-12``) are forced to zero by
        the solvers; their weight is reported as 0.
        """
        if self.eta_int is None:
            w = np.ones(dim)
            excluded = np.zeros(dim, dtype=bool)
        else:
            if self.eta_int.shape != (dim,):
                raise ValueError(
                    f"eta_int has shape {self.eta_int.shape}, expected ({dim},)"
                )
            mag = np.abs(self.eta_int)
            excluded = mag < EXCLUDE_TOL
            w = np.zeros(dim)
            w[~excluded] = 1.0 / mag[~excluded] ** self.gamma
        if not self.penalize_intercept:
            w[0] = 0.0
            excluded[0] = False
        return w, excluded


def penalty(eta, spec: PenaltySpec) -> float:
    eta = np.asarray(eta, dtype=float)
    w, excluded = spec.weights(eta.shape[0])
    return float(spec.lam * np.sum(w[~excluded] * np.abs(eta[~excluded])))
