"""Discrete exponential-family densities on an equispaced latent grid.

``g(d_j; alpha) = exp(Q_j . alpha - phi(alpha))`` with ``phi`` the log
normalizer. ``g1`` lives on the unscaled grid ``d_j``; the fever-killed copy
``g1*`` carries the same masses onto ``beta * d_j``; ``g2`` lives on the scaled
grid with no mass at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .splines import BasisMatrix, natural_spline_basis, standardize_columns

__all__ = [
    "Grid",
    "DiscreteDensity",
    "make_grid",
    "default_grid",
    "g1_basis",
    "g2_basis",
    "density",
    "log_density_gradient",
    "positive_support_density",
]


@dataclass(frozen=True)
class Grid:
    """Equispaced latent density support ``0 = d_1 < ... < d_k``."""

    values: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("grid needs at least two points")
        if v[0] != 0.0:
            raise ValueError("grid must start at 0")
        step = np.diff(v)
        if np.any(step <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.allclose(step, step[0], rtol=1e-9, atol=0):
            raise ValueError("grid must be equispaced")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.size

    @property
    def scaled(self) -> np.ndarray:
        return self.beta * self.values

    @property
    def step(self) -> float:
        return float(self.values[1])


@dataclass(frozen=True)
class DiscreteDensity:
    mass: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("mass must be nonnegative and sum to one")

    def mean(self) -> float:
        if self.support is None:
            raise ValueError("density has no support attached")
        return float(self.mass @ self.support)


def make_grid(upper: float, k: int = 101, beta: float = 1.0) -> Grid:
    if not upper > 0:
        raise ValueError("grid upper limit must be positive")
    return Grid(np.linspace(0.0, float(upper), int(k)), beta)


def default_grid(afebrile, febrile, beta: float = 1.0, k: int = 101, expand: float = 1.2) -> Grid:
    """Grid reaching ``expand`` times the largest observation on each scale.

    Afebrile observations must be covered by ``d_k`` and febrile observations
    by ``beta * d_k``, since both febrile components live on the scaled grid.
    """
    top = 0.0
    if np.size(afebrile):
        top = max(top, float(np.max(afebrile)))
    if np.size(febrile):
        top = max(top, float(np.max(febrile)) / beta)
    if top <= 0:
        top = 1.0
    return make_grid(expand * top, k, beta)


def g1_basis(grid: Grid, df: int) -> BasisMatrix:
    return standardize_columns(natural_spline_basis(grid.values, df))


def g2_basis(grid: Grid, df: int) -> BasisMatrix:
    """k x df basis for g2; row 0 is zero and unused (no mass at the origin)."""
    inner = standardize_columns(natural_spline_basis(grid.scaled[1:], df))
    entries = np.vstack([np.zeros((1, df)), inner.entries])
    return BasisMatrix(entries, inner.knots, standardized=True)


def _check(Q, alpha):
    Q = np.asarray(Q, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if Q.ndim != 2 or alpha.shape != (Q.shape[1],):
        raise ValueError(f"alpha of shape {alpha.shape} does not match basis {Q.shape}")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite")
    return Q, alpha


def _mass(eta: np.ndarray) -> np.ndarray:
    w = np.exp(eta - eta.max())
    return w / w.sum()


def density(Q, alpha, offset=None) -> np.ndarray:
    """Probability vector ``exp(Q alpha + offset - phi)``.

    ``offset`` is a fixed per-point term added to the natural parameter (used
    by exponential tilting); it defaults to zero.
    """
    Q, alpha = _check(Q, alpha)
    eta = Q @ alpha
    if offset is not None:
        eta = eta + offset
    return _mass(eta)


def log_normalizer(Q, alpha) -> float:
    Q, alpha = _check(Q, alpha)
    return float(logsumexp(Q @ alpha))


def log_density_gradient(Q, alpha, offset=None) -> np.ndarray:
    """d log g_j / d alpha: row ``j`` is ``Q_j`` minus the g-weighted mean row."""
    Q, alpha = _check(Q, alpha)
    g = density(Q, alpha, offset)
    return Q - g @ Q


def positive_support_density(Q, alpha) -> np.ndarray:
    """Density with zero mass at ``d_1``; uses only rows 2..k of ``Q``."""
    Q, alpha = _check(Q, alpha)
    if Q.shape[0] < 2:
        raise ValueError("positive-support density needs k >= 2")
    out = np.zeros(Q.shape[0])
    out[1:] = _mass(Q[1:] @ alpha)
    return out
