"""Natural cubic spline bases for the discrete exponential families.

The construction follows the usual ``ns()`` recipe: a cubic B-spline basis on
boundary + interior knots, with the two second-derivative boundary conditions
projected out via a QR decomposition and the first B-spline dropped (no
intercept). Interior knots sit at equally spaced quantiles of the points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "BasisError",
    "BasisMatrix",
    "NaturalSpline",
    "natural_spline_basis",
    "standardize_columns",
]


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class BasisMatrix:
    entries: np.ndarray
    knots: np.ndarray  # boundary and interior knots, sorted
    standardized: bool = False

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _quantile_knots(x: np.ndarray, df: int) -> np.ndarray:
    n_interior = df - 1
    if n_interior == 0:
        return np.empty(0)
    probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    # numpy's default "linear" method is R's type 7.
    return np.quantile(x, probs)


class NaturalSpline:
    """Natural cubic spline basis with fixed knots.

    Evaluation outside the boundary knots is linear extrapolation, matching
    the natural boundary conditions.
    """

    order = 4

    def __init__(self, interior_knots, boundary_knots):
        self.interior = np.asarray(interior_knots, dtype=float)
        self.boundary = np.asarray(boundary_knots, dtype=float)
        lo, hi = self.boundary
        if not lo < hi:
            raise BasisError("boundary knots must be increasing")
        if self.interior.size and (self.interior.min() <= lo or self.interior.max() >= hi):
            raise BasisError("interior knots must lie strictly inside the boundary knots")
        self.all_knots = np.concatenate([[lo] * self.order, self.interior, [hi] * self.order])
        n_bs = self.all_knots.size - self.order
        # Second derivatives of each B-spline at the two boundaries.
        const = np.column_stack([
            BSpline(self.all_knots, np.eye(n_bs)[i], self.order - 1).derivative(2)(self.boundary)
            for i in range(n_bs)
        ])  # 2 x n_bs
        const = const[:, 1:]
        q, _ = np.linalg.qr(const.T, mode="complete")
        self._proj = q[:, 2:]  # (n_bs - 1) x df
        self.df = self._proj.shape[1]

    @property
    def knots(self) -> np.ndarray:
        return np.concatenate([[self.boundary[0]], self.interior, [self.boundary[1]]])

    def _bspline_design(self, x: np.ndarray, deriv: int = 0) -> np.ndarray:
        n_bs = self.all_knots.size - self.order
        if deriv == 0:
            out = BSpline.design_matrix(x, self.all_knots, self.order - 1).toarray()
            # design_matrix leaves the right endpoint with zero weight on the last basis.
            out[x == self.boundary[1], -1] = 1.0
            out[x == self.boundary[1], :-1] = 0.0
            return out
        spl = BSpline(self.all_knots, np.eye(n_bs), self.order - 1)
        return spl.derivative(deriv)(x)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.boundary
        inside = (x >= lo) & (x <= hi)
        n_bs = self.all_knots.size - self.order
        bs = np.empty((x.size, n_bs))
        if inside.any():
            bs[inside] = self._bspline_design(x[inside])
        for edge, mask in ((lo, x < lo), (hi, x > hi)):
            if mask.any():
                val = self._bspline_design(np.array([edge]))
                slope = self._bspline_design(np.array([edge]), deriv=1)
                bs[mask] = val + (x[mask] - edge)[:, None] * slope
        return bs[:, 1:] @ self._proj


def natural_spline_basis(points, df: int) -> BasisMatrix:
    """Unstandardized natural cubic spline basis evaluated at ``points``.

    Parameters
    ----------
    points : array_like
        Strictly increasing evaluation points, ``k`` of them.
    df : int
        Number of columns; ``1 <= df < k``. ``df - 1`` interior knots are
        placed at quantiles of the points.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 1:
        raise BasisError("points must be one-dimensional")
    if int(df) != df or df < 1 or df >= x.size:
        raise BasisError(f"df must be an integer in [1, {x.size - 1}], got {df}")
    if np.any(np.diff(x) <= 0):
        raise BasisError("points must be strictly increasing")
    spline = NaturalSpline(_quantile_knots(x, int(df)), (x[0], x[-1]))
    return BasisMatrix(spline(x), spline.knots)


def standardize_columns(basis) -> BasisMatrix:
    """Center each column and scale it to unit sum of squares."""
    if isinstance(basis, BasisMatrix):
        entries, knots = basis.entries, basis.knots
    else:
        entries, knots = np.asarray(basis, dtype=float), np.empty(0)
    centered = entries - entries.mean(axis=0)
    ss = np.sqrt(np.sum(centered ** 2, axis=0))
    scale = np.abs(entries).max(axis=0) if entries.size else ss
    if np.any(ss <= 1e-12 * np.maximum(scale, 1.0)):
        raise BasisError("cannot standardize a constant column")
    out = centered / ss
    # A second centering pass removes the rounding left by the first.
    out = out - out.mean(axis=0)
    out = out / np.sqrt(np.sum(out ** 2, axis=0))
    return BasisMatrix(out, knots, standardized=True)
