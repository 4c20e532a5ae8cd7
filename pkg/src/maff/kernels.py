"""Measurement-error kernels ``f(x; d) = P(D_obs = x | D_cur = d)``.

Densities are in parasites per microlitre. Count-based kernels work on the
microscopy count ``c = x / scale`` (``scale`` = 40 for 200 WBC at a nominal
8000 WBC/ul).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp, xlogy

__all__ = [
    "KernelError",
    "MeasurementKernel",
    "Exact",
    "Poisson",
    "NegBin",
    "WbcMixNegBin",
    "DEFAULT_WBC",
    "kernel_from_name",
    "kernel_prob",
    "kernel_matrix",
    "round_to_counts",
    "FalseNegativeRecord",
    "DispersionEstimate",
    "estimate_dispersion",
    "read_false_negative_csv",
    "read_wbc_csv",
]

NOMINAL_WBC = 8000.0
WBC_COUNTED = 200.0

# WBC per microlitre and their probabilities.
DEFAULT_WBC = (
    (4000.0, 5000.0, 6000.0, 7000.0, 8000.0, 9000.0, 10000.0, 11000.0, 12000.0),
    (0.12, 0.16, 0.20, 0.16, 0.16, 0.10, 0.04, 0.04, 0.02),
)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementKernel:
    scale: float = 40.0

    name = "abstract"
    count_based = True

    def __post_init__(self):
        if not self.scale > 0:
            raise KernelError("scale must be positive")

    def log_pmf_counts(self, counts: np.ndarray, mean_density: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kernel": self.name, "scale": self.scale}


@dataclass(frozen=True)
class Exact(MeasurementKernel):
    name = "exact"
    count_based = False


@dataclass(frozen=True)
class Poisson(MeasurementKernel):
    name = "poisson"

    def log_pmf_counts(self, c, d):
        mu = d / self.scale
        return xlogy(c, mu) - mu - gammaln(c + 1.0)


def _nb_logpmf(c, mu, r):
    # mean mu, size r; the mu = 0 row is a point mass at zero.
    return (gammaln(c + r) - gammaln(r) - gammaln(c + 1.0)
            - r * np.log1p(mu / r) + xlogy(c, mu) - xlogy(c, r + mu))


@dataclass(frozen=True)
class NegBin(MeasurementKernel):
    r: float = 6.0
    name = "negbin"

    def __post_init__(self):
        super().__post_init__()
        if not self.r > 0:
            raise KernelError("dispersion r must be positive")

    def log_pmf_counts(self, c, d):
        return _nb_logpmf(c, d / self.scale, self.r)

    def describe(self):
        return {**super().describe(), "r": self.r}


@dataclass(frozen=True)
class WbcMixNegBin(MeasurementKernel):
    """Negative binomial count whose mean depends on the child's WBC count.

    With ``w`` WBC/ul the count over 200 WBC has mean ``d * 200 / w``; the
    reported density is always ``scale`` times the count.
    """

    r: float = 6.0
    wbc: tuple = DEFAULT_WBC[0]
    probs: tuple = DEFAULT_WBC[1]
    name = "wbc-negbin"

    def __post_init__(self):
        super().__post_init__()
        if not self.r > 0:
            raise KernelError("dispersion r must be positive")
        w = np.asarray(self.wbc, dtype=float)
        h = np.asarray(self.probs, dtype=float)
        if w.shape != h.shape or w.ndim != 1 or w.size == 0:
            raise KernelError("wbc values and probabilities must be equal-length vectors")
        if np.any(w <= 0) or np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise KernelError("wbc values must be positive and probabilities sum to 1")
        object.__setattr__(self, "wbc", tuple(map(float, w)))
        object.__setattr__(self, "probs", tuple(map(float, h)))

    def component_log_pmf(self, c, d, w):
        # d / (w / 200) rather than d * 200 / w: at w = 8000 this is d / 40 exactly
        return _nb_logpmf(c, d / (w / WBC_COUNTED), self.r)

    def log_pmf_counts(self, c, d):
        c, d = np.broadcast_arrays(np.asarray(c, float), np.asarray(d, float))
        terms = [np.log(h) + self.component_log_pmf(c, d, w)
                 for w, h in zip(self.wbc, self.probs) if h > 0]
        return logsumexp(np.stack(terms), axis=0)

    def describe(self):
        return {**super().describe(), "r": self.r, "wbc": list(self.wbc), "probs": list(self.probs)}


def kernel_from_name(name: str, r: float = 6.0, scale: float = 40.0, wbc=None) -> MeasurementKernel:
    name = name.lower()
    if name == "exact":
        return Exact(scale)
    if name in ("poisson", "m1"):
        return Poisson(scale)
    if name in ("negbin", "nb", "m2"):
        return NegBin(scale, r)
    if name in ("wbc-negbin", "wbc", "m3"):
        if wbc is None:
            return WbcMixNegBin(scale, r)
        return WbcMixNegBin(scale, r, tuple(wbc[0]), tuple(wbc[1]))
    raise KernelError(f"unknown kernel {name!r}")


def round_to_counts(x, scale: float = 40.0, warn: bool = True) -> np.ndarray:
    """Counts ``x / scale`` rounded to integers, warning once if any moved."""
    x = np.asarray(x, dtype=float)
    c = x / scale
    rc = np.rint(c)
    off = np.abs(c - rc) > 1e-9
    if warn and off.any():
        warnings.warn(
            f"{int(off.sum())} observed densities are not multiples of {scale:g}; rounded to the nearest multiple",
            stacklevel=3,
        )
    return rc


def kernel_prob(kernel: MeasurementKernel, x_obs, d):
    """Probability of reporting density ``x_obs`` given true density ``d``."""
    x_obs = np.asarray(x_obs, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(x_obs < 0) or np.any(d < 0):
        raise KernelError("densities must be nonnegative")
    if not kernel.count_based:
        out = (x_obs == d).astype(float)
    else:
        c = round_to_counts(x_obs, kernel.scale)
        out = np.exp(kernel.log_pmf_counts(c, d))
    return float(out) if out.ndim == 0 else out


def kernel_matrix(kernel: MeasurementKernel, observations, grid, scaled: bool = False) -> np.ndarray:
    """n x k matrix ``F[i, j] = f(x_i; d_j)`` (``beta * d_j`` when ``scaled``).

    For the exact kernel each row is one-hot at the nearest support point, so
    observations already on the support reproduce the delta kernel.
    """
    x = np.asarray(observations, dtype=float)
    if np.any(x < 0):
        raise KernelError("densities must be nonnegative")
    support = grid.scaled if scaled else grid.values
    support = np.asarray(support, dtype=float)
    if not kernel.count_based:
        out = np.zeros((x.size, support.size))
        idx = np.clip(np.searchsorted(support, x), 1, support.size - 1)
        left = support[idx - 1]
        right = support[idx]
        idx = np.where(x - left <= right - x, idx - 1, idx)
        out[np.arange(x.size), idx] = 1.0
        return out
    c = round_to_counts(x, kernel.scale)
    return np.exp(kernel.log_pmf_counts(c[:, None], support[None, :]))


# --- dispersion from false-negative slide readings ---------------------------------


@dataclass(frozen=True)
class FalseNegativeRecord:
    mean_density: float
    negatives: float
    slides: float = 25

    def __post_init__(self):
        if self.mean_density < 0:
            raise KernelError("mean density must be nonnegative")
        if not 0 <= self.negatives <= self.slides or self.slides <= 0:
            raise KernelError("need 0 <= negatives <= slides and slides > 0")


@dataclass(frozen=True)
class DispersionEstimate:
    r: float
    loglik: float
    n_records: int
    bounds: tuple = field(default=(0.1, 1e4))

    @property
    def at_bound(self) -> bool:
        lo, hi = self.bounds
        return math.isclose(self.r, lo, rel_tol=1e-3) or math.isclose(self.r, hi, rel_tol=1e-3)


def _nb_zero_log(mu, r):
    return -r * np.log1p(mu / r)


def _fn_loglik(r, x, y, n, scale):
    log_p0 = _nb_zero_log(x / scale, r)
    # log(1 - p0) computed stably
    log_p1 = np.log(-np.expm1(log_p0))
    return float(np.sum(xlogy(y, np.exp(log_p0)) + xlogy(n - y, np.exp(log_p1))))


def estimate_dispersion(records: Sequence[FalseNegativeRecord], scale: float = 40.0,
                        bounds=(0.1, 1e4)) -> DispersionEstimate:
    """Binomial maximum likelihood for the negative-binomial dispersion.

    Each record is a number of slides read negative out of ``slides``; the
    false-negative probability is the NB zero probability ``(r/(r+mu))^r`` at
    ``mu = mean_density / scale``. The search is one-dimensional over
    ``log r`` within ``bounds``.
    """
    if len(records) < 2:
        raise KernelError("need at least two records")
    x = np.array([rec.mean_density for rec in records], dtype=float)
    y = np.array([rec.negatives for rec in records], dtype=float)
    n = np.array([rec.slides for rec in records], dtype=float)
    if np.unique(x).size < 2:
        raise KernelError("need at least two distinct mean densities")
    if np.any(x <= 0):
        raise KernelError("mean densities must be positive")
    if not np.any((y > 0) & (y < n)):
        raise KernelError("dispersion is not identifiable: every record is all-negative or all-positive")
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    res = minimize_scalar(lambda t: -_fn_loglik(np.exp(t), x, y, n, scale),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    r_hat = float(np.exp(res.x))
    return DispersionEstimate(r_hat, -float(res.fun), len(records), tuple(bounds))


def read_false_negative_csv(path) -> list[FalseNegativeRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    header = [h.strip() for h in rows[0]]
    if header != ["mean_density", "negatives", "slides"]:
        raise KernelError("expected header 'mean_density,negatives,slides'")
    for row in rows[1:]:
        out.append(FalseNegativeRecord(float(row[0]), float(row[1]), float(row[2])))
    return out


def read_wbc_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if [h.strip() for h in rows[0]] != ["wbc", "prob"]:
        raise KernelError("expected header 'wbc,prob'")
    w = tuple(float(r[0]) for r in rows[1:])
    h = tuple(float(r[1]) for r in rows[1:])
    return w, h
