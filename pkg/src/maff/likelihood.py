"""Two-component mixture likelihood for febrile / afebrile survey data.

Afebrile densities are ``f o g1``; febrile densities are the mixture
``(1 - lam) f o g1* + lam f o g2`` on the fever-killed support ``beta * d_j``.
Parameters are ``theta = (p, lam, alpha1, alpha2)`` where ``p`` is fever
prevalence and ``lam`` the odds-ratio-type mixing proportion, converted to the
attributable fraction with :func:`adjust_or_to_maff`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .data import SurveyDataset
from .gmodel import DiscreteDensity, Grid, default_grid, density, g1_basis, g2_basis, make_grid, positive_support_density
from .kernels import MeasurementKernel, Poisson, kernel_from_name, kernel_matrix

__all__ = [
    "InfeasibleSupportError",
    "FitConfig",
    "FitResult",
    "MixtureProblem",
    "mixture_loglik",
    "penalized_objective",
    "objective_gradient",
    "fit",
    "adjust_or_to_maff",
]

log = logging.getLogger(__name__)

BOX_MARGIN = 1e-6


class InfeasibleSupportError(ValueError):
    """Some observation has zero probability under every grid point."""


def adjust_or_to_maff(lambda_star, p):
    """Convert the mixing proportion to the attributable fraction.

    ``lam = (lam* - p lam*) / (1 - p lam*)``.
    """
    lambda_star = np.asarray(lambda_star, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((lambda_star < 0) | (lambda_star > 1)) or np.any((p < 0) | (p > 1)):
        raise ValueError("lambda_star and p must lie in [0, 1]")
    denom = 1.0 - p * lambda_star
    if np.any(denom <= 0):
        raise ValueError("p * lambda_star must be below 1")
    out = (lambda_star - p * lambda_star) / denom
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FitConfig:
    k: int = 101
    grid_max: float | None = None
    grid_expand: float = 1.2
    m1: int = 4
    m2: int = 3
    kernel: MeasurementKernel = field(default_factory=Poisson)
    beta: float = 1.0
    c0: float = 1.0
    eps: float = 1e-8
    gtol: float = 1e-6
    ftol: float = 1e-12
    maxiter: int = 2000
    lambda_init: float = 0.5
    multistart: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("m1 and m2 must be at least 1")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.k < max(self.m1, self.m2) + 2:
            raise ValueError("grid too small for the requested spline df")

    def grid_for(self, dataset: SurveyDataset) -> Grid:
        if self.grid_max is not None:
            return make_grid(self.grid_max, self.k, self.beta)
        return default_grid(dataset.afebrile(), dataset.febrile(), self.beta, self.k, self.grid_expand)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.describe()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        kern = d.pop("kernel", None)
        if isinstance(kern, dict):
            kern = dict(kern)
            name = kern.pop("kernel")
            wbc = (kern["wbc"], kern["probs"]) if "wbc" in kern else None
            kern = kernel_from_name(name, r=kern.get("r", 6.0), scale=kern.get("scale", 40.0), wbc=wbc)
        if kern is not None:
            d["kernel"] = kern
        return cls(**d)


@dataclass
class FitResult:
    p_hat: float
    lambda_star_hat: float
    maff_hat: float
    alpha1: np.ndarray
    alpha2: np.ndarray
    objective: float
    loglik: float
    grad_norm: float
    converged: bool
    iterations: int
    message: str = ""
    grid: np.ndarray | None = field(default=None, repr=False)
    beta: float = 1.0
    g1: np.ndarray | None = field(default=None, repr=False)
    g2: np.ndarray | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    def to_dict(self, densities: bool = False) -> dict:
        out = {
            "p_hat": self.p_hat,
            "lambda_star_hat": self.lambda_star_hat,
            "maff_hat": self.maff_hat,
            "alpha1": [float(a) for a in self.alpha1],
            "alpha2": [float(a) for a in self.alpha2],
            "objective": self.objective,
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
        }
        out.update(self.extra)
        if densities and self.grid is not None:
            out["grid"] = [float(v) for v in self.grid]
            out["g1"] = [float(v) for v in self.g1]
            out["g2"] = [float(v) for v in self.g2]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


class MixtureProblem:
    """Precomputed kernel matrices and bases for one dataset and grid.

    ``delta1`` tilts the febrile non-malarial component by ``exp(delta1 * d)``
    on the unscaled grid; zero leaves it equal to ``g1``.
    """

    def __init__(self, dataset: SurveyDataset, grid: Grid, kernel: MeasurementKernel,
                 m1: int, m2: int, delta1: float = 0.0):
        dataset.require_both_groups()
        if delta1 < 0:
            raise ValueError("delta1 must be nonnegative")
        self.grid = grid
        self.kernel = kernel
        self.m1, self.m2 = int(m1), int(m2)
        self.n_a = int(np.sum(dataset.fever == 0))
        self.n_f = int(np.sum(dataset.fever == 1))
        self.Q1 = g1_basis(grid, self.m1).entries
        self.Q2 = g2_basis(grid, self.m2).entries
        self.offset = delta1 * grid.values if delta1 > 0 else None
        self.Fa, self.ca = self._scaled_kernel(dataset.afebrile(), scaled=False)
        self.Ff, self.cf = self._scaled_kernel(dataset.febrile(), scaled=True)
        self.const = float(self.ca.sum() + self.cf.sum())

    def _scaled_kernel(self, x, scaled):
        F = kernel_matrix(self.kernel, x, self.grid, scaled=scaled)
        with np.errstate(divide="ignore"):
            rowmax = F.max(axis=1)
        if np.any(rowmax <= 0):
            bad = np.flatnonzero(rowmax <= 0)[:5]
            raise InfeasibleSupportError(
                f"observations {x[bad].tolist()} have zero probability on the grid"
            )
        # log-scale each row so far-tail rows keep relative precision
        return F / rowmax[:, None], np.log(rowmax)

    @property
    def n_params(self) -> int:
        return 2 + self.m1 + self.m2

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        p, lam = theta[0], theta[1]
        a1 = theta[2:2 + self.m1]
        a2 = theta[2 + self.m1:]
        return p, lam, a1, a2

    def densities(self, a1, a2):
        g1 = density(self.Q1, a1)
        g2 = positive_support_density(self.Q2, a2)
        t = g1 if self.offset is None else density(self.Q1, a1, self.offset)
        return g1, g2, t

    def _pieces(self, theta):
        p, lam, a1, a2 = self.split(theta)
        g1, g2, t = self.densities(a1, a2)
        a = self.Fa @ g1
        u = self.Ff @ t
        v = self.Ff @ g2
        b = (1.0 - lam) * u + lam * v
        return p, lam, a1, a2, g1, g2, t, a, u, v, b

    def loglik(self, theta) -> float:
        p, lam, a1, a2, g1, g2, t, a, u, v, b = self._pieces(theta)
        if not (0 < p < 1) or not (0 <= lam <= 1):
            raise ValueError("p must lie in (0, 1) and lambda_star in [0, 1]")
        if np.any(a <= 0) or np.any(b <= 0):
            return -np.inf
        return float(self.n_a * np.log1p(-p) + self.n_f * np.log(p)
                     + np.sum(np.log(a)) + np.sum(np.log(b)) + self.const)

    @staticmethod
    def penalty(a1, a2, c0, eps):
        return c0 * np.sqrt(a1 @ a1 + a2 @ a2 + eps)

    def objective(self, theta, c0=1.0, eps=1e-8) -> float:
        _, _, a1, a2 = self.split(theta)
        return self.loglik(theta) - self.penalty(a1, a2, c0, eps)

    def value_and_grad(self, theta, c0=1.0, eps=1e-8):
        p, lam, a1, a2, g1, g2, t, a, u, v, b = self._pieces(theta)
        if np.any(a <= 0) or np.any(b <= 0):
            return -np.inf, np.full(self.n_params, np.nan)
        pen = self.penalty(a1, a2, c0, eps)
        val = (self.n_a * np.log1p(-p) + self.n_f * np.log(p)
               + np.sum(np.log(a)) + np.sum(np.log(b)) + self.const - pen)

        grad = np.empty(self.n_params)
        grad[0] = self.n_f / p - self.n_a / (1.0 - p)
        grad[1] = np.sum((v - u) / b)

        ra = (1.0 / a) @ self.Fa  # sum_i F_ij / a_i
        rf = (1.0 / b) @ self.Ff
        wa = ra * g1
        wt = (1.0 - lam) * rf * t
        w2 = lam * rf * g2
        g_a1 = wa @ self.Q1 - wa.sum() * (g1 @ self.Q1)
        g_a1 += wt @ self.Q1 - wt.sum() * (t @ self.Q1)
        g_a2 = w2 @ self.Q2 - w2.sum() * (g2 @ self.Q2)
        scale = c0 / np.sqrt(a1 @ a1 + a2 @ a2 + eps)
        grad[2:2 + self.m1] = g_a1 - scale * a1
        grad[2 + self.m1:] = g_a2 - scale * a2
        return float(val), grad


def _problem(dataset, grid, kernel, m1, m2, delta1=0.0):
    return MixtureProblem(dataset, grid, kernel, m1, m2, delta1)


def mixture_loglik(dataset, grid, kernel, beta, p, lambda_star, alpha1, alpha2) -> float:
    """Mixture log-likelihood; spline df are taken from the alpha lengths."""
    if not np.isclose(grid.beta, beta):
        grid = Grid(grid.values, beta)
    alpha1 = np.atleast_1d(np.asarray(alpha1, float))
    alpha2 = np.atleast_1d(np.asarray(alpha2, float))
    prob = _problem(dataset, grid, kernel, alpha1.size, alpha2.size)
    val = prob.loglik(np.concatenate([[p, lambda_star], alpha1, alpha2]))
    if not np.isfinite(val):
        raise InfeasibleSupportError("an observation has zero mixture probability")
    return val


def penalized_objective(dataset, grid, kernel, beta, p, lambda_star, alpha1, alpha2,
                        c0=1.0, eps=1e-8) -> float:
    ll = mixture_loglik(dataset, grid, kernel, beta, p, lambda_star, alpha1, alpha2)
    a = np.concatenate([np.atleast_1d(alpha1), np.atleast_1d(alpha2)]).astype(float)
    return ll - c0 * np.sqrt(a @ a + eps)


def objective_gradient(dataset, grid, kernel, beta, p, lambda_star, alpha1, alpha2,
                       c0=1.0, eps=1e-8) -> np.ndarray:
    """Analytic gradient of the penalized objective over ``(p, lam, alpha1, alpha2)``."""
    if not np.isclose(grid.beta, beta):
        grid = Grid(grid.values, beta)
    alpha1 = np.atleast_1d(np.asarray(alpha1, float))
    alpha2 = np.atleast_1d(np.asarray(alpha2, float))
    prob = _problem(dataset, grid, kernel, alpha1.size, alpha2.size)
    _, g = prob.value_and_grad(np.concatenate([[p, lambda_star], alpha1, alpha2]), c0, eps)
    return g


def _optimize(prob: MixtureProblem, theta0, config: FitConfig):
    bounds = [(BOX_MARGIN, 1 - BOX_MARGIN)] * 2 + [(None, None)] * (prob.m1 + prob.m2)
    trace = []

    def fun(x):
        val, g = prob.value_and_grad(x, config.c0, config.eps)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(x)
        return -val, -g

    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                   callback=lambda xk: trace.append(None),
                   options={"maxiter": config.maxiter, "gtol": config.gtol,
                            "ftol": config.ftol, "maxcor": 20, "maxls": 50})
    return res


def _projected_grad_norm(x, g):
    pg = g.copy()
    for i in (0, 1):
        lo, hi = BOX_MARGIN, 1 - BOX_MARGIN
        if x[i] <= lo and g[i] < 0:
            pg[i] = 0.0
        if x[i] >= hi and g[i] > 0:
            pg[i] = 0.0
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def fit_problem(prob: MixtureProblem, config: FitConfig, p0: float) -> FitResult:
    starts = [config.lambda_init]
    if config.multistart:
        starts = [config.lambda_init] + [s for s in (0.1, 0.3, 0.5, 0.7, 0.9) if s != config.lambda_init]
    best = None
    for lam0 in starts:
        theta0 = np.concatenate([[p0, lam0], np.zeros(prob.m1 + prob.m2)])
        res = _optimize(prob, theta0, config)
        if best is None or res.fun < best.fun:
            best = res
    res = best
    x = res.x
    val, g = prob.value_and_grad(x, config.c0, config.eps)
    if not np.isfinite(val):
        raise InfeasibleSupportError("optimizer ended at a point with zero likelihood")
    p, lam, a1, a2 = prob.split(x)
    g1, g2, _ = prob.densities(a1, a2)
    # raises if either fitted density fails normalization
    DiscreteDensity(g1, prob.grid.values)
    DiscreteDensity(g2, prob.grid.scaled)
    gnorm = _projected_grad_norm(x, g)
    # L-BFGS-B can stop on a line-search failure at a stationary point.
    converged = bool(res.success) or gnorm <= max(config.gtol, 1e-4)
    return FitResult(
        p_hat=float(p),
        lambda_star_hat=float(lam),
        maff_hat=adjust_or_to_maff(float(lam), float(p)),
        alpha1=a1.copy(),
        alpha2=a2.copy(),
        objective=float(val),
        loglik=prob.loglik(x),
        grad_norm=gnorm,
        converged=converged,
        iterations=int(res.nit),
        message=str(res.message),
        grid=prob.grid.values.copy(),
        beta=prob.grid.beta,
        g1=g1,
        g2=g2,
    )


def fit(dataset: SurveyDataset, config: FitConfig | None = None, grid: Grid | None = None) -> FitResult:
    """Maximize the penalized likelihood; ``c0 = 0`` gives the regular MLE."""
    config = config or FitConfig()
    dataset.require_both_groups()
    grid = grid or config.grid_for(dataset)
    prob = MixtureProblem(dataset, grid, config.kernel, config.m1, config.m2)
    p0 = float(np.clip(prob.n_f / (prob.n_a + prob.n_f), BOX_MARGIN, 1 - BOX_MARGIN))
    return fit_problem(prob, config, p0)
