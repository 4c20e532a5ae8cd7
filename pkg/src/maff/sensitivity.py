"""Sensitivity analysis for dependence between malarial and non-malarial fever.

Two departures from independence are parameterized:

``delta1``
    exponential tilt of the latent density among children with a
    non-malarial fever, ``f(d | fever) = exp(delta0 + delta1 d) g1(d)``, with
    ``delta0`` fixing the normalization;
``tau``
    ratio ``P(no nmi fever | malarial) / P(no nmi fever | not malarial)``.

The tilt changes the fitted mixture; ``tau`` enters only the final
conversion ``lam = lam* tau (1 - p) / (1 - p lam*)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .data import SurveyDataset
from .gmodel import DiscreteDensity, Grid, density
from .likelihood import BOX_MARGIN, FitConfig, FitResult, MixtureProblem, fit_problem

__all__ = [
    "SensitivityParams",
    "tilt_density",
    "tilt_normalizer",
    "generalized_maff",
    "sensitivity_fit",
    "sensitivity_grid",
    "SensitivityCell",
    "dependent_population",
    "DEFAULT_DELTA1_RANGE",
    "DEFAULT_TAU_RANGE",
]

DEFAULT_DELTA1_RANGE = (0.0, 1.0 / 40000.0)
DEFAULT_TAU_RANGE = (1.0, 1.06)
# reporting scale for delta1: 40000 * delta1 lies in [0, 1] over the default range
DELTA1_AXIS_SCALE = 40000.0


@dataclass(frozen=True)
class SensitivityParams:
    delta1: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.delta1) or self.delta1 < 0:
            raise ValueError(f"delta1 must be finite and >= 0, got {self.delta1}")
        if not np.isfinite(self.tau) or self.tau < 1:
            raise ValueError(f"tau must be finite and >= 1, got {self.tau}")


def tilt_normalizer(Q1, alpha1, delta1: float, grid: Grid) -> float:
    """``delta0 = log sum exp(Q1 a) - log sum exp(Q1 a + delta1 d)``."""
    eta = np.asarray(Q1, float) @ np.asarray(alpha1, float)
    return float(logsumexp(eta) - logsumexp(eta + delta1 * grid.values))


def tilt_density(Q1, alpha1, delta1: float, grid: Grid) -> DiscreteDensity:
    """Tilted ``g1`` on the unscaled grid, ``mass_j ~ g1(d_j) exp(delta1 d_j)``."""
    if delta1 < 0:
        raise ValueError("delta1 must be nonnegative")
    offset = delta1 * grid.values if delta1 > 0 else None
    return DiscreteDensity(density(Q1, alpha1, offset), grid.values)


def generalized_maff(lambda_star, p, tau=1.0):
    """``(lam, pi0, infeasible)`` for the dependence-adjusted conversion.

    ``pi0 = (1 - p) / (1 - p lam*)`` is the probability of no non-malarial
    fever among children without malaria-caused fever; ``tau pi0 > 1`` is not
    a probability and is reported as infeasible.
    """
    lambda_star = float(lambda_star)
    p = float(p)
    if not (0 <= lambda_star <= 1 and 0 <= p <= 1):
        raise ValueError("lambda_star and p must lie in [0, 1]")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    denom = 1.0 - p * lambda_star
    if denom <= 0:
        raise ValueError("p * lambda_star must be below 1")
    pi0 = (1.0 - p) / denom
    return float(lambda_star * tau * pi0), float(pi0), bool(tau * pi0 > 1.0)


def _result(base: FitResult, params: SensitivityParams) -> FitResult:
    raw, pi0, infeasible = generalized_maff(base.lambda_star_hat, base.p_hat, params.tau)
    extra = dict(base.extra)
    extra.update(delta1=params.delta1, tau=params.tau, pi0=pi0, maff_raw=raw,
                 infeasible=infeasible, capped=bool(raw > 1.0))
    return replace(base, maff_hat=min(raw, 1.0), extra=extra)


def sensitivity_fit(dataset: SurveyDataset, config: FitConfig | None = None,
                    params: SensitivityParams | None = None, grid: Grid | None = None) -> FitResult:
    """Refit with the tilted febrile non-malarial component and convert with ``tau``.

    The afebrile component stays ``g1``. At ``delta1 = 0, tau = 1`` the result
    equals :func:`maff.likelihood.fit`. ``extra`` carries ``pi0``, the raw
    (uncapped) estimate and ``infeasible`` / ``capped`` flags.
    """
    config = config or FitConfig()
    params = params or SensitivityParams()
    dataset.require_both_groups()
    grid = grid or config.grid_for(dataset)
    prob = MixtureProblem(dataset, grid, config.kernel, config.m1, config.m2, params.delta1)
    p0 = float(np.clip(prob.n_f / (prob.n_a + prob.n_f), BOX_MARGIN, 1 - BOX_MARGIN))
    return _result(fit_problem(prob, config, p0), params)


@dataclass(frozen=True)
class SensitivityCell:
    delta1: float
    tau: float
    maff: float
    converged: bool
    infeasible: bool = False
    error: str = ""

    @property
    def delta1_scaled(self) -> float:
        return DELTA1_AXIS_SCALE * self.delta1

    def as_row(self) -> dict:
        return {"delta1": self.delta1, "delta1_scaled": self.delta1_scaled, "tau": self.tau,
                "maff": self.maff, "converged": self.converged, "infeasible": self.infeasible,
                "error": self.error}


def _axis(lo, hi, steps):
    if steps == 1:
        return np.array([float(lo)])
    return np.linspace(float(lo), float(hi), int(steps))


def sensitivity_grid(dataset: SurveyDataset, config: FitConfig | None = None,
                     delta1_range=DEFAULT_DELTA1_RANGE, tau_range=DEFAULT_TAU_RANGE,
                     steps=5, threads: int = 1) -> list[SensitivityCell]:
    """MAFF over the Cartesian ``(delta1, tau)`` grid, rows ordered by ``delta1``.

    ``steps`` is an int or a ``(n_delta1, n_tau)`` pair. Only ``delta1``
    changes the fit, so one fit per ``delta1`` value is shared across the
    ``tau`` axis. A failing fit marks its cells with ``maff = nan`` and the
    error text; the rest of the grid is still computed.
    """
    config = config or FitConfig()
    nd, nt = (steps, steps) if np.isscalar(steps) else steps
    if nd < 1 or nt < 1:
        raise ValueError("steps must be positive")
    d_axis = _axis(*delta1_range, nd)
    t_axis = _axis(*tau_range, nt)
    if d_axis.min() < 0 or t_axis.min() < 1:
        raise ValueError("ranges must satisfy delta1 >= 0 and tau >= 1")
    grid = config.grid_for(dataset)

    def one(d1):
        try:
            return sensitivity_fit(dataset, config, SensitivityParams(float(d1), 1.0), grid), ""
        except (ValueError, ArithmeticError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(one, d_axis))
    else:
        fits = [one(d1) for d1 in d_axis]

    cells = []
    for d1, (res, err) in zip(d_axis, fits):
        for tau in t_axis:
            if res is None:
                cells.append(SensitivityCell(float(d1), float(tau), float("nan"), False, False, err))
                continue
            raw, _, infeasible = generalized_maff(res.lambda_star_hat, res.p_hat, tau)
            cells.append(SensitivityCell(float(d1), float(tau), min(raw, 1.0), res.converged, infeasible))
    return cells


def dependent_population(a: float, pi0: float, tau: float, g1=None, g2=None,
                         delta1: float = 0.0, support=None) -> dict:
    """Exact cell probabilities for a population with dependent fever causes.

    ``a = P(malaria-caused fever)``, ``pi0 = P(no nmi fever | no malarial
    fever)``, ``tau pi0 = P(no nmi fever | malarial fever)``. MAFF is the share
    of fevers that disappear without malaria, i.e. ``P(mi = 1, nmi = 0) / p``.
    When ``g1`` and ``g2`` mass vectors on ``support`` are given, the febrile
    latent density is also assembled cell by cell with the tilted ``g1`` for
    the non-malarial fevers.
    """
    if not 0 < a < 1 or not 0 < pi0 <= 1 or tau < 1 or tau * pi0 > 1:
        raise ValueError("need 0 < a < 1, 0 < pi0 <= 1, tau >= 1 and tau * pi0 <= 1")
    cells = {
        (1, 0): a * tau * pi0,
        (1, 1): a * (1 - tau * pi0),
        (0, 0): (1 - a) * pi0,
        (0, 1): (1 - a) * (1 - pi0),
    }
    p = cells[(1, 0)] + cells[(1, 1)] + cells[(0, 1)]
    out = {"p": p, "lambda_star": a / p, "maff": cells[(1, 0)] / p, "cells": cells}
    if g1 is not None:
        g1 = np.asarray(g1, float)
        g2 = np.asarray(g2, float)
        tilt = g1 * np.exp(delta1 * np.asarray(support, float))
        tilt /= tilt.sum()
        out["afebrile_density"] = g1
        out["febrile_density"] = ((cells[(1, 0)] + cells[(1, 1)]) * g2 + cells[(0, 1)] * tilt) / p
        out["tilted_g1"] = tilt
    return out
