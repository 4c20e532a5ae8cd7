"""Classical attributable-fraction estimators and population-level identities.

None of these account for fever killing or measurement error; they are the
comparison points for the deconvolution estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import SummaryTable, SurveyDataset, summarize
from .likelihood import adjust_or_to_maff

__all__ = [
    "EstimationError",
    "BaselineEstimate",
    "maff_rr_table",
    "maff_or_table",
    "logistic_fit",
    "maff_logistic",
    "maff_power_logistic",
    "PopulationSpec",
    "population_cells",
    "verify_propositions",
    "all_baselines",
]


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineEstimate:
    name: str
    estimate: float
    details: dict = field(default_factory=dict)

    @property
    def out_of_range(self) -> bool:
        return not 0.0 <= self.estimate <= 1.0

    def __float__(self):
        return float(self.estimate)


def maff_rr_table(summary: SummaryTable) -> BaselineEstimate:
    """Relative-risk plug-in ``p_f (R - 1) / R`` from the 2x2 table."""
    n_pos = summary.n_a1 + summary.n_f1
    n_zero = summary.n_a0 + summary.n_f0
    if n_pos == 0 or n_zero == 0 or summary.n_f0 == 0 or summary.n_febrile == 0:
        raise EstimationError("relative risk undefined: an empty cell in the denominator")
    risk_pos = summary.n_f1 / n_pos
    risk_zero = summary.n_f0 / n_zero
    R = risk_pos / risk_zero
    est = summary.p_f * (R - 1.0) / R
    return BaselineEstimate("RR", est, {"R": R, "p_f": summary.p_f})


def maff_or_table(summary: SummaryTable) -> BaselineEstimate:
    """Odds-ratio plug-in ``(p_f - p_a) / (1 - p_a)``."""
    p_a, p_f = summary.p_a, summary.p_f
    if p_a >= 1.0:
        raise EstimationError("odds-ratio estimate undefined when every afebrile child is positive")
    return BaselineEstimate("OR", (p_f - p_a) / (1.0 - p_a), {"p_f": p_f, "p_a": p_a})


def logistic_fit(z, y, maxiter: int = 100, tol: float = 1e-10):
    """Newton-Raphson logistic regression of ``y`` on ``[1, z]``.

    Returns ``(intercept, slope, loglik)``. Raises EstimationError on
    divergence, which in practice means (quasi-)separation.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.column_stack([np.ones_like(z), z])
    ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    coef = np.array([np.log(ybar / (1 - ybar)), 0.0])
    for _ in range(maxiter):
        eta = X @ coef
        mu = expit(eta)
        w = mu * (1 - mu)
        H = X.T @ (X * w[:, None])
        g = X.T @ (y - mu)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise EstimationError("singular information matrix in logistic fit") from None
        coef = coef + step
        if not np.all(np.isfinite(coef)) or np.max(np.abs(coef)) > 1e6:
            raise EstimationError("logistic fit diverged (separation?)")
        if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(coef))):
            break
    else:
        raise EstimationError("logistic fit did not converge")
    eta = X @ coef
    ll = float(np.sum(y * eta - np.logaddexp(0, eta)))
    if np.max(np.abs(eta)) > 30:
        raise EstimationError("logistic fit separates the data")
    return float(coef[0]), float(coef[1]), ll


def _rr_from_regression(intercept, slope, z_pos, p_f):
    p0 = expit(intercept)
    p_pos = float(np.mean(expit(intercept + slope * z_pos)))
    R = p_pos / p0
    return p_f * (R - 1.0) / R, R


def _check_classes(dataset: SurveyDataset):
    nf = int(dataset.fever.sum())
    if nf == 0 or nf == dataset.n:
        raise EstimationError("both fever classes are needed")
    if not np.any(dataset.density > 0):
        raise EstimationError("no parasite-positive records")


def maff_logistic(dataset: SurveyDataset) -> BaselineEstimate:
    """Logistic regression on ``log(1 + D)``, mapped through the RR formula."""
    _check_classes(dataset)
    z = np.log1p(dataset.density)
    a, b, ll = logistic_fit(z, dataset.fever)
    p_f = summarize(dataset).p_f
    est, R = _rr_from_regression(a, b, z[dataset.density > 0], p_f)
    return BaselineEstimate("L", est, {"intercept": a, "slope": b, "R": R, "loglik": ll})


POWER_GRID = np.geomspace(0.05, 2.0, 61)


def maff_power_logistic(dataset: SurveyDataset, powers=POWER_GRID) -> BaselineEstimate:
    """Logistic regression on ``D**c`` with ``c`` profiled over a grid."""
    _check_classes(dataset)
    d = dataset.density
    best = None
    for c in powers:
        z = d ** c
        s = z.std() or 1.0  # rescale for conditioning; slope is mapped back
        try:
            a, b, ll = logistic_fit(z / s, dataset.fever)
        except EstimationError:
            continue
        if best is None or ll > best[3]:
            best = (c, a, b / s, ll)
    if best is None:
        raise EstimationError("power logistic fit failed for every power")
    c, a, b, ll = best
    p_f = summarize(dataset).p_f
    pos = d > 0
    est, R = _rr_from_regression(a, b, d[pos] ** c, p_f)
    return BaselineEstimate("P", est, {"power": c, "intercept": a, "slope": b, "R": R, "loglik": ll})


def all_baselines(dataset: SurveyDataset) -> list[BaselineEstimate]:
    """Every baseline that can be computed; failures are reported as NaN with the reason."""
    s = summarize(dataset)
    out = []
    for name, fn, arg in (("RR", maff_rr_table, s), ("OR", maff_or_table, s),
                          ("L", maff_logistic, dataset), ("P", maff_power_logistic, dataset)):
        try:
            out.append(fn(arg))
        except (EstimationError, ValueError) as exc:
            out.append(BaselineEstimate(name, float("nan"), {"error": str(exc)}))
    return out


# --- population identities ----------------------------------------------------


@dataclass(frozen=True)
class PopulationSpec:
    """Population with independent malarial / non-malarial fever indicators.

    ``a = P(Y_mi = 1)``, ``b = P(Y_nmi = 1)``. Every malarial fever has a
    positive density; among the rest a fraction ``positive_share`` is
    parasite-positive. ``pi0`` and ``tau`` describe a dependent population for
    the sensitivity oracle and are ignored here.
    """

    a: float
    b: float
    independent: bool = True
    positive_share: float = 0.5
    pi0: float | None = None
    tau: float | None = None

    def __post_init__(self):
        for name in ("a", "b", "positive_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def population_cells(spec: PopulationSpec) -> dict:
    """Joint probabilities of (fever, density > 0)."""
    a, b, t = spec.a, spec.b, spec.positive_share
    return {
        "f1": a + t * (1 - a) * b,          # febrile, positive
        "f0": (1 - t) * (1 - a) * b,        # febrile, zero
        "a1": t * (1 - a) * (1 - b),        # afebrile, positive
        "a0": (1 - t) * (1 - a) * (1 - b),  # afebrile, zero
    }


@dataclass
class PropositionReport:
    maff: float
    rr_plim: float
    or_plim: float
    p: float
    residuals: dict

    @property
    def max_residual(self) -> float:
        vals = [abs(v) for v in self.residuals.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    def lines(self) -> list[str]:
        return [f"{k}: residual {v:.3e}" for k, v in self.residuals.items()]


def verify_propositions(spec: PopulationSpec) -> PropositionReport:
    """Evaluate both plug-in limits exactly and check them against the MAFF.

    Checks: RR limit equals the MAFF; OR limit equals ``a / p`` and equals the
    RR limit divided by ``P(Y_nmi = 0)``; the OR-to-MAFF adjustment maps the
    OR limit back to the MAFF.
    """
    if not spec.independent:
        raise ValueError("the identities assume independent fever mechanisms")
    a, b = spec.a, spec.b
    cells = population_cells(spec)
    p = cells["f1"] + cells["f0"]
    if p == 0:
        nan = float("nan")
        return PropositionReport(nan, nan, nan, 0.0, {"prop1": nan, "prop2": nan, "prop2_rr": nan, "prop3": nan})
    maff = a * (1 - b) / p
    pos = cells["f1"] + cells["a1"]
    zero = cells["f0"] + cells["a0"]
    p_f = cells["f1"] / p
    # 1/R = P(Y=1 | D=0) / P(Y=1 | D>0); stays finite when b = 0
    inv_R = (cells["f0"] / zero if zero > 0 else b) / (cells["f1"] / pos)
    rr_plim = p_f * (1.0 - inv_R)
    p_a = cells["a1"] / (1 - p) if p < 1 else spec.positive_share
    or_plim = (p_f - p_a) / (1.0 - p_a) if p_a < 1 else float("nan")
    res = {
        "prop1": rr_plim - maff,
        "prop2": or_plim - a / p,
        "prop2_rr": (rr_plim / (1 - b) - or_plim) if b < 1 else float("nan"),
        "prop3": (adjust_or_to_maff(min(or_plim, 1.0), p) - maff) if p * min(or_plim, 1.0) < 1 else float("nan"),
    }
    return PropositionReport(maff, rr_plim, or_plim, p, res)
