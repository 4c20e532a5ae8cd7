"""Nonparametric bootstrap standard errors over survey records."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import SurveyDataset

__all__ = ["BootstrapResult", "BootstrapError", "bootstrap_se", "resample_indices", "MAX_FAILURE_RATE"]

MAX_FAILURE_RATE = 0.2


@dataclass
class BootstrapResult:
    """Point estimate, replicate estimates and their standard deviation.

    ``replicates`` has length ``B`` with NaN for failed replicates; ``se`` is
    the sample standard deviation (ddof=1) of the finite ones.
    """

    estimate: float
    replicates: np.ndarray = field(repr=False)
    se: float
    failures: int
    seed: int
    errors: dict = field(default_factory=dict, repr=False)

    @property
    def B(self) -> int:
        return int(self.replicates.size)

    def to_dict(self, replicates: bool = False) -> dict:
        out = {"estimate": self.estimate, "se": self.se, "B": self.B,
               "failures": self.failures, "seed": self.seed}
        if replicates:
            out["replicates"] = [float(v) for v in self.replicates]
        return out


class BootstrapError(RuntimeError):
    """Too many replicates failed; the partial result is attached as ``.result``."""

    def __init__(self, message: str, result: BootstrapResult):
        super().__init__(message)
        self.result = result


def resample_indices(n: int, B: int, seed: int) -> list[np.ndarray]:
    """One index vector per replicate, each from its own spawned stream."""
    streams = np.random.SeedSequence(seed).spawn(B)
    return [np.random.default_rng(ss).integers(0, n, size=n) for ss in streams]


def _evaluate(estimator, dataset):
    try:
        val = float(estimator(dataset))
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        return float("nan"), f"{type(exc).__name__}: {exc}"
    if not np.isfinite(val):
        return float("nan"), "non-finite estimate"
    return val, ""


def bootstrap_se(dataset: SurveyDataset, estimator: Callable[[SurveyDataset], float],
                 B: int = 500, seed: int = 0, threads: int = 1) -> BootstrapResult:
    """Bootstrap standard error of ``estimator`` by resampling (fever, density) pairs.

    Records are put in canonical (fever, density) order before indices are
    drawn, so the result does not depend on input order. The estimator may
    return a float or raise; raising, NaN and infinite values count as
    failures and are excluded from ``se``.

    Raises
    ------
    BootstrapError
        If more than 20% of replicates fail.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    base = dataset.subset(dataset.canonical_order())
    point = float(estimator(base))
    samples = (base.subset(idx) for idx in resample_indices(base.n, B, seed))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(lambda d: _evaluate(estimator, d), samples))
    else:
        out = [_evaluate(estimator, d) for d in samples]
    reps = np.array([v for v, _ in out])
    errors = {i: e for i, (_, e) in enumerate(out) if e}
    ok = reps[np.isfinite(reps)]
    if ok.size < 2:
        se = float("nan")
    elif np.all(ok == ok[0]):
        se = 0.0  # avoid rounding residue from the mean
    else:
        se = float(np.std(ok, ddof=1))
    result = BootstrapResult(point, reps, se, len(errors), seed, errors)
    if len(errors) > MAX_FAILURE_RATE * B:
        raise BootstrapError(f"{len(errors)} of {B} bootstrap replicates failed", result)
    return result
