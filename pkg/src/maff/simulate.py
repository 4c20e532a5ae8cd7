"""Synthetic febrile / afebrile surveys with known attributable fraction.

Each child draws independent malarial and non-malarial fever indicators; the
latent density comes from ``g2`` for malarial fevers and ``g1`` otherwise, is
multiplied by ``beta`` for purely non-malarial fevers, and is then reported
through a measurement kernel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .data import SurveyDataset
from .kernels import Exact, MeasurementKernel, NegBin, Poisson, WbcMixNegBin, kernel_from_name

__all__ = [
    "ScenarioConfig",
    "GroundTruth",
    "mixing_from_targets",
    "sample_true_density",
    "observe",
    "generate_dataset",
    "situation",
]

CHUNK = 8192


def mixing_from_targets(prevalence: float, maff: float) -> tuple[float, float]:
    """(a, b) = (P(Y_mi=1), P(Y_nmi=1)) giving the requested fever prevalence and MAFF."""
    if not 0 < prevalence < 1 or not 0 <= maff <= 1:
        raise ValueError("prevalence must be in (0,1) and maff in [0,1]")
    b = prevalence * (1.0 - maff)
    a = prevalence * maff / (1.0 - b)
    return a, b


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation design.

    ``scenario`` is ``"expfamily"`` (point mass plus truncated normals) or
    ``"nonexpfamily"`` (adds uniform components). Densities are per microlitre.
    For ``"nonexpfamily"`` the zero mass of ``g1`` is ``q1`` and ``q2`` is the
    truncated-normal share of the positive part; ``q`` is used by
    ``"expfamily"``.
    """

    scenario: str = "expfamily"
    n: int = 1000
    q: float = 0.8
    beta: float = 1.0
    kernel: MeasurementKernel = field(default_factory=Poisson)
    mu1: float = 200.0
    sigma1: float = 200.0
    mu2: float = 600.0
    sigma2: float = 600.0
    q1: float = 1.0 / 8.0
    q2: float = 0.7
    prevalence: float = 0.1
    maff: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("expfamily", "nonexpfamily"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.q <= 1 or not 0 <= self.q1 <= 1 or not 0 <= self.q2 <= 1:
            raise ValueError("mixture weights must lie in [0, 1]")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def a(self) -> float:
        return mixing_from_targets(self.prevalence, self.maff)[0]

    @property
    def b(self) -> float:
        return mixing_from_targets(self.prevalence, self.maff)[1]

    @property
    def true_p(self) -> float:
        a, b = self.a, self.b
        return a + b - a * b

    @property
    def true_maff(self) -> float:
        a, b = self.a, self.b
        return a * (1 - b) / (a + b - a * b)

    @property
    def true_lambda_star(self) -> float:
        return self.a / self.true_p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.describe()
        return d


@dataclass
class GroundTruth:
    true_maff: float
    true_lambda_star: float
    true_p: float
    y_mi: np.ndarray = field(repr=False)
    y_nmi: np.ndarray = field(repr=False)
    d_no_nmi: np.ndarray = field(repr=False)
    d_cur: np.ndarray = field(repr=False)

    def empirical_maff(self) -> float:
        fever = (self.y_mi | self.y_nmi).astype(bool)
        return float(np.sum(fever & (self.y_nmi == 0)) / np.sum(fever))

    def to_dict(self, latents: bool = False) -> dict:
        out = {"true_maff": self.true_maff, "true_lambda_star": self.true_lambda_star,
               "true_p": self.true_p, "empirical_maff": self.empirical_maff()}
        if latents:
            out.update(y_mi=self.y_mi.tolist(), y_nmi=self.y_nmi.tolist(),
                       d_no_nmi=self.d_no_nmi.tolist(), d_cur=self.d_cur.tolist())
        return out


def _tn(rng, mu, sigma, size):
    return truncnorm.rvs((0.0 - mu) / sigma, np.inf, loc=mu, scale=sigma, size=size, random_state=rng)


def sample_true_density(config: ScenarioConfig, component: str, rng, size: int | None = None):
    """Draw latent (pre-fever-killing) densities from ``g1`` or ``g2``."""
    if config.sigma1 <= 0 or config.sigma2 <= 0:
        raise ValueError("sigma must be positive")
    n = 1 if size is None else int(size)
    if component == "g1":
        if config.scenario == "expfamily":
            zero = rng.random(n) < config.q
            out = _tn(rng, config.mu1, config.sigma1, n)
        else:
            u = rng.random(n)
            zero = u < config.q1
            tn = u < config.q1 + (1 - config.q1) * config.q2
            out = np.where(tn, _tn(rng, config.mu1, config.sigma1, n),
                           rng.uniform(0.0, 2 * config.mu1, n))
        out = np.where(zero, 0.0, out)
    elif component == "g2":
        out = _tn(rng, config.mu2, config.sigma2, n)
        if config.scenario == "nonexpfamily":
            tn = rng.random(n) < config.q2
            out = np.where(tn, out, rng.uniform(0.0, 2 * config.mu2, n))
        # uniform(0, .) can return exactly 0 with negligible probability
        out = np.where(out > 0, out, np.nextafter(0.0, 1.0))
    else:
        raise ValueError(f"component must be 'g1' or 'g2', got {component!r}")
    return float(out[0]) if size is None else out


def observe(kernel: MeasurementKernel, d_cur, rng) -> np.ndarray:
    """Reported densities for true current densities ``d_cur``."""
    d = np.asarray(d_cur, dtype=float)
    if isinstance(kernel, Exact):
        return d.copy()
    if isinstance(kernel, Poisson):
        return kernel.scale * rng.poisson(d / kernel.scale)
    if isinstance(kernel, (NegBin, WbcMixNegBin)):
        if isinstance(kernel, WbcMixNegBin):
            w = rng.choice(np.asarray(kernel.wbc), size=d.size, p=np.asarray(kernel.probs))
            mu = d * (200.0 / w)
        else:
            mu = d / kernel.scale
        r = kernel.r
        # gamma-Poisson; mu = 0 gives a zero count
        lam = rng.gamma(r, np.where(mu > 0, mu / r, 0.0))
        return kernel.scale * rng.poisson(lam)
    raise TypeError(f"no sampler for kernel {kernel!r}")


def _chunk(config: ScenarioConfig, rng, n: int, a: float, b: float):
    y_mi = (rng.random(n) < a).astype(np.int8)
    y_nmi = (rng.random(n) < b).astype(np.int8)
    d1 = sample_true_density(config, "g1", rng, n)
    d2 = sample_true_density(config, "g2", rng, n)
    d_no = np.where(y_mi == 1, d2, d1)
    killed = (y_nmi == 1) & (y_mi == 0)
    d_cur = np.where(killed, config.beta * d_no, d_no)
    d_obs = observe(config.kernel, d_cur, rng)
    return y_mi, y_nmi, d_no, d_cur, d_obs


def generate_dataset(config: ScenarioConfig) -> tuple[SurveyDataset, GroundTruth]:
    """Simulate ``config.n`` children.

    Records are generated in fixed-size chunks, each from its own stream
    spawned off ``config.seed``, so the output depends only on the seed.
    """
    a, b = config.a, config.b
    n_chunks = -(-config.n // CHUNK)
    streams = np.random.SeedSequence(config.seed).spawn(n_chunks)
    parts = []
    for i, ss in enumerate(streams):
        size = min(CHUNK, config.n - i * CHUNK)
        parts.append(_chunk(config, np.random.Generator(np.random.PCG64(ss)), size, a, b))
    y_mi, y_nmi, d_no, d_cur, d_obs = (np.concatenate(c) for c in zip(*parts))
    fever = np.minimum(y_mi + y_nmi, 1)
    truth = GroundTruth(config.true_maff, config.true_lambda_star, config.true_p,
                        y_mi, y_nmi, d_no, d_cur)
    return SurveyDataset(fever, d_obs), truth


def situation(number: int, **overrides) -> ScenarioConfig:
    """Designs comparing classical estimators.

    1: no fever killing, no measurement error; 2: measurement error only;
    3: 50% fever killing plus measurement error. All use the exponential-family
    scenario with q = 0.2 and n = 500.
    """
    beta, kernel = {1: (1.0, Exact()), 2: (1.0, Poisson()), 3: (0.5, Poisson())}[number]
    base = dict(scenario="expfamily", n=500, q=0.2, beta=beta, kernel=kernel)
    base.update(overrides)
    return ScenarioConfig(**base)
