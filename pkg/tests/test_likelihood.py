import json
import math

import numpy as np
import pytest
from scipy import stats

from maff.data import SurveyDataset
from maff.gmodel import DiscreteDensity, Grid, g1_basis, g2_basis, make_grid
from maff.kernels import Exact, NegBin, Poisson
from maff.likelihood import (
    FitConfig,
    FitResult,
    InfeasibleSupportError,
    MixtureProblem,
    adjust_or_to_maff,
    fit,
    mixture_loglik,
    objective_gradient,
    penalized_objective,
)
from maff.simulate import ScenarioConfig, generate_dataset


def brute_force_loglik(ds, grid, beta, p, lam, a1, a2):
    """Scalar loops over records and grid points; Poisson kernel with scale 40."""
    Q1 = g1_basis(grid, len(a1)).entries
    Q2 = g2_basis(grid, len(a2)).entries
    w1 = [math.exp(sum(Q1[j, i] * a1[i] for i in range(len(a1)))) for j in range(grid.k)]
    g1 = [w / sum(w1) for w in w1]
    w2 = [0.0] + [math.exp(sum(Q2[j, i] * a2[i] for i in range(len(a2)))) for j in range(1, grid.k)]
    g2 = [w / sum(w2) for w in w2]
    total = 0.0
    for y, x in zip(ds.fever, ds.density):
        c = int(round(x / 40))
        if y == 0:
            s = sum(stats.poisson.pmf(c, grid.values[j] / 40) * g1[j] for j in range(grid.k))
            total += math.log(1 - p) + math.log(s)
        else:
            s = sum(stats.poisson.pmf(c, beta * grid.values[j] / 40)
                    * ((1 - lam) * g1[j] + lam * g2[j]) for j in range(grid.k))
            total += math.log(p) + math.log(s)
    return total


def test_single_afebrile_exact_kernel():
    grid = make_grid(300, 4)
    ds = SurveyDataset([0, 1], [grid.values[1], 0.0])
    # uniform g1 puts 1/4 on each grid point; lambda* = 0 leaves only g1 in the febrile term
    ll = mixture_loglik(ds, grid, Exact(), 1.0, 0.3, 0.0, [0.0], [0.0])
    assert ll == pytest.approx(math.log(0.7) + math.log(0.25) + math.log(0.3) + math.log(0.25), abs=1e-12)


def test_fever_flag_swap_changes_by_log_odds(rng):
    grid = make_grid(1200, 31)
    dens = 40.0 * rng.integers(0, 25, size=12)
    fever = np.array([0, 1] * 6)
    a1, a2 = rng.normal(size=4), rng.normal(size=3)
    p = 0.27
    base = mixture_loglik(SurveyDataset(fever, dens), grid, Poisson(), 1.0, p, 0.0, a1, a2)
    flipped = fever.copy()
    flipped[0] = 1
    other = mixture_loglik(SurveyDataset(flipped, dens), grid, Poisson(), 1.0, p, 0.0, a1, a2)
    assert other - base == pytest.approx(math.log(p / (1 - p)), abs=1e-10)


@pytest.mark.parametrize("beta", [1.0, 0.5])
def test_matches_brute_force(beta, rng):
    grid = make_grid(400, 3, beta)
    ds = SurveyDataset([0, 0, 0, 1, 1, 1], [0, 40, 160, 0, 80, 200])
    a1, a2 = rng.normal(size=2), rng.normal(size=1)
    ours = mixture_loglik(ds, grid, Poisson(), beta, 0.35, 0.6, a1, a2)
    ref = brute_force_loglik(ds, grid, beta, 0.35, 0.6, a1, a2)
    assert ours == pytest.approx(ref, abs=1e-10)


def test_penalized_objective_identities(rng):
    grid = make_grid(800, 21, 0.5)
    ds, _ = generate_dataset(ScenarioConfig(n=80, beta=0.5, seed=2))
    a1, a2 = rng.normal(size=4), rng.normal(size=3)
    ll = mixture_loglik(ds, grid, Poisson(), 0.5, 0.3, 0.4, a1, a2)
    assert penalized_objective(ds, grid, Poisson(), 0.5, 0.3, 0.4, a1, a2, c0=0.0) == ll
    pen = math.sqrt(a1 @ a1 + a2 @ a2 + 1e-8)
    assert penalized_objective(ds, grid, Poisson(), 0.5, 0.3, 0.4, a1, a2, c0=1.0) == pytest.approx(ll - pen, abs=1e-12)
    at0 = penalized_objective(ds, grid, Poisson(), 0.5, 0.3, 0.4, np.zeros(4), np.zeros(3), c0=2.0)
    ll0 = mixture_loglik(ds, grid, Poisson(), 0.5, 0.3, 0.4, np.zeros(4), np.zeros(3))
    assert ll0 - at0 == pytest.approx(2.0 * 1e-4, rel=1e-9)


def _fd_gradient(prob, theta, c0, h=1e-6):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (prob.objective(theta + e, c0) - prob.objective(theta - e, c0)) / (2 * h)
    return g


@pytest.mark.parametrize("kernel,delta1", [(Poisson(), 0.0), (NegBin(r=6), 0.0), (Poisson(), 1e-3)])
def test_gradient_finite_differences(kernel, delta1, rng):
    ds, _ = generate_dataset(ScenarioConfig(n=150, beta=0.4, q=0.3, seed=4))
    grid = FitConfig(beta=0.4, k=30).grid_for(ds)
    prob = MixtureProblem(ds, grid, kernel, 4, 3, delta1)
    for _ in range(5):
        theta = np.concatenate([rng.uniform(0.05, 0.95, 2), rng.normal(size=7)])
        _, g = prob.value_and_grad(theta, 1.0)
        fd = _fd_gradient(prob, theta, 1.0)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * np.max(np.abs(fd)))


def test_prevalence_gradient_term(rng):
    ds, _ = generate_dataset(ScenarioConfig(n=120, seed=3))
    grid = make_grid(2000, 21)
    g = objective_gradient(ds, grid, Poisson(), 1.0, 0.2, 0.4, rng.normal(size=4), rng.normal(size=3))
    n_f = int(ds.fever.sum())
    assert g[0] == pytest.approx(n_f / 0.2 - (ds.n - n_f) / 0.8, rel=1e-14)


def test_symmetric_mixture_has_zero_lambda_gradient():
    # identical components: an afebrile-only basis with g2 = g1 on positive support
    ds = SurveyDataset([0, 1, 1, 0], [40, 80, 120, 0])
    grid = make_grid(400, 11)
    prob = MixtureProblem(ds, grid, Poisson(), 1, 1)
    prob.Q2 = prob.Q1.copy()
    prob.densities = lambda a1, a2: (np.r_[0, np.full(10, 0.1)], np.r_[0, np.full(10, 0.1)],
                                     np.r_[0, np.full(10, 0.1)])
    _, g = prob.value_and_grad(np.array([0.5, 0.5, 0.0, 0.0]), c0=0.0)
    assert g[1] == 0.0


def test_infeasible_support():
    # a count far beyond the grid has Poisson probability that underflows everywhere
    grid = make_grid(400, 5)
    with pytest.raises(InfeasibleSupportError):
        MixtureProblem(SurveyDataset([0, 1], [4e7, 0.0]), grid, Poisson(), 1, 1)


# --- adjustment ------------------------------------------------------------------


def test_adjust_examples():
    assert adjust_or_to_maff(0.37, 0.0) == 0.37
    assert adjust_or_to_maff(1.0, 0.3) == 1.0
    a, b = 0.3, 0.2
    p = a + b - a * b
    assert p == pytest.approx(0.44)
    assert adjust_or_to_maff(a / p, p) == pytest.approx(a * (1 - b) / p, abs=1e-12)
    assert round(a * (1 - b) / p, 4) == 0.5455 and round(a / p, 4) == 0.6818
    with pytest.raises(ValueError):
        adjust_or_to_maff(1.2, 0.1)
    with pytest.raises(ValueError):
        adjust_or_to_maff(1.0, 1.0)


def test_adjust_monotone(rng):
    ls = np.sort(rng.uniform(0.01, 0.99, 50))
    assert np.all(np.diff(adjust_or_to_maff(ls, 0.3)) > 0)
    ps = np.sort(rng.uniform(0.01, 0.99, 50))
    assert np.all(np.diff(adjust_or_to_maff(0.6, ps)) < 0)


# --- fitting ---------------------------------------------------------------------


def test_fit_result_invariants(small_sim):
    ds, _ = small_sim
    r = fit(ds, FitConfig(beta=0.5))
    assert r.converged
    assert 0 < r.p_hat < 1 and 0 < r.lambda_star_hat < 1 and 0 < r.maff_hat < 1
    assert r.maff_hat == adjust_or_to_maff(r.lambda_star_hat, r.p_hat)
    DiscreteDensity(r.g1)
    DiscreteDensity(r.g2)
    assert r.g2[0] == 0
    d = json.loads(r.to_json(densities=True))
    assert d["maff_hat"] == r.maff_hat and len(d["g1"]) == 101
    assert r.grad_norm <= 1e-3


def test_fit_p_hat_is_empirical_prevalence(small_sim):
    ds, _ = small_sim
    r = fit(ds, FitConfig(beta=0.5, c0=0.0))
    assert r.p_hat == pytest.approx(ds.fever.mean(), abs=1e-5)


def test_fit_deterministic(small_sim):
    ds, _ = small_sim
    a = fit(ds, FitConfig(beta=0.5))
    b = fit(ds, FitConfig(beta=0.5))
    assert a.to_json(densities=True) == b.to_json(densities=True)


def test_multistart_not_worse(small_sim):
    ds, _ = small_sim
    plain = fit(ds, FitConfig(beta=0.5))
    multi = fit(ds, FitConfig(beta=0.5, multistart=True))
    assert multi.objective >= plain.objective - 1e-8


def test_nonconvergence_flagged(small_sim):
    ds, _ = small_sim
    r = fit(ds, FitConfig(beta=0.5, maxiter=2))
    assert not r.converged
    assert r.iterations <= 2


def test_null_model_recovery():
    est = []
    for seed in range(20):
        ds, _ = generate_dataset(ScenarioConfig(n=1000, q=0.5, maff=0.0, seed=seed))
        est.append(fit(ds, FitConfig()).lambda_star_hat)
    assert np.mean(est) <= 0.05


def test_exact_kernel_scale_invariance():
    ds, _ = generate_dataset(ScenarioConfig(n=300, q=0.3, kernel=Exact(), seed=9))
    d = np.round(ds.density / 40) * 40  # put observations on a lattice the grid contains
    grid = make_grid(40.0 * 100, 101)
    base = SurveyDataset(ds.fever, np.minimum(d, grid.values[-1]))
    r1 = fit(base, FitConfig(kernel=Exact()), grid)
    scaled = SurveyDataset(base.fever, 2.5 * base.density)
    r2 = fit(scaled, FitConfig(kernel=Exact()), Grid(2.5 * grid.values))
    for attr in ("p_hat", "lambda_star_hat", "maff_hat"):
        assert getattr(r1, attr) == pytest.approx(getattr(r2, attr), abs=1e-6)


def test_config_round_trip():
    cfg = FitConfig(kernel=NegBin(r=4.5), beta=0.3, c0=0.0, m1=5)
    assert FitConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        FitConfig(m1=0)
    with pytest.raises(ValueError):
        FitConfig(c0=-1)
    with pytest.raises(ValueError):
        FitConfig(beta=0)


def test_requires_both_groups():
    from maff.data import DataError
    with pytest.raises(DataError):
        fit(SurveyDataset([0, 0], [0, 40]))


def test_fit_result_dict_fields(small_sim):
    ds, _ = small_sim
    r = fit(ds, FitConfig(beta=0.5))
    keys = set(r.to_dict())
    assert {"p_hat", "lambda_star_hat", "maff_hat", "alpha1", "alpha2", "objective",
            "grad_norm", "converged", "iterations"} <= keys
    assert isinstance(r, FitResult)
