import json
import math

import numpy as np
import pytest

from maff.data import SurveyDataset
from maff.likelihood import FitConfig, fit
from maff.resampling import BootstrapError, bootstrap_se, resample_indices
from maff.simulate import ScenarioConfig, generate_dataset


def _mean_density(ds):
    return float(ds.density.mean())


def test_indices_deterministic_and_in_range():
    a = resample_indices(50, 4, seed=3)
    b = resample_indices(50, 4, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(x.min() >= 0 and x.max() < 50 for x in a)
    assert not np.array_equal(a[0], a[1])


def test_constant_estimator_zero_se():
    ds = SurveyDataset([0, 1, 0, 1], [0, 40, 80, 120])
    res = bootstrap_se(ds, lambda d: 0.25, B=50, seed=1)
    assert res.se == 0.0 and res.failures == 0 and res.estimate == 0.25


def test_sample_mean_se():
    rng = np.random.default_rng(2)
    n = 400
    dens = rng.gamma(2.0, 300.0, n)
    ds = SurveyDataset(rng.integers(0, 2, n), dens)
    res = bootstrap_se(ds, _mean_density, B=2000, seed=5)
    analytic = dens.std(ddof=1) / math.sqrt(n)
    assert abs(res.se / analytic - 1) < 0.15


def test_order_invariance_and_determinism():
    rng = np.random.default_rng(3)
    ds = SurveyDataset(rng.integers(0, 2, 60), 40.0 * rng.integers(0, 30, 60))
    perm = ds.subset(rng.permutation(60))
    a = bootstrap_se(ds, _mean_density, B=30, seed=9)
    b = bootstrap_se(perm, _mean_density, B=30, seed=9)
    c = bootstrap_se(ds, _mean_density, B=30, seed=9, threads=3)
    assert np.array_equal(a.replicates, b.replicates)
    assert np.array_equal(a.replicates, c.replicates)
    assert a.to_dict() == b.to_dict()


def test_failures_excluded_and_counted():
    ds = SurveyDataset([0, 1] * 20, 40.0 * np.arange(40))
    calls = {"i": 0}

    def flaky(d):
        calls["i"] += 1
        if calls["i"] % 10 == 0:
            raise ValueError("no")
        return float(d.density.mean())

    res = bootstrap_se(ds, flaky, B=40, seed=0)
    assert 1 <= res.failures <= 8
    assert np.isnan(res.replicates).sum() == res.failures
    assert math.isfinite(res.se)


def test_too_many_failures_raise_with_partial_result():
    ds = SurveyDataset([0, 1] * 20, 40.0 * np.arange(40))

    def bad(d):
        if d.density[0] == 0 and len(d.density) == 40 and d.density.sum() == 40.0 * np.arange(40).sum():
            return 1.0
        return float("nan")

    with pytest.raises(BootstrapError) as exc:
        bootstrap_se(ds, bad, B=20, seed=0)
    assert exc.value.result.failures == 20
    assert exc.value.result.B == 20


def test_b_must_be_at_least_two():
    with pytest.raises(ValueError):
        bootstrap_se(SurveyDataset([0, 1], [0, 40]), _mean_density, B=1)


def test_gmodel_se_order_of_magnitude():
    # survey of field size; the se should be a few hundredths, not 0.001 or 0.5
    ds, _ = generate_dataset(ScenarioConfig(n=1995, q=0.2, beta=0.5, seed=21))
    cfg = FitConfig(beta=0.5)
    res = bootstrap_se(ds, lambda d: fit(d, cfg).maff_hat, B=40, seed=4)
    assert res.failures == 0
    assert 0.02 < res.se < 0.15
    assert len(json.loads(json.dumps(res.to_dict(replicates=True)))["replicates"]) == 40
