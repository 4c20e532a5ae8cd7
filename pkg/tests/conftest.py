import numpy as np
import pytest

from maff.data import SurveyDataset
from maff.gmodel import DiscreteDensity
from maff.simulate import ScenarioConfig, generate_dataset

# Kilombero-structured 2x2 counts: (fever, zero/positive) cells
KILOMBERO = {"a0": 160, "a1": 1698, "f0": 16, "f1": 121}

_ACCEPTANCE_LINES = []
# every DiscreteDensity accepted anywhere in the run: (count, max |sum - 1|, min entry)
DENSITY_AUDIT = {"count": 0, "max_sum_error": 0.0, "min_entry": np.inf}


def kilombero_dataset(positive_density=400.0):
    c = KILOMBERO
    fever = [0] * (c["a0"] + c["a1"]) + [1] * (c["f0"] + c["f1"])
    dens = ([0.0] * c["a0"] + [positive_density] * c["a1"]
            + [0.0] * c["f0"] + [positive_density] * c["f1"])
    return SurveyDataset(fever, dens)


@pytest.fixture(scope="session", autouse=True)
def _audit_densities():
    original = DiscreteDensity.__post_init__

    def audited(self):
        original(self)
        m = np.asarray(self.mass, dtype=float)
        DENSITY_AUDIT["count"] += 1
        DENSITY_AUDIT["max_sum_error"] = max(DENSITY_AUDIT["max_sum_error"], abs(m.sum() - 1.0))
        DENSITY_AUDIT["min_entry"] = min(DENSITY_AUDIT["min_entry"], float(m.min()))

    DiscreteDensity.__post_init__ = audited
    yield
    DiscreteDensity.__post_init__ = original


@pytest.fixture
def kilombero():
    return kilombero_dataset()


@pytest.fixture(scope="session")
def small_sim():
    """A modest simulated survey with 50% fever killing."""
    ds, truth = generate_dataset(ScenarioConfig(n=600, q=0.2, beta=0.5, seed=11))
    return ds, truth


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
    if DENSITY_AUDIT["count"]:
        a = DENSITY_AUDIT
        ok = a["max_sum_error"] <= 1e-12 and a["min_entry"] >= 0
        terminalreporter.write_line(
            f"density audit (whole run): {a['count']} densities, max |sum - 1| = {a['max_sum_error']:.2e}, "
            f"min entry = {a['min_entry']:.2e} {'PASS' if ok else 'FAIL'}")
