"""Malaria-attributable fever fraction estimation by g-model deconvolution.

The estimator models parasite densities of afebrile children by a discrete
exponential-family density ``g1`` and those of febrile children by a mixture
of ``g1`` (carried onto the fever-killed scale ``beta * d``) and a malarial
component ``g2``, each observed through a microscopy measurement kernel.
"""

__version__ = "0.1.0"

from .baselines import (
    BaselineEstimate,
    EstimationError,
    PopulationSpec,
    all_baselines,
    maff_logistic,
    maff_or_table,
    maff_power_logistic,
    maff_rr_table,
    verify_propositions,
)
from .data import DataError, SummaryTable, SurveyDataset, SurveyRecord, parse_survey_csv, read_survey_csv, summarize
from .gmodel import DiscreteDensity, Grid, density, make_grid, positive_support_density
from .kernels import (Exact, FalseNegativeRecord, NegBin, Poisson, WbcMixNegBin, estimate_dispersion,
                      kernel_from_name, kernel_matrix)
from .likelihood import FitConfig, FitResult, InfeasibleSupportError, adjust_or_to_maff, fit
from .resampling import BootstrapError, BootstrapResult, bootstrap_se
from .sensitivity import SensitivityParams, sensitivity_fit, sensitivity_grid
from .simulate import GroundTruth, ScenarioConfig, generate_dataset, situation
from .splines import natural_spline_basis, standardize_columns

__all__ = [
    "__version__",
    "BaselineEstimate", "EstimationError", "PopulationSpec", "all_baselines", "maff_logistic",
    "maff_or_table", "maff_power_logistic", "maff_rr_table", "verify_propositions",
    "DataError", "SummaryTable", "SurveyDataset", "SurveyRecord", "parse_survey_csv",
    "read_survey_csv", "summarize",
    "DiscreteDensity", "Grid", "density", "make_grid", "positive_support_density",
    "Exact", "FalseNegativeRecord", "NegBin", "Poisson", "WbcMixNegBin", "estimate_dispersion", "kernel_from_name", "kernel_matrix",
    "FitConfig", "FitResult", "InfeasibleSupportError", "adjust_or_to_maff", "fit",
    "BootstrapError", "BootstrapResult", "bootstrap_se",
    "SensitivityParams", "sensitivity_fit", "sensitivity_grid",
    "GroundTruth", "ScenarioConfig", "generate_dataset", "situation",
    "natural_spline_basis", "standardize_columns",
]
