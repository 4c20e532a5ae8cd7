"""
Simulating a survey and fitting the g-model
===========================================

A synthetic survey with a known attributable fraction of one half, half of
the parasites cleared by non-malarial fevers, and Poisson slide counting.
"""

import numpy as np

from maff import FitConfig, ScenarioConfig, fit, generate_dataset, summarize

# 2000 children, 20% of the non-malarial latent densities at zero
config = ScenarioConfig(n=2000, q=0.2, beta=0.5, seed=1)
survey, truth = generate_dataset(config)
print(survey)
print("true MAFF", round(truth.true_maff, 3), "realized", round(truth.empirical_maff(), 3))

# the raw 2x2 table hides most of the signal: both groups are mostly positive
table = summarize(survey)
print("positive share afebrile %.3f febrile %.3f" % (table.p_a, table.p_f))

# fit with the correct fever-killing assumption
result = fit(survey, FitConfig(beta=0.5))
print("p_hat %.3f  lambda* %.3f  MAFF %.3f  converged %s"
      % (result.p_hat, result.lambda_star_hat, result.maff_hat, result.converged))

# g1 sits on the unscaled grid, g2 on the grid multiplied by beta
d = result.grid
print("g1 mean %.0f parasites/ul, g2 mean %.0f" % (result.g1 @ d, result.g2 @ (0.5 * d)))
print("g2 mass at zero:", result.g2[0])

# ignoring the fever killing pulls the estimate down
naive = fit(survey, FitConfig(beta=1.0))
print("assuming no killing: MAFF %.3f" % naive.maff_hat)
np.testing.assert_allclose(result.g1.sum(), 1.0, atol=1e-12)
