"""
Dependence between fever causes
===============================

Two departures from independent malarial and non-malarial fevers: children
with a non-malarial fever may carry higher densities (a tilt ``delta1``), and
malaria may change the chance of a non-malarial fever (a ratio ``tau``).
"""

from maff import FitConfig, ScenarioConfig, generate_dataset, sensitivity_grid

survey, _ = generate_dataset(ScenarioConfig(n=2000, q=0.2, beta=0.5, seed=0))
cells = sensitivity_grid(survey, FitConfig(beta=0.5), steps=5)

taus = sorted({c.tau for c in cells})
print("40000*delta1  " + "  ".join(f"tau={t:.3f}" for t in taus))
for d in sorted({c.delta1 for c in cells}):
    row = [c for c in cells if c.delta1 == d]
    text = "  ".join(f"{c.maff:8.4f}{'*' if c.infeasible else ' '}" for c in row)
    print(f"{40000 * d:12.2f}  {text}")

# * marks cells where tau * P(no nmi fever | no malarial fever) exceeds one,
# which is not a valid probability; those estimates are extrapolations.
# Larger delta1 lowers the estimate and larger tau raises it.
