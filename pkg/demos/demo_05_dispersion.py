"""
Estimating the slide-reading dispersion
=======================================

The negative-binomial dispersion behind the M2 and M3 kernels is estimated
from how often slides of known mean density are read as negative.
"""

import numpy as np

from maff import FalseNegativeRecord, estimate_dispersion

levels = np.geomspace(20, 400, 15)
p_neg = (6 / (6 + levels / 40)) ** 6

estimates = []
for seed in range(200):
    rng = np.random.default_rng(seed)
    records = [FalseNegativeRecord(x, int(rng.binomial(25, p)), 25) for x, p in zip(levels, p_neg)]
    estimates.append(estimate_dispersion(records).r)
estimates = np.array(estimates)

print("median r_hat %.2f" % np.median(estimates))
print("5%%-95%% range %.1f to %.1f" % tuple(np.percentile(estimates, [5, 95])))
print("share in [5, 7]: %.2f" % np.mean((estimates >= 5) & (estimates <= 7)))

# Only yes/no outcomes per slide are used, so the estimate is noisy: the
# median is close to 6 but single surveys of this size vary widely.
