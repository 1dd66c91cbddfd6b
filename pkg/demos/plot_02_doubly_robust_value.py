"""
Doubly robust value of a regime
===============================

The value of a regime is the mean outcome if everyone followed it. The AIPW
estimator combines an outcome model and a propensity model and stays
consistent when either one is right.
"""

import numpy as np

from iitr.nuisance import GLMNuisance, NuisanceFit, confidence_interval, estimate_value_aipw
from iitr.sim import DGPConfig, generate, true_value

data, oracle = generate(DGPConfig(n=5000, seed=1))
n = data.n
D = np.column_stack([np.ones(n), data.covariates])
A, Y = data.treatment, data.outcome

# Regime under study: treat when x1 + x2 > 0.5, which is optimal here.
d = oracle.optimal_assignment
print("oracle value:", round(true_value(d, oracle), 4))

# Default nuisances: logistic propensity, per-arm linear outcome models. The
# outcome model is misspecified (the effect is quadratic) but the propensity
# is correct, so the estimate is still centred on the truth.
nf = GLMNuisance().fit(D, A, Y).predict(D)
value, var = estimate_value_aipw(A, Y, nf, d)
lo, hi = confidence_interval(value, var)
print(f"AIPW estimate: {value:.4f}  95% CI [{lo:.4f}, {hi:.4f}]")

# Break the propensity too (constant 0.5): nothing protects the estimate any
# more, and here it drifts away from the oracle value.
broken = NuisanceFit(np.full(n, 0.5), nf.mu0, nf.mu1)
print("both models wrong:", round(estimate_value_aipw(A, Y, broken, d)[0], 4))
