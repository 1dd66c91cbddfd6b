"""
Surrogate losses and the adaptive penalty
=========================================

The regime ``d(x) = I(x @ eta > 0)`` is learned by minimizing a weighted
classification risk. The 0-1 loss is replaced by a smooth ramp that is the
difference of two convex, once-differentiable pieces.
"""

import numpy as np

from iitr.losses import PenaltySpec, loss_01, loss_hinge, loss_ramp, loss_s, penalty

# Tabulate the losses on a few margins.
u = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
print("u      ", u)
print("0-1    ", loss_01(u))
print("hinge  ", loss_hinge(u))
print("ramp   ", loss_ramp(u))

# The ramp is l_s(u, 1) - l_s(u, 0); both pieces are convex.
print("max |ramp - (l1 - l0)| =", np.max(np.abs(loss_ramp(u) - (loss_s(u, 1) - loss_s(u, 0)))))

# The ramp is bounded by 2 from above, so a single far-off unit cannot
# dominate the fit the way it does under the hinge loss.
far = np.array([-50.0])
print("hinge at u=-50:", loss_hinge(far)[0], " ramp at u=-50:", loss_ramp(far)[0])

# Adaptive LASSO: coefficient j is penalized by lam / |eta_int_j|^gamma, the
# intercept (index 0) is free. A large reference coefficient means a light
# penalty.
spec = PenaltySpec(lam=1.0, gamma=1.0, eta_int=[9.0, 2.0, 4.0])
print("penalty of (0.5, 1, -2):", penalty([0.5, 1.0, -2.0], spec))
