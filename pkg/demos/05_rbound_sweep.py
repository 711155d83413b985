"""
Empirical R-bounds of the scaled resolvent family
=================================================

For {lam^(k/2) T0(lam)} over a sector sample, the estimator returns a lower
bound of the R-bound.  Doubling the trials should not move it much.
"""

# %%
import numpy as np

from parabolic_resolvent.core import PeriodicBox, Sector, make_constant_pair
from parabolic_resolvent.rbound import sweep_scaled_family, t0_handle

box = PeriodicBox(1, (2 * np.pi,), (32,))
handle = t0_handle(make_constant_pair(np.eye(1), np.eye(1)))
sector = Sector(np.pi / 4, 1.0)

# %%
for k in (0, 1, 2):
    a = sweep_scaled_family(handle, sector, k, 30, box, 1, trials=100, strategy="subspace", subspace_dim=32)
    b = sweep_scaled_family(handle, sector, k, 30, box, 1, trials=200, strategy="subspace", subspace_dim=32)
    print(f"k={k}: C_hat {a['C_hat']:.4f} -> {b['C_hat']:.4f};  tau family {a['C_hat_tau']:.4f}")
print("k=2 closed-form ceiling 2/sin(pi/4) =", round(2 / np.sin(np.pi / 4), 4))
