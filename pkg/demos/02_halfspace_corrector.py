"""
Half-space solve with boundary flux
===================================

The half space is a slab periodic in x_1.  The flux B d_n v = g enters
through an exponential boundary layer exp(-omega x_N) with
omega = sqrt(lam + k^2).  We check both residuals and print the layer
profile for two values of |lam|.
"""

# %%
import numpy as np

from parabolic_resolvent.core import GridField, HalfSpaceGrid, make_constant_pair
from parabolic_resolvent.halfspace import solve_t3, t3_residuals

grid = HalfSpaceGrid((2 * np.pi,), (32,), 64, 4.0)
R, B = np.diag([1.0, 3.0]), np.array([[1.0, 0.4], [0.4, 2.0]])
pair = make_constant_pair(R, B, 2)
x = grid.points()
f = GridField(grid, np.zeros(grid.shape + (2,), complex))
g = np.stack([np.cos(x[:, 0, 0]), np.ones(32)], -1) + 0j

# %% The layer thins like |lam|^(-1/2).
for lam in (4.0, 400.0):
    sol = solve_t3(pair, lam, f, g)
    res = t3_residuals(sol, lam, f, g, R, B)
    prof = np.abs(sol.v.values[0, :, 0])
    half = grid.normal_coords()[np.argmax(prof < prof[0] / 2)]
    print(f"lam={lam:6.0f}  pde={res['pde']:.1e}  boundary={res['boundary']:.1e}  half-width={half:.3f}")
