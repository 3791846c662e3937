"""
Frequency locality of scattering
================================

For c^2 = 1 + eps cos x a plane wave at k0 only leaks into k0 +/- 1 at first
order.  The closed-form first-order amplitude is compared with the
finite-difference solver, and the error shrinks faster than eta = eps T k0.
"""
import numpy as np

from wfp.fields import Grid, SpatialField
from wfp.locality import TheoremSetup, outside_window_fraction, verify_theorem
from wfp.solver import SolverConfig, solve, spectra

g = Grid(1, 1024, length=2 * np.pi)
(x,) = g.coords()
p = SpatialField(g, np.cos(x))

for eps in (0.04, 0.02, 0.01):
    setup = TheoremSetup.from_field(p, 20, eps, 0.05)
    reports = verify_theorem(setup, [18, 19, 21, 22], SolverConfig(setup.T))
    first = max(r.error_over_eta for r in reports if r.n1[0] in (19, 21))
    second = max(r.error_over_eta for r in reports if r.n1[0] in (18, 22))
    # modes two steps away are second order, so their error over eta scales like eta
    print(f"eps={eps:<5} eta={setup.eta:.4f}  error/eta at k0+-1 {first:.2e}, at k0+-2 {second:.2e}")

# where does the scattered energy go?
setup = TheoremSetup.from_field(p, 20, 0.04, 0.5)
state = solve(setup.initial(), SpatialField(g, np.zeros(g.n)), setup.medium(), SolverConfig(setup.T))
u_hat, v_hat = spectra(state)
print("scattered energy outside radius-2 windows:", outside_window_fraction(u_hat, v_hat, [(20,), (-20,)], 2))
