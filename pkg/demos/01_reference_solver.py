"""
Reference solver on a periodic grid
===================================

A standing wave in a homogeneous medium has the closed form
cos(2 pi k t) cos(2 pi k x).  We compare the leapfrog solver with it and
then watch the discrete energy of a wave in a perturbed 2D medium.
"""
import numpy as np

from wfp.datagen import MediumSpec, gen_initial, gen_medium
from wfp.fields import Grid, SpatialField
from wfp.solver import Medium, SolverConfig, integrate, solve

g = Grid(1, 512)
(x,) = g.coords()
k, T = 4, 0.02
f = SpatialField(g, np.cos(2 * np.pi * k * x))
zero = SpatialField(g, np.zeros(g.n))

u = solve(f, zero, Medium.homogeneous(g), SolverConfig(T)).u.values
exact = np.cos(2 * np.pi * k * T) * np.cos(2 * np.pi * k * x)
print("standing wave, relative L2 error:", np.linalg.norm(u - exact) / np.linalg.norm(exact))

# the energy includes the leapfrog correction term, so it is conserved to roundoff
g2 = Grid(2, 128)
medium = gen_medium(MediumSpec(alpha=0.1, seed=2), g2)
traj = integrate(gen_initial((9, -5), g2), SpatialField(g2, np.zeros(g2.shape)), medium, SolverConfig(0.2), energy_every=20)
print("2D energy, max relative drift:", traj.energy_drift.max())
