"""Leapfrog reference solver for ``u_tt = div(c^2 grad u)`` on a periodic grid.

The divergence is discretized with staggered fluxes,

    [c2_{j+1/2} (u_{j+1} - u_j) - c2_{j-1/2} (u_j - u_{j-1})] / dx^2,

which gives a symmetric negative semi-definite operator ``A``.  Time stepping
is the kick-drift-kick form of leapfrog, so ``u`` follows the classic
three-level recurrence and ``v`` at integer steps equals the centred
difference ``(u_{n+1} - u_{n-1}) / (2 dt)``.

All internal kernels act on the trailing ``dim`` axes, so a stack of
independent trajectories (same grid, different media) can be advanced in
one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, SpatialField, Spectrum, forward_transform


class CflViolation(ValueError):
    pass


class NonFiniteState(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class WaveState:
    u: SpatialField
    v: SpatialField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("u and v live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid


@dataclass(frozen=True, eq=False)
class Medium:
    """Squared wave speed sampled on the grid.

    ``face_average`` picks how ``c^2`` is carried to cell faces; harmonic
    averaging keeps sharp interfaces sharper.
    """

    c_sq: SpatialField
    face_average: str = "arithmetic"

    def __post_init__(self):
        if np.iscomplexobj(self.c_sq.values):
            raise ValueError("c^2 must be real")
        if not np.all(self.c_sq.values > 0):
            raise ValueError("c^2 must be strictly positive")
        if self.face_average not in ("arithmetic", "harmonic"):
            raise ValueError(f"unknown face_average {self.face_average!r}")

    @property
    def grid(self) -> Grid:
        return self.c_sq.grid

    @property
    def c_max(self) -> float:
        return float(np.sqrt(self.c_sq.values.max()))

    @classmethod
    def homogeneous(cls, grid: Grid, c: float = 1.0) -> "Medium":
        return cls(SpatialField(grid, np.full(grid.shape, float(c) ** 2)))

    @classmethod
    def perturbed(cls, p: SpatialField, eps: float) -> "Medium":
        """``c^2 = 1 + eps * p``."""
        return cls(SpatialField(p.grid, 1.0 + eps * np.real(p.values)))


@dataclass
class SolverConfig:
    t_final: float
    dt: float | None = None
    cfl_safety: float = 0.5

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    def time_step(self, grid: Grid, c_max: float) -> tuple[float, int]:
        """Step size and step count that land exactly on ``t_final``."""
        if self.dt is None:
            dt0 = self.cfl_safety * grid.dx / c_max
            nsteps = math.ceil(self.t_final / dt0 - 1e-12)
            dt = self.t_final / nsteps
        else:
            nsteps = max(1, round(self.t_final / self.dt))
            dt = self.dt
        check_cfl(dt, grid, c_max)
        return dt, nsteps


def stability_limit(grid: Grid, c_max: float) -> float:
    return grid.dx / (c_max * math.sqrt(grid.dim))


def check_cfl(dt: float, grid: Grid, c_max: float) -> None:
    limit = stability_limit(grid, c_max)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} exceeds leapfrog stability limit {limit:.6g}")


# ---------------------------------------------------------------------------
# kernels on raw arrays

def face_coefficients(c_sq: np.ndarray, dim: int, average: str = "arithmetic") -> list[np.ndarray]:
    """``c^2`` at the ``j+1/2`` face along each of the trailing ``dim`` axes."""
    faces = []
    for a in range(-dim, 0):
        right = np.roll(c_sq, -1, axis=a)
        if average == "harmonic":
            faces.append(2 * c_sq * right / (c_sq + right))
        else:
            faces.append(0.5 * (c_sq + right))
    return faces


def apply_operator(u: np.ndarray, faces: list[np.ndarray], dx: float) -> np.ndarray:
    dim = len(faces)
    out = np.zeros_like(u)
    for a, cf in zip(range(-dim, 0), faces):
        flux = cf * (np.roll(u, -1, axis=a) - u)
        out += flux - np.roll(flux, 1, axis=a)
    return out / dx**2


def leapfrog(u, v, faces, dx, dt, nsteps, on_step=None):
    """Advance ``nsteps`` kick-drift-kick steps; arrays are not modified in place."""
    acc = apply_operator(u, faces, dx)
    # overflow is reported through NonFiniteState, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(nsteps):
            v = v + 0.5 * dt * acc
            u = u + dt * v
            acc = apply_operator(u, faces, dx)
            v = v + 0.5 * dt * acc
            if (n & 15) == 15 or n == nsteps - 1:
                if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                    raise NonFiniteState(f"non-finite wavefield after step {n + 1}")
            if on_step is not None:
                on_step(n + 1, u, v)
    return u, v


def energy_arrays(u, v, faces, dx, dt=None) -> np.ndarray:
    """Discrete energy over the trailing axes.

    With ``dt`` the leapfrog correction ``-dt^2/8 |A u|^2`` is included; that
    quantity is conserved by the scheme to rounding error.
    """
    dim = len(faces)
    axes = tuple(range(-dim, 0))
    dens = np.abs(v) ** 2
    for a, cf in zip(axes, faces):
        dens = dens + cf * np.abs(np.roll(u, -1, axis=a) - u) ** 2 / dx**2
    e = 0.5 * dens.sum(axis=axes)
    if dt is not None:
        au = apply_operator(u, faces, dx)
        e = e - dt**2 / 8 * (np.abs(au) ** 2).sum(axis=axes)
    return e * dx**dim


# ---------------------------------------------------------------------------
# public operations

def _faces(medium: Medium) -> list[np.ndarray]:
    return face_coefficients(medium.c_sq.values, medium.grid.dim, medium.face_average)


def step(state: WaveState, medium: Medium, dt: float) -> WaveState:
    grid = state.grid
    if medium.grid != grid:
        raise ValueError("medium and state grids differ")
    check_cfl(dt, grid, medium.c_max)
    u, v = leapfrog(state.u.values, state.v.values, _faces(medium), grid.dx, dt, 1)
    return WaveState(SpatialField(grid, u), SpatialField(grid, v), state.t + dt)


def discrete_energy(state: WaveState, medium: Medium, dt: float | None = None) -> float:
    """``0.5 * integral(|u_t|^2 + c^2 |grad u|^2)`` by midpoint quadrature."""
    grid = state.grid
    if medium.grid != grid:
        raise ValueError("medium and state grids differ")
    return float(energy_arrays(state.u.values, state.v.values, _faces(medium), grid.dx, dt))


@dataclass
class Trajectory:
    final: WaveState
    dt: float
    snapshots: list[WaveState] = field(default_factory=list)
    energy_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def energy_drift(self) -> np.ndarray:
        return np.abs(self.energy - self.energy[0]) / self.energy[0] if self.energy.size else self.energy


def integrate(
    f: SpatialField,
    g: SpatialField,
    medium: Medium,
    cfg: SolverConfig,
    snap_times=None,
    energy_every: int = 0,
) -> Trajectory:
    """Solve to ``cfg.t_final``, optionally keeping snapshots and an energy trace.

    Snapshot times are rounded to the nearest time step.  ``energy_every=k``
    records the conserved discrete energy every ``k`` steps (and at both ends).
    """
    grid = f.grid
    if g.grid != grid or medium.grid != grid:
        raise ValueError("f, g and medium must share one grid")
    dt, nsteps = cfg.time_step(grid, medium.c_max)
    faces = _faces(medium)

    snap_steps = {}
    for t in snap_times or ():
        if not -1e-12 <= t <= cfg.t_final * (1 + 1e-12):
            raise ValueError(f"snapshot time {t} outside [0, t_final]")
        snap_steps.setdefault(int(round(t / dt)), []).append(t)
    snaps: dict[float, WaveState] = {}
    e_t, e_val = [], []

    def record(n, u, v):
        if n in snap_steps:
            for t in snap_steps[n]:
                snaps[t] = WaveState(SpatialField(grid, u.copy()), SpatialField(grid, v.copy()), n * dt)
        if energy_every and (n % energy_every == 0 or n == nsteps):
            e_t.append(n * dt)
            e_val.append(float(energy_arrays(u, v, faces, grid.dx, dt)))

    u0 = np.array(f.values, dtype=np.result_type(f.values, g.values))
    v0 = np.array(g.values, dtype=u0.dtype)
    record(0, u0, v0)
    u, v = leapfrog(u0, v0, faces, grid.dx, dt, nsteps, on_step=record)
    final = WaveState(SpatialField(grid, u), SpatialField(grid, v), nsteps * dt)
    ordered = [snaps[t] for t in (snap_times or ())]
    return Trajectory(final, dt, ordered, np.array(e_t), np.array(e_val))


def solve(f: SpatialField, g: SpatialField, medium: Medium, cfg: SolverConfig) -> WaveState:
    return integrate(f, g, medium, cfg).final


def solve_batch(u0, v0, c_sq, grid: Grid, cfg: SolverConfig, c_bound: float | None = None):
    """Advance a stack of trajectories sharing ``grid`` (leading axis = sample).

    ``c_bound`` fixes the speed used for step selection so that the step does
    not depend on which samples share a batch.
    """
    if u0.shape[-grid.dim:] != grid.shape:
        raise ValueError("batch arrays do not match grid")
    c_max = float(np.sqrt(c_sq.max()))
    if not np.all(c_sq > 0):
        raise ValueError("c^2 must be strictly positive")
    if c_bound is not None:
        if c_bound < c_max:
            raise ValueError(f"c_bound={c_bound} below actual max speed {c_max}")
        c_max = c_bound
    dt, nsteps = cfg.time_step(grid, c_max)
    faces = face_coefficients(c_sq, grid.dim)
    u, v = leapfrog(u0, v0, faces, grid.dx, dt, nsteps)
    return u, v, nsteps * dt


def spectra(state: WaveState) -> tuple[Spectrum, Spectrum]:
    return forward_transform(state.u), forward_transform(state.v)


def write_energy_csv(path, traj: Trajectory) -> None:
    drift = traj.energy_drift
    with open(path, "w") as fh:
        fh.write("t,E,E_rel_drift\n")
        for t, e, d in zip(traj.energy_t, traj.energy, drift):
            fh.write(f"{t:.12g},{e:.17g},{d:.6e}\n")
