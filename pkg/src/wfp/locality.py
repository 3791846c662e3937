"""Quantitative checks of frequency-local energy transfer.

A unit complex plane wave ``exp(i k0.x)`` evolving in ``c^2 = 1 + eps p``
feeds an initially silent mode ``n1`` at first order through the closed form

    u_approx(t) = -(eps (n1.k0) / (2|n1|)) p_hat[n1 - k0]
                  * int_0^t [sin(|n1| t - (|n1|-|k0|) s) + sin(|n1| t - (|n1|+|k0|) s)] ds

(wavevectors scaled by ``2 pi / L``).  The functions here evaluate that
closed form, compare it with reference-solver trajectories, and measure the
accompanying energy bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    Grid,
    SpatialField,
    Spectrum,
    as_freq,
    forward_transform,
    inverse_transform,
    plane_wave,
    resample_spectrum,
)
from .solver import Medium, SolverConfig, WaveState, integrate


class DegenerateFrequency(ValueError):
    pass


def _wavevector(k, grid: Grid) -> np.ndarray:
    return 2 * np.pi * np.asarray(as_freq(k, grid.dim), dtype=float) / grid.length


@dataclass(frozen=True, eq=False)
class TheoremSetup:
    k0: tuple
    eps: float
    p_hat: Spectrum
    T: float

    def __post_init__(self):
        object.__setattr__(self, "k0", as_freq(self.k0, self.p_hat.grid.dim))
        if not 0 <= self.eps <= 0.1:
            raise ValueError(f"eps must lie in [0, 0.1], got {self.eps}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if abs(self.p_hat.coeffs.flat[0]) > 1e-12:
            raise ValueError("perturbation p must have zero mean")
        if self.p_inf > 1 + 1e-9:
            raise ValueError(f"perturbation must satisfy |p| <= 1, got {self.p_inf:.6g}")
        if not np.any(self.k0):
            raise DegenerateFrequency("driving frequency must be nonzero")

    @classmethod
    def from_field(cls, p: SpatialField, k0, eps: float, T: float) -> "TheoremSetup":
        return cls(k0, eps, forward_transform(p), T)

    @property
    def grid(self) -> Grid:
        return self.p_hat.grid

    @property
    def k0_norm(self) -> float:
        return float(np.linalg.norm(_wavevector(self.k0, self.grid)))

    @property
    def eta(self) -> float:
        return self.eps * self.T * self.k0_norm

    @property
    def p_inf(self) -> float:
        return float(np.max(np.abs(inverse_transform(self.p_hat).values)))

    @property
    def p_rms(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.p_hat.coeffs) ** 2)))

    @property
    def c1(self) -> float:
        """Constant in the dominant-mode perturbation bound."""
        return float(np.sqrt(1 + 3 * self.eps) * self.p_rms)

    def medium(self) -> Medium:
        p = inverse_transform(self.p_hat, real=True)
        return Medium.perturbed(p, self.eps)

    def initial(self) -> SpatialField:
        return plane_wave(self.grid, self.k0)


@dataclass(frozen=True)
class ScatterReport:
    n1: tuple
    u_true: complex
    u_approx: complex
    abs_error: float
    eta: float
    error_over_eta: float


def _sine_integral(a: float, b: float, t: float) -> float:
    """``int_0^t [sin(a t - (a-b) s) + sin(a t - (a+b) s)] ds`` for a, b >= 0.

    Each term is ``(cos(b t) - cos(a t)) / (a -+ b)``; written as
    ``t sin((a+b)t/2) sinc((a-b)t/2)`` it has no division by ``a - b`` and
    reduces to ``t sin(a t)`` at resonance.
    """
    def term(c):  # c = a - b or a + b; int_0^t sin(a t - c s) ds
        half = 0.5 * c * t
        return t * np.sin(a * t - half) * np.sinc(half / np.pi)

    return float(term(a - b) + term(a + b))


def duhamel_approx(setup: TheoremSetup, n1, t: float) -> complex:
    """First-order scattered amplitude at mode ``n1`` and time ``t``."""
    grid = setup.grid
    n1 = as_freq(n1, grid.dim)
    if n1 == setup.k0:
        raise ValueError("n1 must differ from the driving frequency")
    kn = _wavevector(n1, grid)
    a = float(np.linalg.norm(kn))
    if a == 0:
        raise DegenerateFrequency("n1 = 0 has no oscillator frequency")
    if not 0 <= t <= setup.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, T]")
    k0 = _wavevector(setup.k0, grid)
    b = float(np.linalg.norm(k0))
    diff = tuple(x - y for x, y in zip(n1, setup.k0))
    p = setup.p_hat[diff] if grid.in_range(diff) else 0j
    pref = -setup.eps * float(kn @ k0) / (2 * a) * p
    return complex(pref * _sine_integral(a, b, t))


def _check_resolution(setup: TheoremSetup) -> None:
    ppw = setup.grid.n / max(abs(c) for c in setup.k0)
    if ppw < 8:
        raise ValueError(f"grid resolves k0 with only {ppw:.1f} points per wavelength (< 8)")


def _run(setup: TheoremSetup, cfg: SolverConfig, snap_times=None):
    _check_resolution(setup)
    grid = setup.grid
    if cfg.t_final != setup.T:
        cfg = SolverConfig(setup.T, cfg.dt, cfg.cfl_safety)
    f = setup.initial()
    g = SpatialField(grid, np.zeros(grid.shape, dtype=complex))
    return integrate(f, g, setup.medium(), cfg, snap_times=snap_times)


def refine(setup: TheoremSetup, factor: int = 2) -> TheoremSetup:
    """Same problem on a grid ``factor`` times finer (spectrum zero-padded)."""
    return TheoremSetup(setup.k0, setup.eps, resample_spectrum(setup.p_hat, setup.grid.n * factor), setup.T)


def verify_theorem(
    setup: TheoremSetup, n1_list, solver_cfg: SolverConfig, richardson: bool = True
) -> list[ScatterReport]:
    """Compare solver amplitudes at time ``T`` with the closed form.

    With ``richardson`` the solver runs at N and 2N with exactly halved time
    step and the amplitudes are extrapolated as ``(4 a_2N - a_N) / 3``,
    removing the leading O(dx^2) error so the comparison measures the
    approximation rather than the discretization.
    """
    if setup.eta > 0.2:
        raise ValueError(f"eta={setup.eta:.3g} outside the validity regime (<= 0.2)")
    _check_resolution(setup)
    cfg = SolverConfig(setup.T, solver_cfg.dt, solver_cfg.cfl_safety)
    c_max = float(np.sqrt(1 + setup.eps * setup.p_inf))
    dt, _ = cfg.time_step(setup.grid, c_max)
    final = _run(setup, SolverConfig(setup.T, dt)).final
    spec = forward_transform(final.u)
    fine = None
    if richardson:
        fine_final = _run(refine(setup), SolverConfig(setup.T, dt / 2)).final
        fine = forward_transform(fine_final.u)
    eta = setup.eta
    reports = []
    for n1 in n1_list:
        n1 = as_freq(n1, setup.grid.dim)
        u_true = spec[n1] if fine is None else (4 * fine[n1] - spec[n1]) / 3
        u_apx = duhamel_approx(setup, n1, final.t)
        err = abs(u_true - u_apx)
        reports.append(ScatterReport(n1, u_true, u_apx, err, eta, err / eta if eta > 0 else 0.0))
    return reports


def theorem_trajectory(setup: TheoremSetup, solver_cfg: SolverConfig, n_snaps: int = 21) -> list[WaveState]:
    times = list(np.linspace(0.0, setup.T, n_snaps))
    return _run(setup, solver_cfg, snap_times=times).snapshots


def weighted_gradient_sum(spec: Spectrum) -> float:
    """``sum_n |n|^2 |u_n|^2`` with wavevectors ``2 pi n / L``."""
    kk = sum(w**2 for w in spec.grid.wavenumbers())
    return float(np.sum(kk * np.abs(spec.coeffs) ** 2))


def gradient_bound_ratios(setup: TheoremSetup, snapshots) -> np.ndarray:
    """Each snapshot's weighted gradient sum over ``(1 + 3 eps) |k0|^2``."""
    bound = (1 + 3 * setup.eps) * setup.k0_norm**2
    return np.array([weighted_gradient_sum(forward_transform(s.u)) / bound for s in snapshots])


def dominant_mode_deviation(setup: TheoremSetup, snapshots) -> tuple[np.ndarray, np.ndarray]:
    """``|u_k0(t) - cos(|k0| t)|`` and its bound ``C1 eps t |k0|`` per snapshot."""
    dev, bound = [], []
    for s in snapshots:
        a = forward_transform(s.u)[setup.k0]
        dev.append(abs(a - np.cos(setup.k0_norm * s.t)))
        bound.append(setup.c1 * setup.eps * s.t * setup.k0_norm)
    return np.array(dev), np.array(bound)


def scattered_energy(spec_u: Spectrum, spec_v: Spectrum, k0, eps: float) -> float:
    """Energy ``sum_{n != k0} |v_n|^2 + (1 - eps)|n|^2 |u_n|^2``."""
    grid = spec_u.grid
    if spec_v.grid != grid:
        raise ValueError("spectra live on different grids")
    kk = sum(w**2 for w in grid.wavenumbers())
    dens = np.abs(spec_v.coeffs) ** 2 + (1 - eps) * kk * np.abs(spec_u.coeffs) ** 2
    return float(dens.sum() - dens[grid.slot(as_freq(k0, grid.dim))])


def fit_scatter_constant(setup: TheoremSetup, snapshots) -> float:
    """Smallest ``C`` with ``E_scatt(t) <= C (eps + eta) |k0|^2`` on the snapshots."""
    denom = (setup.eps + setup.eta) * setup.k0_norm**2
    if denom == 0:
        return 0.0
    e = [scattered_energy(forward_transform(s.u), forward_transform(s.v), setup.k0, setup.eps) for s in snapshots]
    return float(max(e) / denom)


def spectrum_timeline(f: SpatialField, medium: Medium, cfg: SolverConfig, snap_times) -> list[Spectrum]:
    """Displacement spectra at each requested time, starting from rest."""
    g = SpatialField(f.grid, np.zeros(f.grid.shape, dtype=f.values.dtype))
    traj = integrate(f, g, medium, cfg, snap_times=list(snap_times))
    return [forward_transform(s.u) for s in traj.snapshots]


def window_mask(grid: Grid, centers, radius: int) -> np.ndarray:
    """Boolean FFT-order mask of all modes within l-inf ``radius`` of any center."""
    ks = grid.frequencies()
    mask = np.zeros(grid.shape, dtype=bool)
    for c in centers:
        c = as_freq(c, grid.dim)
        near = np.ones(grid.shape, dtype=bool)
        for kc, karr in zip(c, ks):
            near &= np.abs(karr - kc) <= radius
        mask |= near
    return mask


def mode_energy(spec_u: Spectrum, spec_v: Spectrum) -> np.ndarray:
    kk = sum(w**2 for w in spec_u.grid.wavenumbers())
    return np.abs(spec_v.coeffs) ** 2 + kk * np.abs(spec_u.coeffs) ** 2


def outside_window_fraction(spec_u: Spectrum, spec_v: Spectrum, centers, radius: int) -> float:
    """Share of scattered energy (all modes but the centers) lying outside the windows."""
    grid = spec_u.grid
    dens = mode_energy(spec_u, spec_v)
    scattered = ~window_mask(grid, centers, 0)
    inside = window_mask(grid, centers, radius)
    total = dens[scattered].sum()
    if total == 0:
        return 0.0
    return float(dens[scattered & ~inside].sum() / total)


def write_theorem_csv(path, setup: TheoremSetup, reports) -> None:
    with open(path, "w") as fh:
        fh.write("eps,T,k0,n1,eta,abs_err,err_over_eta,u_approx_re,u_approx_im,u_true_re,u_true_im\n")
        k0 = " ".join(map(str, setup.k0))
        for r in reports:
            fh.write(
                f"{setup.eps:.6g},{setup.T:.6g},{k0},{' '.join(map(str, r.n1))},{r.eta:.6g},"
                f"{r.abs_error:.6e},{r.error_over_eta:.6e},{r.u_approx.real:.10e},{r.u_approx.imag:.10e},"
                f"{r.u_true.real:.10e},{r.u_true.imag:.10e}\n"
            )


def write_timeline_csv(path, times, spectra) -> None:
    """Long-format magnitudes: one row per (t, mode)."""
    with open(path, "w") as fh:
        dim = spectra[0].grid.dim if spectra else 1
        cols = ",".join(f"k{i}" for i in range(dim))
        fh.write(f"t,{cols},abs_u\n")
        for t, s in zip(times, spectra):
            ks = [k.ravel() for k in s.grid.frequencies()]
            mags = s.magnitude().ravel()
            keep = mags > 1e-14
            for idx in np.flatnonzero(keep):
                kk = ",".join(str(int(k[idx])) for k in ks)
                fh.write(f"{t:.8g},{kk},{mags[idx]:.10e}\n")
