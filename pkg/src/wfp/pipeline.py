"""Frequency-local propagation of a wavefield by one learned time step.

The map from ``u(0)`` to ``(u(dt), u_t(dt))`` is assembled mode by mode:

1. extract the driving modes of ``f`` (coefficients above ``tau``);
2. ask a dictionary source for the unit-amplitude response of each mode;
3. scale each response by its coefficient and sum the windows;
4. transform back to the grid.

Step 3 is linear in the coefficients, so the whole map is linear in ``f`` for
a fixed driving set.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .datagen import (
    DrivingComponent,
    MediumSpec,
    NonPositiveSpeed,
    NyquistViolation,
    extract_driving,
    gen_initial,
    gen_medium,
    medium_feature,
    window_offsets,
)
from .fields import Grid, SpatialField, Spectrum, as_freq, forward_transform, inverse_transform
from .network import GatedNetParams, ModelMeta, decode_outputs, encode_tokens, forward, load_checkpoint, save_checkpoint
from .solver import Medium, NonFiniteState, SolverConfig, WaveState, solve

log = logging.getLogger(__name__)


class EmptyDrivingSet(UserWarning):
    pass


class OutOfRangeFrequency(UserWarning):
    pass


class SpectralLeakage(UserWarning):
    pass


# share of the medium's non-mean power beyond r_c that triggers a warning
LEAKAGE_WARN = 0.1


@dataclass(frozen=True, eq=False)
class EvolutionDictionary:
    """Response over ``W(k0, r_w)`` to a unit-amplitude wave at ``k0``."""

    k0: tuple
    u_window: np.ndarray
    v_window: np.ndarray

    @property
    def r_w(self) -> int:
        d = len(self.k0)
        return int(round(self.u_window.size ** (1 / d))) // 2


# ---------------------------------------------------------------------------
# dictionary sources

def canonical(k) -> tuple[tuple, bool]:
    """Representative with first nonzero component positive, and whether ``k`` was flipped."""
    k = tuple(int(c) for c in k)
    for c in k:
        if c != 0:
            return (k, False) if c > 0 else (tuple(-x for x in k), True)
    return k, False


@dataclass
class WfpModel:
    params: GatedNetParams
    meta: ModelMeta

    def __post_init__(self):
        i, _, o = self.params.dims
        if (i, o) != (self.meta.in_dim, self.meta.out_dim):
            raise ValueError("network dims do not match model metadata")

    dim = property(lambda self: self.meta.dim)
    r_c = property(lambda self: self.meta.r_c)
    r_w = property(lambda self: self.meta.r_w)
    tau = property(lambda self: self.meta.tau)
    t_step = property(lambda self: self.meta.t_step)

    def windows(self, ks: np.ndarray, feat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit responses for canonical frequencies ``ks`` (one row each)."""
        y = forward(self.params, encode_tokens(ks, feat, self.meta))
        return decode_outputs(y, ks, self.meta)

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.meta)

    @classmethod
    def load(cls, path) -> "WfpModel":
        return cls(*load_checkpoint(path))


@dataclass
class HomogeneousPropagator:
    """Exact dictionaries for ``c = const``: diagonal ``cos``/``sin`` windows.

    Used as a reference dictionary source and for checks that isolate the
    pipeline from network error.
    """

    meta: ModelMeta
    c: float = 1.0

    def windows(self, ks, feat=None):
        ks = np.atleast_2d(ks)
        n = (2 * self.meta.r_w + 1) ** self.meta.dim
        w = self.c * self.meta.omega(ks)
        du = np.zeros((len(ks), n), dtype=complex)
        dv = np.zeros((len(ks), n), dtype=complex)
        du[:, n // 2] = np.cos(w * self.meta.t_step)
        dv[:, n // 2] = -w * np.sin(w * self.meta.t_step)
        return du, dv


def evolve_modes(model, ks, feat) -> tuple[np.ndarray, np.ndarray]:
    """Unit responses for arbitrary nonzero frequencies.

    Modes in the negative half-space are served by conjugate reflection of
    their mirror, ``D(-k)[m] = conj(D(k)[-m])``, which holds for any real
    medium.  The canonical flattening order lists offset ``-m`` at the
    reversed position of ``m``.
    """
    meta = model.meta
    ks = np.asarray(ks, dtype=np.int64).reshape(-1, meta.dim)
    canon, flip = zip(*(canonical(k) for k in ks)) if len(ks) else ((), ())
    canon = np.array(canon, dtype=np.int64).reshape(-1, meta.dim)
    if np.any(np.all(canon == 0, axis=1)):
        raise ValueError("the zero mode has no learned dictionary")
    norms = np.abs(canon).max(axis=1)
    if np.any((norms < meta.k_min) | (norms > meta.k_max)):
        warnings.warn(
            f"{int(np.sum((norms < meta.k_min) | (norms > meta.k_max)))} driving modes lie outside the "
            f"trained band [{meta.k_min}, {meta.k_max}]",
            OutOfRangeFrequency,
            stacklevel=3,
        )
    du, dv = model.windows(canon, feat)
    flip = np.asarray(flip, dtype=bool)
    du[flip] = np.conj(du[flip, ::-1])
    dv[flip] = np.conj(dv[flip, ::-1])
    return du, dv


def evolve_mode(model, k0, feat) -> EvolutionDictionary:
    k0 = as_freq(k0, model.meta.dim)
    du, dv = evolve_modes(model, [k0], feat)
    return EvolutionDictionary(k0, du[0], dv[0])


# ---------------------------------------------------------------------------
# aggregation

def aggregate(dicts, grid: Grid) -> tuple[Spectrum, Spectrum]:
    """Sum amplitude-scaled windows into full ``u`` and ``v`` spectra.

    ``dicts`` is a sequence of ``(DrivingComponent, EvolutionDictionary)``.
    Contributions are added in sorted-``k`` order so the result does not
    depend on the order of ``dicts``.  Window modes at or beyond Nyquist are
    dropped.
    """
    u = np.zeros(grid.shape, dtype=complex)
    v = np.zeros(grid.shape, dtype=complex)
    items = sorted(dicts, key=lambda cd: tuple(cd[0].k))
    if not items:
        return Spectrum(grid, u), Spectrum(grid, v)
    r_w = items[0][1].r_w
    if any(d.r_w != r_w for _, d in items):
        raise ValueError("dictionaries disagree on window radius")
    offsets = window_offsets(r_w, grid.dim)
    modes = np.concatenate([np.asarray(c.k) + offsets for c, _ in items])
    cu = np.concatenate([c.amp * d.u_window for c, d in items])
    cv = np.concatenate([c.amp * d.v_window for c, d in items])
    _scatter(u, v, modes, cu, cv, grid)
    return Spectrum(grid, u), Spectrum(grid, v)


def _scatter(u, v, modes, cu, cv, grid: Grid) -> None:
    ok = np.all(2 * np.abs(modes) < grid.n, axis=1)
    slots = tuple((modes[ok] % grid.n).T)
    np.add.at(u, slots, cu[ok])
    np.add.at(v, slots, cv[ok])


def symmetrize(spec: Spectrum) -> tuple[Spectrum, float]:
    """Average each ``c_k`` with ``conj(c_{-k})``; returns the pre-averaging deviation."""
    c = spec.coeffs
    axes = tuple(range(spec.grid.dim))
    mirror = np.conj(np.roll(np.flip(c, axis=axes), 1, axis=axes))
    dev = float(np.max(np.abs(c - mirror))) if c.size else 0.0
    return Spectrum(spec.grid, 0.5 * (c + mirror)), dev


# ---------------------------------------------------------------------------
# prediction

@dataclass
class Prediction:
    u_hat: Spectrum
    v_hat: Spectrum
    driving: list
    asymmetry: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.driving

    def state(self, t: float, real: bool = True) -> WaveState:
        u = inverse_transform(self.u_hat, real=True if real else None)
        v = inverse_transform(self.v_hat, real=True if real else None)
        return WaveState(u, v, t)


def _check_feature_window(grid: Grid, r_c: int) -> None:
    if 2 * r_c >= grid.n:
        raise NyquistViolation(f"medium window radius {r_c} does not fit an N={grid.n} grid")


def leaked_fraction(medium: Medium, r_c: int) -> float:
    """Share of ``c^2``'s non-mean spectral power outside the feature window."""
    c = forward_transform(medium.c_sq).coeffs.copy()
    c.flat[0] = 0
    power = np.abs(c) ** 2
    total = float(power.sum())
    if total == 0:
        return 0.0
    outside = np.zeros(c.shape, dtype=bool)
    for k in medium.grid.frequencies():
        outside |= np.abs(k) > r_c
    return float(power[outside].sum()) / total


def _medium_feature_checked(medium: Medium, r_c: int) -> np.ndarray:
    _check_feature_window(medium.grid, r_c)
    frac = leaked_fraction(medium, r_c)
    if frac > LEAKAGE_WARN:
        warnings.warn(
            f"{100 * frac:.0f}% of the medium's variation lies beyond the r_c={r_c} feature window",
            SpectralLeakage,
            stacklevel=3,
        )
    return medium_feature(medium, r_c)


def _check_nyquist_content(spec: Spectrum, tau: float) -> None:
    g = spec.grid
    if g.n % 2:
        return
    nyq = np.zeros(g.shape, dtype=bool)
    for k in g.frequencies():
        nyq |= 2 * np.abs(k) == g.n
    if np.any(np.abs(spec.coeffs[nyq]) >= max(tau, 1e-14)):
        raise NyquistViolation("input has content at the Nyquist frequency; refine the grid")


def propagate_spectrum(model, spec: Spectrum, feat, driving=None, tau=None, real=False) -> Prediction:
    """Phases 1-3 on a spectrum: responses to a displacement with zero velocity.

    ``driving`` overrides extraction; otherwise modes with ``|c_k| >= tau``
    (model default) drive.  The zero mode is static under any medium and is
    carried through exactly.
    """
    tau = model.meta.tau if tau is None else tau
    if driving is None:
        _check_nyquist_content(spec, tau)
        driving = extract_driving(spec, tau)
    grid = spec.grid
    u = np.zeros(grid.shape, dtype=complex)
    v = np.zeros(grid.shape, dtype=complex)
    items = sorted(driving, key=lambda c: tuple(c.k))
    static = [c for c in items if not any(c.k)]
    moving = [c for c in items if any(c.k)]
    for c in static:
        u[(0,) * grid.dim] += c.amp
    if moving:
        ks = np.array([c.k for c in moving], dtype=np.int64)
        amps = np.array([c.amp for c in moving], dtype=complex)[:, None]
        du, dv = evolve_modes(model, ks, feat)
        offsets = window_offsets(model.meta.r_w, grid.dim)
        modes = (ks[:, None, :] + offsets[None]).reshape(-1, grid.dim)
        _scatter(u, v, modes, (amps * du).ravel(), (amps * dv).ravel(), grid)
    u_hat, v_hat = Spectrum(grid, u), Spectrum(grid, v)
    asym = 0.0
    if real:
        u_hat, du_dev = symmetrize(u_hat)
        v_hat, dv_dev = symmetrize(v_hat)
        asym = max(du_dev / max(np.max(np.abs(u)), 1e-300), dv_dev / max(np.max(np.abs(v)), 1e-300))
        log.debug("pre-symmetrization deviation %.3e", asym)
    return Prediction(u_hat, v_hat, list(driving), asym)


def _zero_velocity(g) -> None:
    if g is not None and np.any(g.values != 0):
        raise NotImplementedError("nonzero initial velocity is not supported; pass g = 0")


def predict_detailed(model, f: SpatialField, g: SpatialField | None, medium: Medium, driving=None, tau=None) -> Prediction:
    _zero_velocity(g)
    if medium.grid != f.grid:
        raise ValueError("f and medium must share one grid")
    feat = _medium_feature_checked(medium, model.meta.r_c)
    pred = propagate_spectrum(model, forward_transform(f), feat, driving, tau, real=f.is_real)
    if pred.empty:
        warnings.warn("no mode exceeds the driving threshold; output is zero", EmptyDrivingSet, stacklevel=2)
    return pred


def predict(model, f: SpatialField, g: SpatialField | None, medium: Medium, driving=None, tau=None) -> WaveState:
    """Wavefield one model step after ``(f, g = 0)``."""
    pred = predict_detailed(model, f, g, medium, driving, tau)
    return pred.state(model.meta.t_step, real=f.is_real)


def spectral_energy(u_hat: Spectrum, v_hat: Spectrum, c: float = 1.0) -> float:
    """``0.5 * sum(|v_k|^2 + c^2 |kappa_k|^2 |u_k|^2)`` per unit volume."""
    kk = sum(w**2 for w in u_hat.grid.wavenumbers())
    return 0.5 * float(np.sum(np.abs(v_hat.coeffs) ** 2 + c**2 * kk * np.abs(u_hat.coeffs) ** 2))


@dataclass
class Rollout:
    final: WaveState
    energy: list = field(default_factory=list)
    n_driving: list = field(default_factory=list)

    @property
    def max_growth(self) -> float:
        e = np.asarray(self.energy)
        if e.size < 2:
            return 0.0
        return float(np.max(e[1:] / e[:-1]) - 1)


def _active_driving(u_hat: Spectrum, v_hat: Spectrum, tau: float, meta: ModelMeta) -> tuple[list, list]:
    """Driving sets for ``u`` and ``u_t`` from each mode's oscillator amplitude.

    A mode stays active while ``sqrt(|u_k|^2 + |v_k / omega_k|^2) >= tau``.
    Thresholding ``|u_k|`` alone would drop modes whenever their displacement
    passes through zero mid-oscillation.
    """
    grid = u_hat.grid
    w = 2 * np.pi * np.sqrt(sum(k.astype(float) ** 2 for k in grid.frequencies())) / meta.domain_len
    v_scaled = np.where(w > 0, v_hat.coeffs / np.where(w > 0, w, 1), 0)
    amp = np.sqrt(np.abs(u_hat.coeffs) ** 2 + np.abs(v_scaled) ** 2)
    comps = extract_driving(Spectrum(grid, amp.astype(complex)), tau)
    return (
        [DrivingComponent(c.k, u_hat[c.k]) for c in comps],
        [DrivingComponent(c.k, v_hat[c.k]) for c in comps],
    )


def rollout(model, f: SpatialField, g: SpatialField | None, medium: Medium, n_steps: int, tau=None, growth_limit=0.1) -> Rollout:
    """Advance ``n_steps`` model steps.

    With ``C`` the learned one-step response to a displacement and ``C'`` its
    velocity, the exact relations

        u(t + dt) = 2 C[u(t)] - u(t - dt),     u_t(t + dt) = C'[u(t)] + C[u_t(t)]

    extend one step to many without needing a velocity-driven dictionary.
    The driving set is re-extracted at every step from the oscillator
    amplitude of each mode (see ``_active_driving``).
    Spectral energy is recorded each step; growth above ``growth_limit`` is
    logged as a warning.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    _zero_velocity(g)
    grid = f.grid
    if medium.grid != grid:
        raise ValueError("f and medium must share one grid")
    meta = model.meta
    tau = meta.tau if tau is None else tau
    feat = _medium_feature_checked(medium, meta.r_c)
    real = f.is_real

    def clean(spec):
        return symmetrize(spec)[0] if real else spec

    u_prev = forward_transform(f)
    v_prev = Spectrum.zeros(grid)
    c0 = float(np.sqrt(np.real(forward_transform(medium.c_sq)[(0,) * grid.dim])))
    energy = [spectral_energy(u_prev, v_prev, c0)]
    first = propagate_spectrum(model, u_prev, feat, tau=tau, real=real)
    if first.empty:
        warnings.warn("no mode exceeds the driving threshold; output is zero", EmptyDrivingSet, stacklevel=2)
    u_cur, v_cur = first.u_hat, first.v_hat
    n_drive = [len(first.driving)]
    energy.append(spectral_energy(u_cur, v_cur, c0))
    for _ in range(n_steps - 1):
        drive_u, drive_v = _active_driving(u_cur, v_cur, tau, meta)
        pu = propagate_spectrum(model, u_cur, feat, driving=drive_u)
        pv = propagate_spectrum(model, v_cur, feat, driving=drive_v)
        u_next = clean(Spectrum(grid, 2 * pu.u_hat.coeffs - u_prev.coeffs))
        v_next = clean(Spectrum(grid, pu.v_hat.coeffs + pv.u_hat.coeffs))
        if not (np.all(np.isfinite(u_next.coeffs)) and np.all(np.isfinite(v_next.coeffs))):
            raise NonFiniteState("rollout produced non-finite coefficients")
        u_prev, u_cur, v_cur = u_cur, u_next, v_next
        n_drive.append(len(pu.driving))
        energy.append(spectral_energy(u_cur, v_cur, c0))
    e = np.asarray(energy)
    growth = e[1:] / np.where(e[:-1] > 0, e[:-1], 1) - 1
    if np.any(growth > growth_limit):
        log.warning("rollout energy grew by %.1f%% in one step", 100 * float(growth.max()))
    t = n_steps * meta.t_step
    state = WaveState(inverse_transform(u_cur, real=True if real else None), inverse_transform(v_cur, real=True if real else None), t)
    return Rollout(state, energy, n_drive)


# ---------------------------------------------------------------------------
# evaluation against the reference solver

def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def reference_step(f: SpatialField, medium: Medium, t: float, cfl_safety: float = 0.5) -> WaveState:
    return solve(f, SpatialField(f.grid, np.zeros_like(f.values)), medium, SolverConfig(t, cfl_safety=cfl_safety))


def error_metrics(pred: WaveState, ref: WaveState) -> dict:
    du = pred.u.values - ref.u.values
    return {
        "L1": float(np.mean(np.abs(du))),
        "L2": float(np.sqrt(np.mean(np.abs(du) ** 2))),
        "max": float(np.max(np.abs(du))),
        "rel_L2": relative_l2(pred.u.values, ref.u.values),
    }


def plane_wave_errors(model, media, grid: Grid, ks) -> np.ndarray:
    """Relative L2 error in ``u`` for unit sine inputs, one per ``(medium, k)`` pair."""
    out = []
    for medium, k in zip(media, ks):
        f = gen_initial(k, grid)
        ref = reference_step(f, medium, model.meta.t_step)
        out.append(relative_l2(predict(model, f, None, medium).u.values, ref.u.values))
    return np.array(out)


@dataclass
class OodRow:
    level: float
    mean_l1: float
    std_l1: float
    n_media: int
    skipped: int = 0


def ood_error_curve(
    model,
    levels,
    n_media: int,
    grid: Grid,
    kind="in_dist",
    seed: int = 0,
    k_range=None,
) -> tuple[list[OodRow], float]:
    """Mean L1 error vs the reference solver for each disturbance level.

    ``kind`` is the medium family; for ``in_dist``/``ood_strong`` the level is
    the base strength ``alpha``, for ``ood_disc`` it is the jump ``delta``.
    Each medium is paired with one random plane wave; the same seeds are used
    at every level so the sweep isolates the effect of the level.  Returns the
    rows and the Spearman rank correlation of mean error against level.
    """
    from .datagen import MediumKind, sample_case

    levels = [float(a) for a in levels]
    if levels != sorted(levels):
        raise ValueError("levels must be sorted ascending")
    kind = MediumKind(kind)
    k_range = k_range or (model.meta.k_min, model.meta.k_max)
    rows = []
    for level in levels:
        if kind is MediumKind.OOD_DISCONTINUOUS:
            base = MediumSpec(kind, delta=level)
        else:
            base = MediumSpec(kind, alpha=level)
        errs, index, skipped = [], 0, 0
        while len(errs) < n_media:
            mspec, k = sample_case(base, grid, seed, index, k_range)
            index += 1
            try:
                medium = gen_medium(mspec, grid)
            except NonPositiveSpeed:
                skipped += 1
                if skipped > 10 * n_media:
                    raise
                continue
            f = gen_initial(k, grid)
            ref = reference_step(f, medium, model.meta.t_step)
            errs.append(error_metrics(predict(model, f, None, medium), ref)["L1"])
        if skipped:
            log.info("level %g: skipped %d media with non-positive speed", level, skipped)
        rows.append(OodRow(level, float(np.mean(errs)), float(np.std(errs)), n_media, skipped))
    means = [r.mean_l1 for r in rows]
    rho = float(spearmanr(levels, means).statistic) if len(levels) > 1 else float("nan")
    return rows, rho


def write_ood_csv(path, rows, rho: float) -> None:
    with open(path, "w") as fh:
        fh.write("level,mean_l1,std_l1,n_media,skipped,spearman_rho\n")
        for r in rows:
            fh.write(f"{r.level:.6g},{r.mean_l1:.10e},{r.std_l1:.10e},{r.n_media},{r.skipped},{rho:.6f}\n")


def error_mass_near(err: np.ndarray, grid: Grid, lo: float, hi: float, dilation: float = 2.0) -> float:
    """Fraction of total ``|err|`` inside the square ``[lo, hi]^d`` dilated about its centre."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * dilation
    inside = np.ones(grid.shape, dtype=bool)
    for x in grid.coords():
        inside &= np.abs(x / grid.length - mid) <= half
    total = float(np.sum(np.abs(err)))
    return float(np.sum(np.abs(err[inside]))) / total if total > 0 else 0.0
