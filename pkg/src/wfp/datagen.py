"""Media, initial conditions, window extraction, and training datasets.

Windows are l-inf boxes ``{k : |k - k_c|_inf <= r}``.  Their coefficients
are flattened with offsets in lexicographic order from ``(-r, ..., -r)`` to
``(r, ..., r)``, each contributing an interleaved ``[Re, Im]`` pair.  Modes
that are not representable on the grid (including the Nyquist mode) read as
zero and are flagged in the accompanying mask.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .fields import Grid, SpatialField, Spectrum, as_freq, forward_transform
from .solver import Medium, NonFiniteState, SolverConfig, solve_batch

DATASET_MAGIC = b"WFPD"
DATASET_VERSION = 1

# +k coefficient of sin(2 pi k.x / L) under the amplitude convention
SINE_AMPLITUDE = -0.5j
N_TERMS = 12
DISC_SQUARE = (0.28, 0.48)


class NonPositiveSpeed(ValueError):
    pass


class NyquistViolation(ValueError):
    pass


class MediumKind(str, Enum):
    IN_DIST = "in_dist"
    OOD_DISCONTINUOUS = "ood_disc"
    OOD_STRONG = "ood_strong"


@dataclass(frozen=True)
class MediumSpec:
    kind: MediumKind = MediumKind.IN_DIST
    alpha: float = 0.03
    c_offset: float = 0.0
    seed: int = 0
    delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MediumKind(self.kind))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.kind is MediumKind.IN_DIST and abs(self.c_offset) > 0.02:
            raise ValueError("in-distribution offset must lie in [-0.02, 0.02]")
        if not 0 <= self.delta <= 0.2:
            raise ValueError("delta must lie in [0, 0.2]")


@dataclass(frozen=True)
class FrequencyWindow:
    center: tuple
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("window radius must be non-negative")
        object.__setattr__(self, "center", tuple(int(c) for c in np.atleast_1d(self.center)))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def size(self) -> int:
        return (2 * self.radius + 1) ** self.dim

    def offsets(self) -> np.ndarray:
        """``(size, dim)`` integer offsets in canonical order."""
        return window_offsets(self.radius, self.dim)

    def modes(self) -> np.ndarray:
        return self.offsets() + np.asarray(self.center)


def window_offsets(radius: int, dim: int) -> np.ndarray:
    r = range(-radius, radius + 1)
    return np.array(list(itertools.product(r, repeat=dim)), dtype=np.int64).reshape(-1, dim)


@dataclass(frozen=True)
class DrivingComponent:
    k: tuple
    amp: complex


# ---------------------------------------------------------------------------
# media and initial conditions

def perturbation_terms(rng: np.random.Generator, dim: int, alpha: float):
    """Random trigonometric terms ``(A_k, p_k, f_k)`` for k = 1..12."""
    terms = []
    for k in range(1, N_TERMS + 1):
        amp = alpha * 0.9**k
        p = int(rng.integers(0, 2))
        fmax = k // 2 + 2
        f = [int(rng.integers(1, fmax + 1))]
        if dim == 2:
            fy = int(rng.integers(1, fmax + 1))
            f.append(fy if rng.integers(0, 2) else -fy)
        terms.append((amp, p, tuple(f)))
    return terms


def speed_field(spec: MediumSpec, grid: Grid) -> np.ndarray:
    """Wave speed ``c`` on the grid; coordinates are taken as fractions of L."""
    xs = [x / grid.length for x in grid.coords()]
    if spec.kind is MediumKind.OOD_DISCONTINUOUS:
        lo, hi = DISC_SQUARE
        inside = np.ones(grid.shape, dtype=bool)
        for x in xs:
            inside &= (x >= lo) & (x <= hi)
        return 0.99 + 0.01 * np.sin(2 * np.pi * 10 * sum(xs)) + spec.delta * inside
    rng = np.random.default_rng(spec.seed)
    c = np.full(grid.shape, 1.0 + spec.c_offset)
    for amp, p, f in perturbation_terms(rng, grid.dim, spec.alpha):
        phase = 2 * np.pi * sum(fc * x for fc, x in zip(f, xs))
        c += amp * (p * np.cos(phase) + (1 - p) * np.sin(phase))
    return c


def gen_medium(spec: MediumSpec, grid: Grid) -> Medium:
    c = speed_field(spec, grid)
    if not np.all(c > 0):
        raise NonPositiveSpeed(f"generated speed reaches {c.min():.4g}")
    face = "harmonic" if spec.kind is MediumKind.OOD_DISCONTINUOUS else "arithmetic"
    return Medium(SpatialField(grid, c**2), face_average=face)


def in_dist_speed_bound(alpha: float, max_offset: float = 0.02) -> float:
    """Upper bound on ``|c - 1|`` for in-distribution media."""
    return max_offset + alpha * 0.9 * (1 - 0.9**N_TERMS) / (1 - 0.9)


def speed_bound(spec: MediumSpec) -> float:
    """Upper bound on ``max c`` for any medium drawn from ``spec``'s family."""
    if spec.kind is MediumKind.OOD_DISCONTINUOUS:
        return 1.0 + spec.delta
    return 1.0 + in_dist_speed_bound(spec.alpha)


def gen_initial(k, grid: Grid) -> SpatialField:
    """Real plane wave ``sin(2 pi k.x / L)``."""
    k = as_freq(k, grid.dim)
    if not any(k):
        raise NyquistViolation("zero frequency is not a plane wave")
    if not grid.in_range(k):
        raise NyquistViolation(f"frequency {k} not below Nyquist on an N={grid.n} grid")
    phase = 2 * np.pi * sum(kc * x for kc, x in zip(k, grid.coords())) / grid.length
    return SpatialField(grid, np.sin(phase))


# ---------------------------------------------------------------------------
# window extraction

def _window_slots(grid: Grid, win: FrequencyWindow):
    modes = win.modes()
    valid = np.all(2 * np.abs(modes) < grid.n, axis=1)
    slots = tuple((modes % grid.n).T)
    return slots, valid


def window_values(spec: Spectrum, win: FrequencyWindow) -> tuple[np.ndarray, np.ndarray]:
    """Complex window coefficients and the validity mask."""
    if win.dim != spec.grid.dim:
        raise ValueError("window and spectrum dimensions differ")
    slots, valid = _window_slots(spec.grid, win)
    vals = np.where(valid, spec.coeffs[slots], 0)
    return vals.astype(complex), valid


def to_real(z: np.ndarray) -> np.ndarray:
    """Interleave ``[Re, Im]`` along the last axis."""
    z = np.asarray(z)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x[..., 0::2] + 1j * x[..., 1::2]


def window_extract(spec: Spectrum, win: FrequencyWindow) -> np.ndarray:
    """Flat real array of length ``2 (2r+1)^d``."""
    return to_real(window_values(spec, win)[0])


def window_mask(grid: Grid, win: FrequencyWindow) -> np.ndarray:
    return _window_slots(grid, win)[1]


def scatter_back(values: np.ndarray, win: FrequencyWindow, grid: Grid) -> Spectrum:
    """Place a flattened window into an otherwise zero spectrum."""
    z = to_complex(values)
    slots, valid = _window_slots(grid, win)
    coeffs = np.zeros(grid.shape, dtype=complex)
    coeffs[tuple(s[valid] for s in slots)] = z[valid]
    return Spectrum(grid, coeffs)


def medium_feature(medium: Medium, r_c: int) -> np.ndarray:
    """Low-frequency window of ``c^2`` around the origin."""
    spec = forward_transform(medium.c_sq)
    return window_extract(spec, FrequencyWindow((0,) * spec.grid.dim, r_c))


def extract_driving(spec: Spectrum, tau: float, floor: float = 1e-14) -> list[DrivingComponent]:
    """Modes with ``|c_k| >= tau`` ordered by decreasing magnitude, then ``k``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    grid = spec.grid
    mag = np.abs(spec.coeffs)
    keep = mag >= max(tau, floor)
    for k in grid.frequencies():
        keep &= 2 * np.abs(k) < grid.n
    idx = np.flatnonzero(keep)
    ks = np.stack([k.ravel()[idx] for k in grid.frequencies()], axis=1)
    mags = mag.ravel()[idx]
    order = np.lexsort(tuple(ks[:, i] for i in reversed(range(grid.dim))) + (-mags,))
    vals = spec.coeffs.ravel()[idx]
    return [DrivingComponent(tuple(int(c) for c in ks[i]), complex(vals[i])) for i in order]


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    dim: int
    r_c: int
    r_w: int
    t_final: float
    k0: np.ndarray  # (n, dim) int
    medium_feat: np.ndarray  # (n, 2 (2 r_c + 1)^d)
    target_u: np.ndarray  # (n, 2 (2 r_w + 1)^d)
    target_v: np.ndarray
    mask: np.ndarray  # (n, (2 r_w + 1)^d) uint8
    failures: int = 0

    def __len__(self) -> int:
        return len(self.k0)

    def subset(self, idx) -> "Dataset":
        return replace(
            self,
            k0=self.k0[idx],
            medium_feat=self.medium_feat[idx],
            target_u=self.target_u[idx],
            target_v=self.target_v[idx],
            mask=self.mask[idx],
        )

    def split(self, n_test: int) -> tuple["Dataset", "Dataset"]:
        n = len(self)
        n_test = min(n_test, n - 1) if n > 1 else 0
        return self.subset(slice(0, n - n_test)), self.subset(slice(n - n_test, n))


def sample_frequency(rng: np.random.Generator, dim: int, kmin: int, kmax: int) -> tuple:
    fx = int(rng.integers(kmin, kmax + 1))
    if dim == 1:
        return (fx,)
    fy = int(rng.integers(kmin, kmax + 1))
    return (fx, fy if rng.integers(0, 2) else -fy)


def _sample_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def sample_case(spec: MediumSpec, grid: Grid, seed: int, index: int, k_range=(16, 96)):
    """Medium spec and driving frequency for one dataset record."""
    rng = _sample_stream(seed, index)
    child = int(rng.integers(0, 2**63 - 1))
    offset = spec.c_offset
    if spec.kind is not MediumKind.OOD_DISCONTINUOUS:
        drawn = float(rng.uniform(-0.02, 0.02))
        # alpha = 0 is the homogeneous override: keep c = 1 + c_offset exactly.
        # The draw still happens so frequencies match the alpha > 0 stream.
        if spec.alpha > 0:
            offset = drawn
    mspec = replace(spec, seed=child, c_offset=offset)
    k = sample_frequency(rng, grid.dim, *k_range)
    return mspec, k


def build_dataset(
    n_samples: int,
    spec: MediumSpec,
    grid: Grid,
    t_final: float = 0.02,
    r_c: int = 5,
    r_w: int = 7,
    seed: int = 0,
    k_range=(16, 96),
    chunk: int | None = None,
    cfl_safety: float = 0.5,
) -> Dataset:
    """Solve ``n_samples`` plane-wave problems and keep the windowed results.

    Each record draws its medium and frequency from its own stream keyed by
    ``(seed, index)``, so the result does not depend on chunking.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    d = grid.dim
    if chunk is None:
        chunk = max(1, 2**16 // grid.n**d)
    n_win = (2 * r_w + 1) ** d
    k0s, feats, tus, tvs, masks = [], [], [], [], []
    failures = 0
    cfg = SolverConfig(t_final, cfl_safety=cfl_safety)
    for start in range(0, n_samples, chunk):
        cases = []
        for i in range(start, min(start + chunk, n_samples)):
            mspec, k = sample_case(spec, grid, seed, i, k_range)
            try:
                medium = gen_medium(mspec, grid)
            except NonPositiveSpeed:
                failures += 1
                continue
            cases.append((k, medium))
        if not cases:
            continue
        u0 = np.stack([gen_initial(k, grid).values for k, _ in cases])
        c_sq = np.stack([m.c_sq.values for _, m in cases])
        try:
            u, v, _ = solve_batch(u0, np.zeros_like(u0), c_sq, grid, cfg, c_bound=speed_bound(spec))
        except NonFiniteState:
            failures += len(cases)
            continue
        axes = tuple(range(1, d + 1))
        uh = np.fft.fftn(u, axes=axes) / grid.n**d
        vh = np.fft.fftn(v, axes=axes) / grid.n**d
        for j, (k, medium) in enumerate(cases):
            win = FrequencyWindow(k, r_w)
            zu, valid = window_values(Spectrum(grid, uh[j]), win)
            zv, _ = window_values(Spectrum(grid, vh[j]), win)
            k0s.append(k)
            feats.append(medium_feature(medium, r_c))
            tus.append(to_real(zu))
            tvs.append(to_real(zv))
            masks.append(valid.astype(np.uint8))
    n_feat = 2 * (2 * r_c + 1) ** d
    return Dataset(
        d,
        r_c,
        r_w,
        float(t_final),
        np.array(k0s, dtype=np.int64).reshape(-1, d),
        np.array(feats).reshape(-1, n_feat),
        np.array(tus).reshape(-1, 2 * n_win),
        np.array(tvs).reshape(-1, 2 * n_win),
        np.array(masks, dtype=np.uint8).reshape(-1, n_win),
        failures,
    )


def _record_dtype(d: int, r_c: int, r_w: int) -> np.dtype:
    n_feat = 2 * (2 * r_c + 1) ** d
    n_win = (2 * r_w + 1) ** d
    return np.dtype(
        [
            ("k0", "<i4", (d,)),
            ("feat", "<f8", (n_feat,)),
            ("tu", "<f8", (2 * n_win,)),
            ("tv", "<f8", (2 * n_win,)),
            ("mask", "u1", (n_win,)),
        ]
    )


_HEADER = struct.Struct("<4sIIIIdQ")


def write_dataset(path, ds: Dataset) -> None:
    rec = np.zeros(len(ds), dtype=_record_dtype(ds.dim, ds.r_c, ds.r_w))
    rec["k0"] = ds.k0
    rec["feat"] = ds.medium_feat
    rec["tu"] = ds.target_u
    rec["tv"] = ds.target_v
    rec["mask"] = ds.mask
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.dim, ds.r_c, ds.r_w, ds.t_final, len(ds)))
        fh.write(rec.tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, r_c, r_w, t_final, n = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    dt = _record_dtype(d, r_c, r_w)
    if len(raw) - _HEADER.size != n * dt.itemsize:
        raise ValueError(f"{path}: truncated or oversized payload")
    rec = np.frombuffer(raw, dtype=dt, count=n, offset=_HEADER.size)
    return Dataset(
        d,
        r_c,
        r_w,
        t_final,
        rec["k0"].astype(np.int64),
        rec["feat"].copy(),
        rec["tu"].copy(),
        rec["tv"].copy(),
        rec["mask"].copy(),
    )
