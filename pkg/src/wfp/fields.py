"""Periodic grids, sampled fields, and their Fourier spectra.

Coefficients use the amplitude convention: a unit complex plane wave
``exp(2j*pi*k.x/L)`` has coefficient exactly 1 at ``k``.  Internally the
coefficients live in numpy FFT order; the public accessors take signed
integer frequency vectors.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIELD_MAGIC = b"WFP1"
DTYPE_REAL = 0
DTYPE_COMPLEX = 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[0, length)^dim``."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"need at least 4 points per axis, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"domain length must be positive, got {self.length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def frequencies(self) -> tuple[np.ndarray, ...]:
        """Signed integer frequency of every FFT-order slot, one array per axis."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(np.int64)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(2 * np.pi * k / self.length for k in self.frequencies())

    def in_range(self, k) -> bool:
        """True when ``k`` is representable and not the ambiguous Nyquist mode."""
        k = np.atleast_1d(np.asarray(k))
        return bool(np.all(2 * np.abs(k) < self.n))

    def slot(self, k) -> tuple[int, ...]:
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if k.shape != (self.dim,):
            raise ValueError(f"frequency {k} does not match grid dim {self.dim}")
        return tuple(int(c) % self.n for c in k)


def as_freq(k, dim: int) -> tuple[int, ...]:
    """Normalize an int or sequence to a ``dim``-tuple of ints."""
    arr = np.atleast_1d(np.asarray(k)).astype(np.int64)
    if arr.shape != (dim,):
        raise ValueError(f"frequency {k!r} is not a {dim}-vector")
    return tuple(int(c) for c in arr)


@dataclass(frozen=True, eq=False)
class SpatialField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Fourier coefficients of a field on ``grid``, stored in FFT order."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(f"coeff shape {self.coeffs.shape} != grid shape {self.grid.shape}")

    def __getitem__(self, k) -> complex:
        return complex(self.coeffs[self.grid.slot(k)])

    @classmethod
    def zeros(cls, grid: Grid) -> "Spectrum":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_modes(cls, grid: Grid, modes: dict) -> "Spectrum":
        coeffs = np.zeros(grid.shape, dtype=complex)
        for k, a in modes.items():
            coeffs[grid.slot(k)] += a
        return cls(grid, coeffs)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    def centered(self) -> np.ndarray:
        """Coefficients shifted so the zero frequency sits in the middle."""
        return np.fft.fftshift(self.coeffs)


def forward_transform(field: SpatialField) -> Spectrum:
    """Amplitude-normalized DFT: ``field(x_j) = sum_k c_k exp(2j*pi*k.x_j/L)``."""
    g = field.grid
    axes = tuple(range(g.dim))
    coeffs = np.fft.fftn(field.values, axes=axes) / g.n**g.dim
    return Spectrum(g, coeffs)


def inverse_transform(spec: Spectrum, real: bool | None = None) -> SpatialField:
    """Synthesize grid values from coefficients.

    ``real=None`` drops the imaginary part only when it is at rounding
    level, ``True`` always drops it, ``False`` never does.
    """
    g = spec.grid
    axes = tuple(range(g.dim))
    values = np.fft.ifftn(spec.coeffs, axes=axes) * g.n**g.dim
    if real is None:
        scale = max(np.max(np.abs(values)), 1e-300)
        real = np.max(np.abs(values.imag)) <= 1e-13 * scale
    if real:
        values = values.real.copy()
    return SpatialField(g, values)


def gradient_norm_sq(spec: Spectrum) -> float:
    """Mean of ``|grad u|^2`` over the domain, from the spectrum (Parseval)."""
    kk = sum(w**2 for w in spec.grid.wavenumbers())
    return float(np.sum(kk * np.abs(spec.coeffs) ** 2))


def plane_wave(grid: Grid, k, amplitude: complex = 1.0) -> SpatialField:
    k = as_freq(k, grid.dim)
    phase = sum(2 * np.pi * kc * x / grid.length for kc, x in zip(k, grid.coords()))
    return SpatialField(grid, amplitude * np.exp(1j * phase))


# ---------------------------------------------------------------------------
# binary container

def _header(grid: Grid, dtype_tag: int) -> bytes:
    d = grid.dim
    return FIELD_MAGIC + struct.pack(
        f"<I{d}I{d}dB", d, *([grid.n] * d), *([grid.length] * d), dtype_tag
    )


def write_array(path, grid: Grid, values: np.ndarray) -> None:
    values = np.asarray(values)
    tag = DTYPE_COMPLEX if np.iscomplexobj(values) else DTYPE_REAL
    payload = np.ascontiguousarray(values, dtype="<c16" if tag else "<f8")
    with open(path, "wb") as fh:
        fh.write(_header(grid, tag))
        fh.write(payload.tobytes(order="C"))


def read_array(path) -> tuple[Grid, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a field file (bad magic {data[:4]!r})")
    (dim,) = struct.unpack_from("<I", data, 4)
    if dim not in (1, 2):
        raise ValueError(f"{path}: unsupported dim {dim}")
    off = 8
    ns = struct.unpack_from(f"<{dim}I", data, off)
    off += 4 * dim
    ls = struct.unpack_from(f"<{dim}d", data, off)
    off += 8 * dim
    (tag,) = struct.unpack_from("<B", data, off)
    off += 1
    if len(set(ns)) != 1 or len(set(ls)) != 1:
        raise ValueError(f"{path}: anisotropic grids are not supported")
    grid = Grid(dim, ns[0], ls[0])
    dtype = {DTYPE_REAL: "<f8", DTYPE_COMPLEX: "<c16"}.get(tag)
    if dtype is None:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    values = np.frombuffer(data, dtype=dtype, offset=off)
    if values.size != grid.n**dim:
        raise ValueError(f"{path}: payload has {values.size} values, expected {grid.n**dim}")
    return grid, values.reshape(grid.shape).astype(complex if tag else float)


def write_field(path, field: SpatialField) -> None:
    write_array(path, field.grid, field.values)


def read_field(path) -> SpatialField:
    grid, values = read_array(path)
    return SpatialField(grid, values)


def write_spectrum(path, spec: Spectrum) -> None:
    write_array(path, spec.grid, spec.coeffs.astype(complex))


def read_spectrum(path) -> Spectrum:
    grid, values = read_array(path)
    return Spectrum(grid, values.astype(complex))


def resample_spectrum(spec: Spectrum, n_new: int) -> Spectrum:
    """Carry coefficients to an ``n_new`` grid of the same length.

    Modes representable on both grids (Nyquist excluded) are copied; the
    rest are dropped on coarsening or zero on refinement.
    """
    src = spec.grid
    dst = Grid(src.dim, n_new, src.length)
    out = np.zeros(dst.shape, dtype=complex)
    kmax = (min(src.n, n_new) - 1) // 2
    k = np.arange(-kmax, kmax + 1)
    idx_src = np.ix_(*([k % src.n] * src.dim))
    idx_dst = np.ix_(*([k % n_new] * src.dim))
    out[idx_dst] = spec.coeffs[idx_src]
    return Spectrum(dst, out)
