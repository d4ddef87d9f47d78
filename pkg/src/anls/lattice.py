"""Periodic-box lattice, fields, spectral transforms and norms.

The computational domain is the periodic box [-L/2, L/2)^d sampled on a
regular grid of n points per axis (n a power of two).  All operators are
Fourier multipliers built on the frequency lattice k in (2*pi/L)*Z^d, and
all spatial norms use the rectangle rule with the cell volume h^d, which
makes Parseval exact for the normalization used here.

The box truncation of full space is a declared modeling choice: weights
<x> are measured from the box center and are bounded by <L/2> instead of
growing without bound.  See README for the resulting caveats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

# Hard cap on n**d; grids above this are rejected at construction.
DEFAULT_MAX_POINTS = 1 << 26

_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    """Set the worker count used by the pocketfft backend."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(workers))


def _fftn(a):
    return _fft.fftn(a, workers=_FFT_WORKERS)


def _ifftn(a):
    return _fft.ifftn(a, workers=_FFT_WORKERS)


class LatticeError(ValueError):
    """Invalid grid parameters or mismatched grids."""


@dataclass(frozen=True)
class Grid:
    """Periodic lattice of dimension d with n points per axis."""

    d: int
    n: int
    box_length: float

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def npoints(self) -> int:
        return self.n ** self.d

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d


# Heavy per-grid arrays (coordinates, |k|^2, ...) are built once and shared.
_GRID_CACHE: dict = {}


def make_grid(d: int, n: int, box_length: float,
              max_points: int = DEFAULT_MAX_POINTS) -> Grid:
    """Build a periodic grid; rejects invalid dimensions and sizes."""
    if d not in (1, 2, 3):
        raise LatticeError(f"dimension must be 1, 2 or 3, got {d}")
    if n < 8 or (n & (n - 1)) != 0:
        raise LatticeError(f"n must be a power of two >= 8, got {n}")
    if not box_length > 0:
        raise LatticeError(f"box_length must be positive, got {box_length}")
    if n ** d > max_points:
        raise LatticeError(f"grid with {n ** d} points exceeds budget {max_points}")
    return Grid(d=d, n=n, box_length=float(box_length))


def _grid_arrays(grid: Grid) -> dict:
    key = (grid.d, grid.n, grid.box_length)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached
    n, h, L, d = grid.n, grid.spacing, grid.box_length, grid.d
    x_axis = -L / 2.0 + h * np.arange(n)
    k_axis = 2.0 * np.pi * _fft.fftfreq(n, d=h)
    xs = np.meshgrid(*([x_axis] * d), indexing="ij")
    ks = np.meshgrid(*([k_axis] * d), indexing="ij")
    r2 = sum(x * x for x in xs)
    k2 = sum(k * k for k in ks)
    arrays = {
        "x_axis": x_axis,
        "k_axis": k_axis,
        "coords": xs,
        "kvecs": ks,
        "radius2": r2,
        "k2": k2,
        # dyadic band index is taken in units of the fundamental frequency
        "mode_radius": np.sqrt(k2) * (L / (2.0 * np.pi)),
    }
    _GRID_CACHE[key] = arrays
    return arrays


def coords(grid: Grid) -> list:
    """Coordinate arrays (one per axis), box centered at the origin."""
    return _grid_arrays(grid)["coords"]


def kvecs(grid: Grid) -> list:
    """Frequency component arrays, fftfreq layout."""
    return _grid_arrays(grid)["kvecs"]


def k_squared(grid: Grid) -> np.ndarray:
    return _grid_arrays(grid)["k2"]


def radius_squared(grid: Grid) -> np.ndarray:
    return _grid_arrays(grid)["radius2"]


def mode_radius(grid: Grid) -> np.ndarray:
    """|k| in units of 2*pi/L; integer-valued on axis points."""
    return _grid_arrays(grid)["mode_radius"]


@dataclass
class Field:
    """Complex lattice function with an optional cached spectrum.

    The `real` flag marks fields that are real up to roundoff (noise and
    enhancement objects); solutions of the evolution are genuinely complex.
    Values are treated as immutable after construction.
    """

    grid: Grid
    values: np.ndarray
    real: bool = False
    spectral_cache: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise LatticeError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if self.values.dtype != np.complex128:
            self.values = self.values.astype(np.complex128)

    def copy_with(self, values: np.ndarray, real: bool | None = None) -> "Field":
        return Field(self.grid, values, self.real if real is None else real)


def field_from_values(grid: Grid, values: np.ndarray, real: bool = False) -> Field:
    return Field(grid, np.asarray(values, dtype=np.complex128), real=real)


def zero_field(grid: Grid, real: bool = True) -> Field:
    return Field(grid, np.zeros(grid.shape, dtype=np.complex128), real=real)


# ---------------------------------------------------------------------------
# Fourier pair.  Coefficients are normalized so that the lattice function
# f(x) = L^{-d/2} sum_k c_k exp(i k.x) has sum_k |c_k|^2 equal to the
# rectangle-rule L^2 norm squared (exact Parseval).

def spectrum_of(grid: Grid, values: np.ndarray) -> np.ndarray:
    scale = grid.cell_volume / grid.box_length ** (grid.d / 2.0)
    return _fftn(values) * scale


def values_of(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    scale = grid.box_length ** (grid.d / 2.0) / grid.cell_volume
    return _ifftn(coeffs) * scale


def to_spectrum(f: Field) -> np.ndarray:
    """Forward transform; the coefficient array is cached on the field."""
    if f.spectral_cache is None:
        f.spectral_cache = spectrum_of(f.grid, f.values)
    return f.spectral_cache


def from_spectrum(grid: Grid, coeffs: np.ndarray, real: bool = False) -> Field:
    """Inverse transform of a coefficient array on the given grid."""
    if coeffs.shape != grid.shape:
        raise LatticeError(
            f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
    out = Field(grid, values_of(grid, coeffs), real=real)
    out.spectral_cache = np.asarray(coeffs, dtype=np.complex128)
    return out


# ---------------------------------------------------------------------------
# Fourier multipliers.

@dataclass
class SpectralMultiplier:
    """Pointwise factor on the frequency lattice of one grid."""

    grid: Grid
    symbol: np.ndarray
    label: str = ""
    real_even: bool = False       # real even symbols map real fields to real fields

    def __post_init__(self):
        if self.symbol.shape != self.grid.shape:
            raise LatticeError("symbol shape does not match grid")
        if not np.all(np.isfinite(self.symbol)):
            raise LatticeError(f"multiplier '{self.label}' has non-finite symbol values")


def multiplier(grid: Grid, symbol: np.ndarray, label: str = "") -> SpectralMultiplier:
    symbol = np.asarray(symbol)
    # even on the fftfreq lattice: flipping every axis (index -k mod n) fixes it
    flipped = symbol
    for ax in range(grid.d):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    real_even = bool(np.isrealobj(symbol)) and np.allclose(flipped, symbol, atol=0.0, rtol=1e-13)
    return SpectralMultiplier(grid, symbol.astype(np.complex128), label, real_even)


def apply_multiplier(m: SpectralMultiplier, f: Field) -> Field:
    if m.grid != f.grid:
        raise LatticeError("multiplier grid does not match field grid")
    coeffs = to_spectrum(f) * m.symbol
    return from_spectrum(f.grid, coeffs, real=f.real and m.real_even)


def inverse_helmholtz(grid: Grid) -> SpectralMultiplier:
    """Symbol 1/(1+|k|^2), the resolvent smoothing used throughout."""
    return multiplier(grid, 1.0 / (1.0 + k_squared(grid)), "(1-lap)^-1")


def laplacian(grid: Grid) -> SpectralMultiplier:
    return multiplier(grid, -k_squared(grid), "lap")


def mollifier_symbol(grid: Grid, epsilon: float) -> SpectralMultiplier:
    return multiplier(grid, np.exp(-0.5 * epsilon ** 2 * k_squared(grid)),
                      f"mollify(eps={epsilon})")


def free_phase(grid: Grid, t: float) -> SpectralMultiplier:
    """exp(-i |k|^2 t): exact propagator of i dv/dt = -lap v."""
    sym = np.exp(-1j * k_squared(grid) * t)
    return SpectralMultiplier(grid, sym, f"free_phase(t={t})", real_even=False)


def grad_axes(grid: Grid) -> list:
    """Gradient component symbols ik with the Nyquist row zeroed.

    An odd symbol has no partner mode at the Nyquist frequency, so keeping
    it there would break Hermitian symmetry and real fields would pick up
    imaginary parts; zeroing it is the standard real-to-real convention.
    """
    arrays = _grid_arrays(grid)
    if "grad_axes" not in arrays:
        axes = []
        nyq = -np.pi / grid.spacing
        for k in arrays["kvecs"]:
            kz = k.copy()
            kz[np.isclose(k, nyq)] = 0.0
            axes.append(1j * kz)
        arrays["grad_axes"] = axes
    return arrays["grad_axes"]


def grad_symbol_sq(grid: Grid) -> np.ndarray:
    """sum_j |ik_j|^2 for the discrete gradient symbol above."""
    arrays = _grid_arrays(grid)
    if "grad_sq" not in arrays:
        arrays["grad_sq"] = sum(np.abs(a) ** 2 for a in grad_axes(grid))
    return arrays["grad_sq"]


def gradient_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Spectral gradient, stacked as (d, *shape)."""
    spec = _fftn(values)
    out = np.empty((grid.d,) + grid.shape, dtype=np.complex128)
    for i, gs in enumerate(grad_axes(grid)):
        out[i] = _ifftn(gs * spec)
    return out


def divergence_values(grid: Grid, vec: np.ndarray) -> np.ndarray:
    """Spectral divergence of a (d, *shape) stack."""
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for i, gs in enumerate(grad_axes(grid)):
        acc += gs * _fftn(vec[i])
    return _ifftn(acc)


def gradient(f: Field) -> list:
    g = gradient_values(f.grid, f.values)
    return [Field(f.grid, g[i]) for i in range(f.grid.d)]


# ---------------------------------------------------------------------------
# Weights and norms.

@dataclass
class Weight:
    """<x>^mu with x measured from the box center."""

    grid: Grid
    exponent: float
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise LatticeError("weight must be strictly positive")


def make_weight(grid: Grid, mu: float) -> Weight:
    vals = (1.0 + radius_squared(grid)) ** (mu / 2.0)
    return Weight(grid, mu, vals)


def inner_product(f: Field, g: Field) -> complex:
    """h^d sum f conj(g)."""
    if f.grid != g.grid:
        raise LatticeError("mismatched grids in inner product")
    return complex(f.grid.cell_volume * np.vdot(g.values, f.values))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.cell_volume * np.sum(np.abs(f.values) ** 2)))


def weighted_l2_norm(f: Field, w: Weight) -> float:
    """(h^d sum <x>^mu |f|^2)^(1/2); the weight enters at first power."""
    if w.grid != f.grid:
        raise LatticeError("weight grid does not match field grid")
    return float(np.sqrt(f.grid.cell_volume * np.sum(w.values * np.abs(f.values) ** 2)))


def sobolev_norm(f: Field, s: float) -> float:
    """Spectral norm with symbol <k>^s = (1+|k|^2)^(s/2)."""
    coeffs = to_spectrum(f)
    wgt = (1.0 + k_squared(f.grid)) ** s
    return float(np.sqrt(np.sum(wgt * np.abs(coeffs) ** 2)))


def lp_norm(f: Field, p: float, weight: Weight | None = None) -> float:
    """Rectangle-rule L^p norm with the <x>^mu weight inside the integral.

    For p = inf the weight multiplies |f| directly (the Holder-space
    convention); for finite p it enters at first power under the sum.
    """
    a = np.abs(f.values)
    if np.isinf(p):
        if weight is not None:
            a = a * weight.values
        return float(a.max())
    a = a ** p
    if weight is not None:
        a = a * weight.values
    return float((f.grid.cell_volume * np.sum(a)) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Field snapshot file: 32-byte header (magic "ANLS", version, d, n,
# box_length, real flag, zero padding), then n^d little-endian (re, im)
# float64 pairs in row-major order.

_SNAPSHOT_MAGIC = b"ANLS"
_SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdB7x")

assert _HEADER.size == 32


def save_field(f: Field, path) -> None:
    header = _HEADER.pack(_SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, f.grid.d,
                          f.grid.n, f.grid.box_length, 1 if f.real else 0)
    pairs = np.empty(f.grid.shape + (2,), dtype="<f8")
    pairs[..., 0] = f.values.real
    pairs[..., 1] = f.values.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pairs.tobytes(order="C"))


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, d, n, box_length, real_flag = _HEADER.unpack(raw)
        if magic != _SNAPSHOT_MAGIC:
            raise LatticeError(f"{path}: not a field snapshot (bad magic {magic!r})")
        if version != _SNAPSHOT_VERSION:
            raise LatticeError(f"{path}: unsupported snapshot version {version}")
        grid = make_grid(d, n, box_length)
        pairs = np.frombuffer(fh.read(grid.npoints * 16), dtype="<f8")
    pairs = pairs.reshape(grid.shape + (2,))
    values = pairs[..., 0] + 1j * pairs[..., 1]
    return Field(grid, values.astype(np.complex128), real=bool(real_flag))
