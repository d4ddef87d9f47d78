"""Dyadic frequency analysis: block decomposition, Besov norms, the
smooth low/high localization split, and the paraproduct calculus.

All dyadic bands are taken in units of the box fundamental frequency
2*pi/L, so band j collects mode radii in [2^(j-1), 2^(j+1)] and the top
band folds everything up to Nyquist.  The band filters form an exact
partition of unity (telescoping smoothstep), which makes every
decomposition identity here hold to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    Field,
    Grid,
    LatticeError,
    Weight,
    _fftn,
    _ifftn,
    gradient_values,
    lp_norm,
    make_weight,
    mode_radius,
    radius_squared,
    to_spectrum,
    from_spectrum,
)


def smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """C^2 cutoff: 1 on [0,1], 0 on [2,inf), quintic smoothstep between."""
    r = np.asarray(r, dtype=np.float64)
    s = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def jmax_for(grid: Grid) -> int:
    """Highest dyadic band index; frequencies above fold into the top band."""
    return int(math.log2(grid.n // 2)) - 1


_FILTER_CACHE: dict = {}


def band_filters(grid: Grid) -> np.ndarray:
    """Partition of unity in frequency, stacked as (jmax+1, *shape)."""
    key = (grid.d, grid.n, grid.box_length)
    cached = _FILTER_CACHE.get(key)
    if cached is not None:
        return cached
    r = mode_radius(grid)
    jm = jmax_for(grid)
    psi = [smooth_cutoff(r / 2.0 ** j) for j in range(jm)]
    filters = np.empty((jm + 1,) + grid.shape)
    filters[0] = psi[0]
    for j in range(1, jm):
        filters[j] = psi[j] - psi[j - 1]
    filters[jm] = 1.0 - psi[jm - 1]
    _FILTER_CACHE[key] = filters
    return filters


@dataclass
class LPDecomposition:
    blocks: list          # Fields, one per band
    jmax: int


def block_values(f: Field) -> np.ndarray:
    """Raw band arrays (jmax+1, *shape); one forward and jmax+1 inverse FFTs."""
    spec = to_spectrum(f)
    filters = band_filters(f.grid)
    scale = f.grid.box_length ** (f.grid.d / 2.0) / f.grid.cell_volume
    out = np.empty(filters.shape, dtype=np.complex128)
    for j in range(filters.shape[0]):
        out[j] = _ifftn(filters[j] * spec) * scale
    return out


def lp_decompose(f: Field) -> LPDecomposition:
    vals = block_values(f)
    blocks = [Field(f.grid, vals[j], real=f.real) for j in range(vals.shape[0])]
    return LPDecomposition(blocks=blocks, jmax=vals.shape[0] - 1)


def band_project(f: Field, level: float) -> Field:
    """Delta_{<=level} f: sum of bands with index <= level (exact complement split)."""
    spec = to_spectrum(f)
    filters = band_filters(f.grid)
    top = min(int(math.floor(level)), filters.shape[0] - 1)
    if top < 0:
        sym = np.zeros(f.grid.shape)
    else:
        sym = filters[: top + 1].sum(axis=0)
    return from_spectrum(f.grid, sym * spec, real=f.real)


# ---------------------------------------------------------------------------
# Besov norms.

@dataclass
class BesovParams:
    alpha: float
    p: float = 2.0
    q: float = 2.0
    mu: float = 0.0

    def __post_init__(self):
        for idx in (self.p, self.q):
            if not (idx >= 1.0 or np.isinf(idx)):
                raise ValueError(f"integrability index must be >= 1 or inf, got {idx}")


def block_norms(f: Field, p: float, mu: float = 0.0) -> np.ndarray:
    """L^p_mu norm of every band of f."""
    vals = block_values(f)
    w = make_weight(f.grid, mu) if mu != 0.0 else None
    out = np.empty(vals.shape[0])
    for j in range(vals.shape[0]):
        out[j] = lp_norm(Field(f.grid, vals[j]), p, weight=w)
    return out


def besov_norm(f: Field, params: BesovParams) -> float:
    """(sum_j 2^(alpha j q) ||Delta_j f||_{L^p_mu}^q)^(1/q); inf indices are maxima."""
    norms = block_norms(f, params.p, params.mu)
    js = np.arange(norms.size)
    weighted = 2.0 ** (params.alpha * js) * norms
    if np.isinf(params.q):
        return float(weighted.max())
    return float((np.sum(weighted ** params.q)) ** (1.0 / params.q))


def holder_norm(f: Field, alpha: float, mu: float = 0.0) -> float:
    return besov_norm(f, BesovParams(alpha, np.inf, np.inf, mu))


def regularity_estimate(f: Field, p: float = np.inf, q: float = np.inf,
                        fit_range: tuple | None = None) -> tuple:
    """Fit ||Delta_j f|| ~ c 2^(-a j) over the given band range.

    Returns (a_hat, stderr) from the least-squares slope of
    log2||Delta_j f||_{L^p} against j.  `q` is accepted for symmetry with
    BesovParams and does not enter the fit.  Invariant under scaling of f.
    """
    jm = jmax_for(f.grid)
    if fit_range is None:
        fit_range = (1, jm)
    lo, hi = fit_range
    if lo < 1 or hi > jm or hi - lo + 1 < 4:
        raise ValueError(f"fit range {fit_range} needs >= 4 bands inside [1, {jm}]")
    norms = block_norms(f, p)[lo:hi + 1]
    if np.any(norms <= 0):
        raise ValueError("vanishing band norm inside fit range")
    js = np.arange(lo, hi + 1, dtype=float)
    y = np.log2(norms)
    # slope and its standard error from the residual variance
    A = np.vstack([js, np.ones_like(js)]).T
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope = coef[0]
    dof = len(js) - 2
    if dof > 0 and res.size:
        var = res[0] / dof / np.sum((js - js.mean()) ** 2)
        stderr = float(np.sqrt(var))
    else:
        stderr = 0.0
    return float(-slope), stderr


# ---------------------------------------------------------------------------
# Smooth spatial localization: f = U_le f + U_gt f, with the frequency
# cutoff rising linearly from shell to shell so the high part keeps the
# local roughness but decays away from the box center.

@dataclass
class LocalizationConfig:
    annuli: list          # spatial partition weights, one array per shell
    levels: list          # band cutoff L_k per shell, nondecreasing

    def __post_init__(self):
        if len(self.annuli) != len(self.levels):
            raise ValueError("one cutoff level per shell is required")
        if any(b < a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("cutoff levels must be nondecreasing")


def default_localization(grid: Grid, base_level: float = 2.0,
                         rate: float = 0.0) -> LocalizationConfig:
    """Dyadic shells around the box center; L_k = base_level + rate*k.

    The box default is a uniform cutoff (rate 0): with shells capped at the
    box radius, any rising level sequence folds full-roughness noise into
    the low part near the corners, destroying the regularity gain the split
    exists for.  Rising sequences (rate > 0) remain available and are what
    the shell-decay diagnostics exercise.
    """
    rho = np.sqrt(radius_squared(grid))
    nshells = max(1, int(math.ceil(math.log2(grid.box_length))))
    psi = [smooth_cutoff(rho / 2.0 ** k) for k in range(nshells)]
    annuli = [psi[0]]
    for k in range(1, nshells):
        annuli.append(psi[k] - psi[k - 1])
    annuli.append(1.0 - psi[nshells - 1])
    levels = [base_level + rate * k for k in range(nshells + 1)]
    return LocalizationConfig(annuli=annuli, levels=levels)


def localize_split(f: Field, cfg: LocalizationConfig) -> tuple:
    """(U_le f, U_gt f) with U_gt = Id - U_le, exact by construction."""
    if cfg.annuli[0].shape != f.grid.shape:
        raise LatticeError("localization config built for a different grid")
    low = np.zeros(f.grid.shape, dtype=np.complex128)
    for w, lvl in zip(cfg.annuli, cfg.levels):
        low += w * band_project(f, lvl).values
    low_f = Field(f.grid, low, real=f.real)
    high_f = Field(f.grid, f.values - low, real=f.real)
    return low_f, high_f


# ---------------------------------------------------------------------------
# Paraproduct calculus.  With S_m = sum_{n<=m} Delta_n:
#   P_u v   = sum_m S_{m-2} u * Delta_m v        (low frequencies of u)
#   Pi(u,v) = sum_{|n-m|<=1} Delta_n u * Delta_m v
# and u*v = P_u v + Pi(u, v) + P_v u exactly.

def _para_from_blocks(ub: np.ndarray, vb: np.ndarray) -> np.ndarray:
    nb = ub.shape[0]
    acc = np.zeros(ub.shape[1:], dtype=np.complex128)
    partial = np.zeros_like(acc)
    for m in range(2, nb):
        partial += ub[m - 2]
        acc += partial * vb[m]
    return acc


def _resonant_from_blocks(ub: np.ndarray, vb: np.ndarray) -> np.ndarray:
    nb = ub.shape[0]
    acc = np.zeros(ub.shape[1:], dtype=np.complex128)
    for m in range(nb):
        near = vb[max(0, m - 1): min(nb, m + 2)].sum(axis=0)
        acc += ub[m] * near
    return acc


def paraproduct(u: Field, v: Field) -> Field:
    if u.grid != v.grid:
        raise LatticeError("mismatched grids in paraproduct")
    return Field(u.grid, _para_from_blocks(block_values(u), block_values(v)))


def resonant(u: Field, v: Field) -> Field:
    if u.grid != v.grid:
        raise LatticeError("mismatched grids in resonant product")
    return Field(u.grid, _resonant_from_blocks(block_values(u), block_values(v)))


def corrector(u: Field, v: Field, w: Field) -> Field:
    """C(u,v,w) = Pi(P_u v, w) - u Pi(v,w)."""
    pv = paraproduct(u, v)
    first = resonant(pv, w)
    second = u.values * resonant(v, w).values
    return Field(u.grid, first.values - second)

