"""White-noise sampling, mollification, renormalization constants, and the
enhanced-noise tuple that feeds the exponential transform.

Construction chain (one realization xi, one mollification scale eps):

    X1 = -(1-lap)^{-1} xi_eps
    X2 =  (1-lap)^{-1} (|grad X1|^2 - c1)            d = 3
    X3 = 2(1-lap)^{-1} (grad X1 . grad X2)           d = 3
    X  = U_gt(X1 + X2 + X3)                          high/localized part
    Y  = xi_eps - lap X - (|grad X|^2 - c_tot)

with c1 = E|grad X1|^2 (exact lattice sum), c2 = E|grad X2|^2 (ensemble
estimate, d = 3) and c_tot = c1 (+ c2).  The minus sign on X1 is what makes
xi - lap X1 = (1-lap)^{-1} xi smooth; with the opposite sign nothing
cancels and Y would keep the full roughness of xi.  The subtraction of
c_tot centers the squared gradient (Wick correction), which is exactly
what makes Y stable under eps -> 0 on coupled realizations.

Everything here is a pure function of (seed, grid, eps, localization
config); ensembles use splittable child seeds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .lattice import (
    Field,
    Grid,
    apply_multiplier,
    field_from_values,
    grad_symbol_sq,
    gradient_values,
    inverse_helmholtz,
    k_squared,
    laplacian,
    load_field,
    make_grid,
    mollifier_symbol,
    save_field,
)
from .lpcalc import LocalizationConfig, default_localization, localize_split

# kappa/mu defaults: the arbitrarily-small exponents of the analysis have
# to be fixed numbers here; these are used by fit ranges and norm choices.
DEFAULT_KAPPA = 0.05
DEFAULT_MU = 0.25


@dataclass
class NoiseRealization:
    seed: int
    grid: Grid
    xi: Field


@dataclass
class Mollifier:
    """Gaussian frequency cutoff exp(-eps^2 |k|^2 / 2); eps = 0 is the identity."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"mollifier scale must be >= 0, got {self.epsilon}")

    def symbol(self, grid: Grid):
        return mollifier_symbol(grid, self.epsilon)


def child_seed(seed: int, *path: int) -> np.random.Generator:
    """Deterministic child generator for ensemble member `path`."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))


def sample_white_noise(grid: Grid, seed: int) -> NoiseRealization:
    """Real i.i.d. Gaussian cells with variance h^{-d}.

    The cell variance makes <xi, phi> approximate a Gaussian with variance
    ||phi||_{L^2}^2, i.e. each continuum Fourier mode carries unit variance.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = grid.spacing ** (-grid.d / 2.0)
    vals = rng.standard_normal(grid.shape) * scale
    return NoiseRealization(seed=seed, grid=grid, xi=field_from_values(grid, vals, real=True))


def mollify(xi: Field, m: Mollifier) -> Field:
    if m.epsilon == 0.0:
        return xi
    return apply_multiplier(m.symbol(xi.grid), xi)


# ---------------------------------------------------------------------------
# Renormalization constants.

def renorm_constant_1(grid: Grid, m: Mollifier) -> float:
    """c1 = E|grad X1_eps|^2 as an exact lattice sum.

    Per continuum mode the noise has unit variance, so
    c1 = L^{-d} sum_k |k|^2 exp(-eps^2 |k|^2) / (1+|k|^2)^2.
    Diverges with the grid at eps = 0 for d >= 2, hence rejected there.
    """
    if m.epsilon == 0.0 and grid.d >= 2:
        raise ValueError("eps = 0 gives a grid-divergent constant for d >= 2")
    k2 = k_squared(grid)
    summand = grad_symbol_sq(grid) * np.exp(-m.epsilon ** 2 * k2) / (1.0 + k2) ** 2
    return float(summand.sum() / grid.box_length ** grid.d)


_C2_CACHE: dict = {}
_C2_BASE_SEED = 0x5EED0C2


def renorm_constant_2(grid: Grid, m: Mollifier, ensemble: int = 256) -> tuple:
    """c2 = E|grad X2_eps|^2 estimated over a fixed seed ensemble (d = 3).

    Returns (estimate, standard error).  The estimator averages the spatial
    mean of |grad X2|^2 over `ensemble` realizations drawn from a seed
    sequence that depends only on (grid, eps), so the value is a pure
    function of those inputs.
    """
    if grid.d != 3:
        raise ValueError("the second constant only exists in d = 3")
    key = (grid.n, grid.box_length, m.epsilon, ensemble)
    if key in _C2_CACHE:
        return _C2_CACHE[key]
    c1 = renorm_constant_1(grid, m)
    inv = inverse_helmholtz(grid)
    samples = np.empty(ensemble)
    for i in range(ensemble):
        rng = child_seed(_C2_BASE_SEED, i)
        vals = rng.standard_normal(grid.shape) * grid.spacing ** (-1.5)
        xi_eps = mollify(field_from_values(grid, vals, real=True), m)
        x1 = apply_multiplier(inv, xi_eps)        # sign of X1 is irrelevant here
        g1 = gradient_values(grid, x1.values)
        wick1 = (np.abs(g1) ** 2).sum(axis=0) - c1
        x2 = apply_multiplier(inv, field_from_values(grid, wick1, real=True))
        g2 = gradient_values(grid, x2.values)
        samples[i] = float(np.mean((np.abs(g2) ** 2).sum(axis=0)))
    est = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(ensemble))
    _C2_CACHE[key] = (est, stderr)
    return est, stderr


# ---------------------------------------------------------------------------
# Enhancement.

@dataclass
class Enhancement:
    """All stochastic objects needed by the transformed equation."""

    epsilon: float
    seed: int
    grid: Grid
    cfg: LocalizationConfig
    xi_eps: Field
    X1: Field
    X2: Field | None
    X3: Field | None
    X_low: Field
    X_high: Field
    Y_eps: Field
    c1: float
    c2: float
    wick_grad1_sq: Field              # |grad X1|^2 - c1
    wick_cross: Field | None          # grad X1 . grad X2        (d = 3)
    wick_grad2_sq: Field | None       # |grad X2|^2 - c2         (d = 3)
    undersampled_mollifier: bool = False

    @property
    def X(self) -> Field:
        return self.X_high

    @property
    def c_total(self) -> float:
        return self.c1 + (self.c2 if self.grid.d == 3 else 0.0)


def build_enhancement(noise: NoiseRealization, m: Mollifier,
                      cfg: LocalizationConfig | None = None,
                      c2_ensemble: int = 256) -> Enhancement:
    """Construct the full enhanced-noise tuple for one (seed, eps)."""
    grid = noise.grid
    if m.epsilon == 0.0 and grid.d >= 2:
        raise ValueError("eps > 0 is required for d >= 2")
    if cfg is None:
        cfg = default_localization(grid)
    undersampled = 0.0 < m.epsilon < grid.spacing / 2.0

    xi_eps = mollify(noise.xi, m)
    inv = inverse_helmholtz(grid)
    x1 = apply_multiplier(inv, xi_eps)
    x1 = Field(grid, -x1.values, real=True)

    c1 = renorm_constant_1(grid, m)
    g1 = gradient_values(grid, x1.values)
    wick1_vals = (np.abs(g1) ** 2).sum(axis=0) - c1
    wick1 = field_from_values(grid, wick1_vals, real=True)

    x2 = x3 = wick_cross = wick2 = None
    c2 = 0.0
    total_vals = x1.values
    if grid.d == 3:
        x2 = apply_multiplier(inv, wick1)
        g2 = gradient_values(grid, x2.values)
        cross_vals = (g1 * g2).sum(axis=0)
        wick_cross = field_from_values(grid, cross_vals, real=True)
        x3 = apply_multiplier(inv, wick_cross)
        x3 = Field(grid, 2.0 * x3.values, real=True)
        c2, _ = renorm_constant_2(grid, m, ensemble=c2_ensemble)
        wick2 = field_from_values(grid, (np.abs(g2) ** 2).sum(axis=0) - c2, real=True)
        total_vals = x1.values + x2.values + x3.values

    total = field_from_values(grid, total_vals, real=True)
    x_low, x_high = localize_split(total, cfg)

    c_tot = c1 + (c2 if grid.d == 3 else 0.0)
    lap_x = apply_multiplier(laplacian(grid), x_high)
    gx = gradient_values(grid, x_high.values)
    y_vals = xi_eps.values - lap_x.values - ((np.abs(gx) ** 2).sum(axis=0) - c_tot)
    y = field_from_values(grid, y_vals, real=True)

    return Enhancement(
        epsilon=m.epsilon, seed=noise.seed, grid=grid, cfg=cfg,
        xi_eps=xi_eps, X1=x1, X2=x2, X3=x3, X_low=x_low, X_high=x_high,
        Y_eps=y, c1=c1, c2=c2, wick_grad1_sq=wick1, wick_cross=wick_cross,
        wick_grad2_sq=wick2, undersampled_mollifier=undersampled)


def assemble_y(e: Enhancement) -> Field:
    """Reassemble Y from the stored pieces along the cancellation route.

    Independent transcription of the same object: the resolvent relations
    remove xi and the Wick-corrected squares term by term, leaving only
    smooth remainders plus low/high cross terms.  Used as the gate that the
    direct definition and the piecewise algebra agree.
    """
    grid = e.grid
    low = e.X_low
    lap_low = apply_multiplier(laplacian(grid), low)
    g_low = gradient_values(grid, low.values)
    g_high = gradient_values(grid, e.X_high.values)
    cross_low = 2.0 * (g_high * g_low).sum(axis=0) + (np.abs(g_low) ** 2).sum(axis=0)

    if grid.d <= 2:
        vals = (-e.X1.values + lap_low.values - e.wick_grad1_sq.values + cross_low)
    else:
        g1 = gradient_values(grid, e.X1.values)
        g2 = gradient_values(grid, e.X2.values)
        g3 = gradient_values(grid, e.X3.values)
        vals = (-e.X1.values - e.X2.values - e.X3.values + lap_low.values
                - e.wick_grad2_sq.values
                - 2.0 * (g1 * g3).sum(axis=0)
                - 2.0 * (g2 * g3).sum(axis=0)
                - (np.abs(g3) ** 2).sum(axis=0)
                + cross_low)
    return field_from_values(grid, vals, real=True)


def self_consistency_residual(e: Enhancement) -> float:
    """Relative gap between the direct Y and the reassembled Y."""
    direct = e.Y_eps.values
    assembled = assemble_y(e).values
    denom = float(np.max(np.abs(direct)))
    if denom == 0.0:
        return float(np.max(np.abs(assembled - direct)))
    return float(np.max(np.abs(assembled - direct)) / denom)


def enhancement_cauchy_study(grid: Grid, seed: int, eps_list,
                             cfg: LocalizationConfig | None = None,
                             renormalize: bool = True,
                             norm_alpha: float = -1.5) -> dict:
    """Dyadic-eps differences of Y on one coupled realization.

    Mollifies the same noise sample at each eps in `eps_list` (decreasing)
    and measures ||Y_eps - Y_{eps/2}|| in the Holder-type norm of exponent
    `norm_alpha`.  With `renormalize` off, the Wick constant is added back,
    which reinstates the diverging mean (the negative control).

    The default exponent sits well below the limit's regularity: in the
    near-critical norm the three-level increments are almost flat (rate of
    order kappa) and drowned by band fluctuations, while at -1.5 the
    genuine increments contract cleanly and the control's divergent
    band-zero constant is visible against them.
    """
    eps_list = list(eps_list)
    if len(eps_list) < 3:
        raise ValueError("need at least 3 mollification levels")
    if cfg is None:
        cfg = default_localization(grid)
    noise = sample_white_noise(grid, seed)
    from .lpcalc import BesovParams, besov_norm

    def y_at(eps: float) -> np.ndarray:
        e = build_enhancement(noise, Mollifier(eps), cfg)
        vals = e.Y_eps.values
        if not renormalize:
            vals = vals - e.c_total
        return vals

    rows = []
    for eps in eps_list:
        diff = y_at(eps) - y_at(eps / 2.0)
        nrm = besov_norm(field_from_values(grid, diff, real=True),
                         BesovParams(norm_alpha, np.inf, np.inf, 0.0))
        rows.append((eps, nrm))
    norms = np.array([r[1] for r in rows])
    if np.all(norms > 0):
        # convergence rate per halving of eps
        lev = np.arange(len(norms), dtype=float)
        rate = -np.polyfit(lev, np.log2(norms), 1)[0]
    else:
        rate = math.inf
    return {"rows": rows, "rate": float(rate)}


# ---------------------------------------------------------------------------
# Enhancement archive: one directory of field snapshots plus a manifest.

_ARCHIVE_FIELDS = ("xi_eps", "X1", "X2", "X3", "X_low", "X_high", "Y_eps",
                   "wick_grad1_sq", "wick_cross", "wick_grad2_sq")


def save_enhancement(e: Enhancement, outdir, config_hash: str = "") -> None:
    os.makedirs(outdir, exist_ok=True)
    present = []
    for name in _ARCHIVE_FIELDS:
        f = getattr(e, name)
        if f is None:
            continue
        save_field(f, os.path.join(outdir, f"{name}.anls"))
        present.append(name)
    manifest = {
        "seed": e.seed,
        "epsilon": e.epsilon,
        "dim": e.grid.d,
        "n": e.grid.n,
        "box_length": e.grid.box_length,
        "c1": e.c1,
        "c2": e.c2,
        "fields": present,
        "levels": list(e.cfg.levels),
        "undersampled_mollifier": e.undersampled_mollifier,
        "config_hash": config_hash,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_enhancement(outdir) -> Enhancement:
    with open(os.path.join(outdir, "manifest.json")) as fh:
        man = json.load(fh)
    grid = make_grid(man["dim"], man["n"], man["box_length"])
    cfg = default_localization(grid, base_level=man["levels"][0],
                               rate=(man["levels"][1] - man["levels"][0])
                               if len(man["levels"]) > 1 else 1.0)
    fields = {}
    for name in _ARCHIVE_FIELDS:
        path = os.path.join(outdir, f"{name}.anls")
        fields[name] = load_field(path) if name in man["fields"] else None
    return Enhancement(
        epsilon=man["epsilon"], seed=man["seed"], grid=grid, cfg=cfg,
        xi_eps=fields["xi_eps"], X1=fields["X1"], X2=fields["X2"], X3=fields["X3"],
        X_low=fields["X_low"], X_high=fields["X_high"], Y_eps=fields["Y_eps"],
        c1=man["c1"], c2=man["c2"], wick_grad1_sq=fields["wick_grad1_sq"],
        wick_cross=fields["wick_cross"], wick_grad2_sq=fields["wick_grad2_sq"],
        undersampled_mollifier=man["undersampled_mollifier"])


def with_flipped_y(e: Enhancement) -> Enhancement:
    """Copy of the enhancement with Y negated (negative-control flows)."""
    return replace(e, Y_eps=Field(e.grid, -e.Y_eps.values, real=True))


def without_renormalization(e: Enhancement) -> Enhancement:
    """Copy with the Wick constant added back into Y (negative control)."""
    return replace(e, Y_eps=Field(e.grid, e.Y_eps.values - e.c_total, real=True))
