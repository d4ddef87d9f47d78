import numpy as np
import pytest

from anls import lattice


def random_field(grid, seed, complex_=True, band_limited=False):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(grid.shape)
    if complex_:
        vals = vals + 1j * rng.standard_normal(grid.shape)
    f = lattice.field_from_values(grid, vals, real=not complex_)
    if band_limited:
        # keep modes strictly below Nyquist so odd-symbol operators are exact
        spec = lattice.to_spectrum(f)
        keep = lattice.mode_radius(grid) < grid.n / 2 - 1
        f = lattice.from_spectrum(grid, spec * keep, real=False)
    return f


def smooth_field(grid, seed, decay=2.5, complex_=True):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(grid.shape)
    if complex_:
        raw = raw + 1j * rng.standard_normal(grid.shape)
    spec = lattice.spectrum_of(grid, raw)
    spec *= (1.0 + lattice.k_squared(grid)) ** (-decay / 2.0)
    return lattice.from_spectrum(grid, spec)


@pytest.fixture(scope="session")
def grid2():
    return lattice.make_grid(2, 64, 16.0)


@pytest.fixture(scope="session")
def grid1():
    return lattice.make_grid(1, 512, 32.0)


@pytest.fixture(scope="session")
def grid3():
    return lattice.make_grid(3, 16, 4.0)
