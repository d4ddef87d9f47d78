import math
import os

import numpy as np
import pytest

from anls import lattice
from conftest import random_field, smooth_field


def test_make_grid_examples():
    g = lattice.make_grid(1, 8, 8.0)
    assert g.spacing == 1.0
    ks = lattice.kvecs(g)[0]
    assert np.allclose(sorted(ks), 2 * np.pi / 8.0 * np.arange(-4, 4))

    g2 = lattice.make_grid(2, 64, 16.0)
    assert g2.npoints == 4096
    assert g2.spacing == 0.25

    g3 = lattice.make_grid(3, 8, 4.0)
    assert g3.npoints == 512


@pytest.mark.parametrize("d,n", [(0, 16), (4, 16), (2, 12), (2, 4), (2, -8)])
def test_make_grid_rejects(d, n):
    with pytest.raises(lattice.LatticeError):
        lattice.make_grid(d, n, 8.0)


def test_make_grid_memory_budget():
    with pytest.raises(lattice.LatticeError):
        lattice.make_grid(3, 64, 8.0, max_points=1000)


@pytest.mark.parametrize("seed", range(5))
def test_fourier_roundtrip(grid2, seed):
    f = random_field(grid2, seed)
    back = lattice.from_spectrum(grid2, lattice.to_spectrum(f))
    rel = np.max(np.abs(back.values - f.values)) / np.max(np.abs(f.values))
    assert rel < 1e-12


def test_constant_field_spectrum(grid2):
    f = lattice.field_from_values(grid2, np.full(grid2.shape, 3.0), real=True)
    c = lattice.to_spectrum(f)
    assert abs(c[0, 0] - 3.0 * grid2.box_length) < 1e-10
    c[0, 0] = 0.0
    assert np.max(np.abs(c)) < 1e-12


def test_plane_wave_single_coefficient(grid2):
    xs = lattice.coords(grid2)
    k0 = 2 * np.pi / grid2.box_length * np.array([5, -3])
    f = lattice.field_from_values(grid2, np.exp(1j * (k0[0] * xs[0] + k0[1] * xs[1])))
    c = np.abs(lattice.to_spectrum(f))
    assert np.sum(c > 1e-9) == 1
    assert abs(c.max() - grid2.box_length) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_parseval(grid2, seed):
    f = random_field(grid2, seed)
    spec_norm = math.sqrt(np.sum(np.abs(lattice.to_spectrum(f)) ** 2))
    assert abs(lattice.l2_norm(f) - spec_norm) / spec_norm < 1e-12


def test_multiplier_examples(grid2):
    one = lattice.field_from_values(grid2, np.ones(grid2.shape), real=True)
    out = lattice.apply_multiplier(lattice.inverse_helmholtz(grid2), one)
    assert np.max(np.abs(out.values - 1.0)) < 1e-12
    assert out.real

    # e^{ikx} with |k|^2 = 1 maps to (1/2) e^{ikx}
    g = lattice.make_grid(1, 64, 2 * np.pi)
    xs = lattice.coords(g)[0]
    pw = lattice.field_from_values(g, np.exp(1j * xs))
    out = lattice.apply_multiplier(lattice.inverse_helmholtz(g), pw)
    assert np.max(np.abs(out.values - 0.5 * pw.values)) < 1e-12

    # gradient of sin(2 pi x / L)
    g1 = lattice.make_grid(1, 64, 8.0)
    x = lattice.coords(g1)[0]
    f = lattice.field_from_values(g1, np.sin(2 * np.pi * x / 8.0), real=True)
    df = lattice.gradient(f)[0]
    expect = (2 * np.pi / 8.0) * np.cos(2 * np.pi * x / 8.0)
    assert np.max(np.abs(df.values - expect)) < 1e-12


def test_multiplier_composition(grid2):
    f = random_field(grid2, 3)
    m1 = lattice.inverse_helmholtz(grid2)
    m2 = lattice.laplacian(grid2)
    combo = lattice.multiplier(grid2, (m1.symbol * m2.symbol).real, "combo")
    a = lattice.apply_multiplier(m1, lattice.apply_multiplier(m2, f))
    b = lattice.apply_multiplier(combo, f)
    assert np.max(np.abs(a.values - b.values)) < 1e-12 * np.max(np.abs(b.values))


def test_real_flag_preserved(grid2):
    f = random_field(grid2, 4, complex_=False)
    out = lattice.apply_multiplier(lattice.inverse_helmholtz(grid2), f)
    assert out.real
    assert np.max(np.abs(out.values.imag)) < 1e-12
    # odd symbol does not claim realness
    g = lattice.multiplier(grid2, lattice.kvecs(grid2)[0], "k0")
    assert not g.real_even


def test_weighted_norm_examples(grid2):
    f = random_field(grid2, 5)
    w0 = lattice.make_weight(grid2, 0.0)
    assert abs(lattice.weighted_l2_norm(f, w0) - lattice.l2_norm(f)) < 1e-12

    # indicator of the center cell: weight <0> = 1
    vals = np.zeros(grid2.shape)
    vals[grid2.n // 2, grid2.n // 2] = 1.0
    ind = lattice.field_from_values(grid2, vals, real=True)
    w2 = lattice.make_weight(grid2, 2.0)
    assert abs(lattice.weighted_l2_norm(ind, w2) - grid2.spacing) < 1e-12


def test_weighted_norm_quadrature_oracle():
    # Gaussian bump, mu=1: rectangle rule at n matches a refined-grid rule
    def norm_on(n):
        g = lattice.make_grid(2, n, 16.0)
        r2 = lattice.radius_squared(g)
        f = lattice.field_from_values(g, np.exp(-r2 / 2.0), real=True)
        return lattice.weighted_l2_norm(f, lattice.make_weight(g, 1.0))

    coarse, fine = norm_on(64), norm_on(256)
    assert abs(coarse - fine) / fine < 1e-6


def test_weight_invariants(grid2):
    w = lattice.make_weight(grid2, 0.7)
    assert np.all(w.values > 0)
    flipped = w.values
    for ax in range(grid2.d):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    assert np.allclose(flipped, w.values)


def test_sobolev_examples(grid2):
    f = random_field(grid2, 6)
    assert abs(lattice.sobolev_norm(f, 0.0) - lattice.l2_norm(f)) < 1e-10

    xs = lattice.coords(grid2)
    k0 = 2 * np.pi / grid2.box_length * np.array([4, 0])
    pw = lattice.field_from_values(grid2, np.exp(1j * (k0[0] * xs[0] + k0[1] * xs[1])))
    expect = (1 + k0 @ k0) * grid2.box_length ** (grid2.d / 2)
    assert abs(lattice.sobolev_norm(pw, 2.0) - expect) < 1e-9 * expect


def test_h1_identity(grid2):
    # Parseval splitting of the H^1 norm; exact below the Nyquist row
    f = random_field(grid2, 7, band_limited=True)
    grads = lattice.gradient(f)
    lhs = lattice.sobolev_norm(f, 1.0) ** 2
    rhs = lattice.l2_norm(f) ** 2 + sum(lattice.l2_norm(gf) ** 2 for gf in grads)
    assert abs(lhs - rhs) / lhs < 1e-10


def test_sobolev_monotone(grid2):
    f = random_field(grid2, 8)
    norms = [lattice.sobolev_norm(f, s) for s in (-1.0, 0.0, 0.5, 1.0, 2.0)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_spectral_cache_consistency(grid2):
    f = random_field(grid2, 9)
    lattice.to_spectrum(f)
    assert f.spectral_cache is not None
    back = lattice.values_of(grid2, f.spectral_cache)
    assert np.max(np.abs(back - f.values)) < 1e-12 * np.max(np.abs(f.values))


def test_snapshot_roundtrip(tmp_path, grid2):
    f = random_field(grid2, 10)
    path = tmp_path / "field.anls"
    lattice.save_field(f, path)
    assert os.path.getsize(path) == 32 + grid2.npoints * 16
    with open(path, "rb") as fh:
        assert fh.read(4) == b"ANLS"
    g = lattice.load_field(path)
    assert g.grid == grid2
    assert np.array_equal(g.values, f.values)
    assert g.real == f.real


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "junk.anls"
    path.write_bytes(b"\x00" * 64)
    with pytest.raises(lattice.LatticeError):
        lattice.load_field(path)


def test_grid_mismatch_rejected(grid2):
    other = lattice.make_grid(2, 32, 16.0)
    f = random_field(other, 0)
    with pytest.raises(lattice.LatticeError):
        lattice.apply_multiplier(lattice.inverse_helmholtz(grid2), f)
    with pytest.raises(lattice.LatticeError):
        lattice.from_spectrum(grid2, f.values)
