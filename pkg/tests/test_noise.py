import math

import numpy as np
import pytest

from anls import lattice, lpcalc, noise
from anls.noise import Mollifier


def test_white_noise_deterministic(grid2):
    a = noise.sample_white_noise(grid2, 123)
    b = noise.sample_white_noise(grid2, 123)
    assert np.array_equal(a.xi.values, b.xi.values)
    c = noise.sample_white_noise(grid2, 124)
    assert not np.array_equal(a.xi.values, c.xi.values)


def test_white_noise_cell_variance():
    g = lattice.make_grid(1, 16384, 16384.0)     # h = 1
    xi = noise.sample_white_noise(g, 0).xi
    var = float(np.var(xi.values.real))
    se = math.sqrt(2.0 / g.n)                    # var of sample variance
    assert abs(var - 1.0) < 3 * se


def test_noise_pairing_variance(grid1):
    """Var <xi, phi> approximates ||phi||_{L2}^2 (Monte-Carlo oracle)."""
    r2 = lattice.radius_squared(grid1)
    phi = lattice.field_from_values(grid1, np.exp(-r2 / 8.0), real=True)
    target = lattice.l2_norm(phi) ** 2
    n_seeds = 4000
    vals = np.empty(n_seeds)
    for s in range(n_seeds):
        xi = noise.sample_white_noise(grid1, s).xi
        vals[s] = lattice.inner_product(xi, phi).real
    var = vals.var(ddof=1)
    se = var * math.sqrt(2.0 / (n_seeds - 1))
    assert abs(var - target) < 3 * se


def test_mollify_identity_and_mean(grid2):
    xi = noise.sample_white_noise(grid2, 1).xi
    same = noise.mollify(xi, Mollifier(0.0))
    assert np.array_equal(same.values, xi.values)
    wide = noise.mollify(xi, Mollifier(50.0))
    mean = xi.values.mean()
    assert np.max(np.abs(wide.values - mean)) < 1e-3 * np.abs(mean) + 1e-6
    with pytest.raises(ValueError):
        Mollifier(-0.1)


def test_mollify_raises_regularity():
    g = lattice.make_grid(2, 128, 16.0)
    gains = []
    for s in range(8):
        xi = noise.sample_white_noise(g, s).xi
        xe = noise.mollify(xi, Mollifier(4 * g.spacing))
        a0, _ = lpcalc.regularity_estimate(xi, np.inf, np.inf, (1, 4))
        a1, _ = lpcalc.regularity_estimate(xe, np.inf, np.inf, (1, 4))
        gains.append(a1 - a0)
    assert np.mean(gains) >= 1.0


def test_renorm_constant_1_mc_oracle():
    g = lattice.make_grid(2, 64, 16.0)
    m = Mollifier(2 * g.spacing)
    c1 = noise.renorm_constant_1(g, m)
    inv = lattice.inverse_helmholtz(g)
    n_seeds = 1500
    vals = np.empty(n_seeds)
    for s in range(n_seeds):
        xi = noise.mollify(noise.sample_white_noise(g, s).xi, m)
        x1 = lattice.apply_multiplier(inv, xi)
        gsq = (np.abs(lattice.gradient_values(g, x1.values)) ** 2).sum(axis=0)
        vals[s] = gsq[5, 11].real
    se = vals.std(ddof=1) / math.sqrt(n_seeds)
    assert abs(vals.mean() - c1) < 3 * se


def test_renorm_constant_1_rejects_eps0_high_d(grid2):
    with pytest.raises(ValueError):
        noise.renorm_constant_1(grid2, Mollifier(0.0))
    g1 = lattice.make_grid(1, 512, 32.0)
    assert noise.renorm_constant_1(g1, Mollifier(0.0)) > 0


def test_divergence_law_2d_and_1d_bound():
    g = lattice.make_grid(2, 256, 4.0)
    h = g.spacing
    eps = np.array([16.0, 12, 8, 6, 4, 3, 2]) * h
    cs = np.array([noise.renorm_constant_1(g, Mollifier(e)) for e in eps])
    x = np.log(1.0 / eps)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, cs, rcond=None)
    resid = cs - A @ coef
    r2 = 1 - np.sum(resid ** 2) / np.sum((cs - cs.mean()) ** 2)
    assert coef[0] > 0
    assert r2 >= 0.99

    g1 = lattice.make_grid(1, 4096, 64.0)
    cs1 = [noise.renorm_constant_1(g1, Mollifier(f * g1.spacing))
           for f in (16.0, 8, 4, 2, 1)]
    assert all(np.diff(cs1) > 0)
    # bounded: increments shrink toward the convergent tail integral
    assert cs1[-1] - cs1[-2] < 0.5 * (cs1[1] - cs1[0])


def test_renorm_constant_2_estimator(grid3):
    m = Mollifier(grid3.spacing)
    val, se = noise.renorm_constant_2(grid3, m, ensemble=64)
    assert val > 0 and se > 0
    val2, se2 = noise.renorm_constant_2(grid3, m, ensemble=256)
    # law of large numbers: standard error shrinks like 1/sqrt(ensemble)
    assert se2 < se
    assert abs(val - val2) < 4 * math.sqrt(se ** 2 + se2 ** 2)
    with pytest.raises(ValueError):
        noise.renorm_constant_2(lattice.make_grid(2, 64, 16.0), m)


def test_c2_invariant_to_constant_shift_in_wick(grid3):
    """A mis-specified c1 shifts X2 by a spatial constant, which the
    gradient annihilates: c2 is exactly invariant.  The realizable
    sensitivity control is a transcription error that is not a constant,
    e.g. re-mollifying the squared gradient, which moves c2 beyond 3 sigma.
    """
    g = grid3
    m = Mollifier(g.spacing)
    c1 = noise.renorm_constant_1(g, m)
    inv = lattice.inverse_helmholtz(g)
    moll = m.symbol(g)

    def c2_like(wrong_const=0.0, remollify=False, seeds=64):
        samples = np.empty(seeds)
        for i in range(seeds):
            rng = noise.child_seed(0xABC, i)
            vals = rng.standard_normal(g.shape) * g.spacing ** (-1.5)
            xi = noise.mollify(lattice.field_from_values(g, vals, real=True), m)
            x1 = lattice.apply_multiplier(inv, xi)
            g1 = lattice.gradient_values(g, x1.values)
            wick = lattice.field_from_values(
                g, (np.abs(g1) ** 2).sum(axis=0) - (c1 + wrong_const), real=True)
            if remollify:
                wick = noise.mollify(wick, m)
            x2 = lattice.apply_multiplier(inv, wick)
            g2 = lattice.gradient_values(g, x2.values)
            samples[i] = float(np.mean((np.abs(g2) ** 2).sum(axis=0)))
        return samples.mean(), samples.std(ddof=1) / math.sqrt(seeds)

    base, se = c2_like()
    shifted, _ = c2_like(wrong_const=1.0)
    assert abs(shifted - base) < 1e-10 * base          # exact invariance
    remoll, se2 = c2_like(remollify=True)
    assert abs(remoll - base) > 3 * math.sqrt(se ** 2 + se2 ** 2)


def test_enhancement_zero_noise(grid2):
    nz = noise.NoiseRealization(0, grid2, lattice.zero_field(grid2))
    e = noise.build_enhancement(nz, Mollifier(grid2.spacing))
    assert np.max(np.abs(e.X_high.values)) == 0
    y = e.Y_eps.values
    assert np.max(np.abs(y - y.flat[0])) < 1e-12      # spatially constant
    assert abs(y.flat[0].real - e.c_total) < 1e-12    # the Wick constant


@pytest.mark.parametrize("seed", range(4))
def test_self_consistency_2d(seed):
    g = lattice.make_grid(2, 128, 16.0)
    e = noise.build_enhancement(noise.sample_white_noise(g, seed),
                                Mollifier(2 * g.spacing))
    assert noise.self_consistency_residual(e) < 1e-8


def test_self_consistency_3d(grid3):
    e = noise.build_enhancement(noise.sample_white_noise(grid3, 5),
                                Mollifier(grid3.spacing), c2_ensemble=32)
    assert noise.self_consistency_residual(e) < 1e-8
    # defining resolvent relations of the chain
    g = grid3
    inv = lattice.inverse_helmholtz(g)
    one_minus_lap = lattice.multiplier(g, 1.0 + lattice.k_squared(g), "1-lap")
    lhs = lattice.apply_multiplier(one_minus_lap, e.X1)
    assert np.max(np.abs(lhs.values + e.xi_eps.values)) \
        < 1e-10 * np.max(np.abs(e.xi_eps.values))
    lhs2 = lattice.apply_multiplier(one_minus_lap, e.X2)
    assert np.max(np.abs(lhs2.values - e.wick_grad1_sq.values)) \
        < 1e-10 * np.max(np.abs(e.wick_grad1_sq.values))
    lhs3 = lattice.apply_multiplier(one_minus_lap, e.X3)
    assert np.max(np.abs(lhs3.values - 2.0 * e.wick_cross.values)) \
        < 1e-10 * np.max(np.abs(e.wick_cross.values))


def test_wick_centering():
    g = lattice.make_grid(2, 64, 16.0)
    m = Mollifier(2 * g.spacing)
    means = []
    for s in range(64):
        e = noise.build_enhancement(noise.sample_white_noise(g, s), m)
        means.append(float(e.wick_grad1_sq.values.mean().real))
    se = np.std(means, ddof=1) / math.sqrt(len(means))
    assert abs(np.mean(means)) < 3 * se


def test_exp_bounds_and_two_box_probe():
    """exp(+-X) finite, and sup|X| stays stable when the box doubles
    (the point of keeping only the localized high part in X)."""
    sups = {}
    for L, n in ((16.0, 128), (32.0, 256)):
        g = lattice.make_grid(2, n, L)
        e = noise.build_enhancement(noise.sample_white_noise(g, 9),
                                    Mollifier(2 * g.spacing))
        x = e.X_high.values.real
        assert np.isfinite(np.exp(x).max()) and np.isfinite(np.exp(-x).min())
        assert np.max(np.abs(e.X_high.values.imag)) < 1e-12
        sups[L] = np.max(np.abs(x))
    assert sups[32.0] < 2.0 * sups[16.0] + 0.2


def test_undersampled_flag(grid2):
    nz = noise.sample_white_noise(grid2, 1)
    e = noise.build_enhancement(nz, Mollifier(grid2.spacing / 4.0))
    assert e.undersampled_mollifier
    e2 = noise.build_enhancement(nz, Mollifier(grid2.spacing))
    assert not e2.undersampled_mollifier


def test_enhancement_determinism(grid2):
    m = Mollifier(2 * grid2.spacing)
    a = noise.build_enhancement(noise.sample_white_noise(grid2, 3), m)
    b = noise.build_enhancement(noise.sample_white_noise(grid2, 3), m)
    assert np.array_equal(a.Y_eps.values, b.Y_eps.values)
    assert a.c1 == b.c1


def test_cauchy_study_zero_noise(grid2):
    rows = []
    nz = noise.NoiseRealization(0, grid2, lattice.zero_field(grid2))
    # all-zero noise: differences are the constant gaps only
    for eps in (8, 4, 2):
        ea = noise.build_enhancement(nz, Mollifier(eps * grid2.spacing))
        eb = noise.build_enhancement(nz, Mollifier(eps * grid2.spacing / 2))
        diff = ea.Y_eps.values - eb.Y_eps.values
        rows.append(np.max(np.abs(diff - (ea.c_total - eb.c_total))))
    assert max(rows) < 1e-12


def test_cauchy_study_rates():
    g = lattice.make_grid(2, 128, 16.0)
    h = g.spacing
    ren = noise.enhancement_cauchy_study(g, 7, [8 * h, 4 * h, 2 * h])
    norms = [d for _, d in ren["rows"]]
    assert ren["rate"] > 0
    assert sum(b < a for a, b in zip(norms, norms[1:])) >= len(norms) - 2
    ctl = noise.enhancement_cauchy_study(g, 7, [8 * h, 4 * h, 2 * h],
                                         renormalize=False)
    cn = [d for _, d in ctl["rows"]]
    assert not all(b < a for a, b in zip(cn, cn[1:]))   # fails to decrease
    assert cn[-1] > norms[-1]                            # divergent floor


def test_archive_roundtrip(tmp_path, grid2):
    e = noise.build_enhancement(noise.sample_white_noise(grid2, 11),
                                Mollifier(2 * grid2.spacing))
    noise.save_enhancement(e, tmp_path / "arch", config_hash="deadbeef")
    back = noise.load_enhancement(tmp_path / "arch")
    assert back.epsilon == e.epsilon and back.seed == e.seed
    assert back.c1 == e.c1
    assert np.array_equal(back.Y_eps.values, e.Y_eps.values)
    assert np.array_equal(back.X_high.values, e.X_high.values)
    assert back.X2 is None and back.X3 is None
