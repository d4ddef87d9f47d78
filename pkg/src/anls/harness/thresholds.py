"""Single versioned table of pass/fail thresholds.

Both the experiment drivers and the acceptance test suite read from this
table; nothing else in the package hard-codes a tolerance that decides a
pass/fail verdict.
"""

THRESHOLDS_VERSION = 1

THRESHOLDS = {
    # exact algebraic identities (roundtrip, partitions, Parseval)
    "exact_identity_rel": 1e-12,
    # Monte-Carlo agreement band in units of the estimator standard error
    "mc_sigma": 3.0,
    # log-divergence fit of the first constant in d = 2
    "divergence_r2_min": 0.99,
    # direct vs reassembled enhancement
    "self_consistency_rel": 1e-8,
    # coupled-realization convergence studies; the negative control must
    # fail to be strictly decreasing (boolean check, no tolerance)
    "cauchy_rate_min": 0.0,
    # band-slope regularity estimates
    "reg_white_noise_tol": 0.15,
    "reg_smoothed_noise_tol": 0.15,
    "reg_y_min_2d": -0.15,
    "reg_y_min_3d": -0.65,
    # fixed-point inverse of the paracontrolled map
    "gamma_inverse_rel": 1e-8,
    # conjugated-operator defect slopes
    "defect_gap_min": 0.3,
    # conservation of the weighted mass over unit time (linear flow)
    "mass_drift_rel": 1e-8,
    # splitting order of the energy drift and the mild residual
    "energy_order_min": 1.7,
    "mild_order_lo": 1.5,
    "mild_order_hi": 2.5,
    "mild_linear_residual": 1e-8,
    # space-time quotients
    "strichartz_free_rel": 0.05,
    "strichartz_spread_max": 4.0,
    # 1d propagation stability under step halving
    "dt_stability_rel": 0.10,
    # linear-in-interval growth of the bound
    "energy_bound_quad_frac": 0.10,
    "energy_bound_floor": 1e-9,
}
