"""Tests for the stationary families, band removal, and the full covariance.

Frozen reference values were computed with mpmath at 50-digit working
precision from independent transcriptions of the seven closed forms; the
band-coefficient cross-checks use hand antiderivatives where the integrand
is elementary.
"""

import math

import numpy as np
import pytest

from sphereirf.errors import ConfigError, NumericalError
from sphereirf.kernels import (
    DEFAULT_GAMMA_NU,
    Family,
    IntrinsicSpec,
    ModelSpec,
    _band_coefficient_quad,
    a_ell,
    band_coefficient,
    default_anchors,
    full_covariance,
    icf_core,
    icf_value,
    integrated_block,
    nil_space_basis,
    phi0_closed,
    phi0_series_oracle,
    temporal_g,
)
from sphereirf.sphere import NORTH_POLE, SpherePoint

FOUR_PI = 4.0 * math.pi

# (family, alpha, beta, gamma, shape, psi, h) -> phi0, frozen from mpmath.
FROZEN_PHI0 = [
    ("generating_function", 0.8, 0.10, 1.0, None, 0.0, 0, 3.5809862195676451),
    ("generating_function", 0.8, 0.10, 1.0, None, 1.3, 4, 0.05663599753124221),
    ("negative_binomial", 0.6, 0.20, 1.5, 2.0, 1.0, 2, 0.031175725536860918),
    ("multiquadric", 0.3, 0.50, 1.0, 1.5, 2.0, 1, 0.019733032142668863),
    ("sine_series", 0.9, 0.30, 1.0, None, 0.7, 0, 0.049190389073415673),
    ("sine_power", 0.5, 0.25, 1.0, 1.2, 2.5, 3, 0.041143899852851607),
    ("adapted_multiquadric", 0.7, 0.15, 1.0, 2.5, 0.4, 2, 0.16049995608719326),
    ("poisson", 0.5, 0.10, 1.0, 2.0, math.pi / 2, 0, 0.13533528323661269),
]

# One representative, valid spec per family for property sweeps.
FAMILY_SPECS = [
    ModelSpec(Family.GENERATING_FUNCTION, 0.8, 0.1),
    ModelSpec(Family.NEGATIVE_BINOMIAL, 0.7, 0.2, shape=2.0),
    ModelSpec(Family.MULTIQUADRIC, 0.4, 0.3, shape=1.5),
    ModelSpec(Family.SINE_SERIES, 0.9, 0.15),
    ModelSpec(Family.SINE_POWER, 0.6, 0.2, shape=1.2),
    ModelSpec(Family.ADAPTED_MULTIQUADRIC, 0.5, 0.25, shape=2.0),
    ModelSpec(Family.POISSON, 0.5, 0.1, shape=2.0),
]

GF = ModelSpec(Family.GENERATING_FUNCTION, 0.8, 0.1)


def test_family_parse_accepts_aliases():
    assert Family.parse("GeneratingFunction") is Family.GENERATING_FUNCTION
    assert Family.parse("negative-binomial") is Family.NEGATIVE_BINOMIAL
    assert Family.parse("SINE_POWER") is Family.SINE_POWER
    assert Family.parse("adaptedmultiquadric") is Family.ADAPTED_MULTIQUADRIC
    assert Family.parse(Family.POISSON) is Family.POISSON
    with pytest.raises(ConfigError):
        Family.parse("gaussian")


def test_modelspec_rejects_out_of_range_parameters():
    with pytest.raises(ConfigError):
        ModelSpec(Family.GENERATING_FUNCTION, 0.0, 0.1)
    with pytest.raises(ConfigError):
        ModelSpec(Family.GENERATING_FUNCTION, 1.0, 0.1)
    with pytest.raises(ConfigError):
        ModelSpec(Family.GENERATING_FUNCTION, 0.5, 0.0)
    with pytest.raises(ConfigError):
        ModelSpec(Family.GENERATING_FUNCTION, 0.5, 0.1, gamma=-1.0)


def test_modelspec_shape_rules():
    # eta beyond 2 breaks positive definiteness of the sine_power family
    with pytest.raises(ConfigError):
        ModelSpec(Family.SINE_POWER, 0.5, 0.1, shape=2.5)
    assert ModelSpec(Family.SINE_POWER, 0.5, 0.1, shape=2.0).shape == 2.0
    with pytest.raises(ConfigError):
        ModelSpec(Family.NEGATIVE_BINOMIAL, 0.5, 0.1, shape=0.0)
    with pytest.raises(ConfigError):
        ModelSpec(Family.GENERATING_FUNCTION, 0.5, 0.1, shape=1.0)
    assert ModelSpec(Family.MULTIQUADRIC, 0.5, 0.1).shape == 1.0
    assert ModelSpec(Family.GENERATING_FUNCTION, 0.5, 0.1).shape is None


def test_modelspec_dict_roundtrip():
    for spec in FAMILY_SPECS:
        again = ModelSpec.from_dict(spec.to_dict())
        assert again == spec
    with pytest.raises(ConfigError):
        ModelSpec.from_dict({"family": "poisson", "alpha": 0.5, "beta": 0.1, "tau": 2})
    with pytest.raises(ConfigError):
        ModelSpec.from_dict({"alpha": 0.5, "beta": 0.1})


def test_phi0_frozen_values():
    for fam, alpha, beta, gamma, shape, psi, h, want in FROZEN_PHI0:
        spec = ModelSpec(Family.parse(fam), alpha, beta, gamma, shape)
        got = phi0_closed(spec, psi, h)
        assert got == pytest.approx(want, rel=1e-12), fam


def test_phi0_broadcasts_and_matches_scalar_calls():
    psi = np.linspace(0.0, math.pi, 7)
    h = np.arange(4)[:, None]
    for spec in FAMILY_SPECS:
        grid = phi0_closed(spec, psi[None, :], h)
        assert grid.shape == (4, 7)
        for i in range(4):
            for j in range(7):
                assert grid[i, j] == pytest.approx(
                    phi0_closed(spec, psi[j], float(i)), rel=1e-14
                )


def test_phi0_even_in_time_lag():
    psi = np.linspace(0.0, math.pi, 11)
    for spec in FAMILY_SPECS:
        np.testing.assert_array_equal(
            phi0_closed(spec, psi, 3), phi0_closed(spec, psi, -3)
        )


def test_phi0_rejects_angles_outside_domain():
    with pytest.raises(ValueError):
        phi0_closed(GF, -0.1, 0)
    with pytest.raises(ValueError):
        phi0_closed(GF, math.pi + 0.1, 0)


def test_phi0_decreases_along_angle_and_lag_slices():
    psi = np.linspace(0.0, math.pi, 181)
    lags = np.arange(0, 12)
    for spec in FAMILY_SPECS:
        along_psi = phi0_closed(spec, psi, 0)
        assert np.all(np.diff(along_psi) <= 1e-12), spec.family
        along_h = phi0_closed(spec, 0.0, lags)
        assert np.all(np.diff(along_h) <= 1e-12), spec.family


def test_temporal_g_and_a_ell():
    assert temporal_g(0.2, 0) == 1.0
    assert temporal_g(0.2, -3) == pytest.approx(math.exp(-0.6), rel=1e-15)
    assert a_ell(GF, 0, 5) == 1.0
    np.testing.assert_array_equal(a_ell(GF, 0, np.arange(6)), np.ones(6))
    assert a_ell(GF, 3, 2) == pytest.approx(0.8**3 * math.exp(-0.6), rel=1e-14)


def test_series_oracle_matches_closed_form():
    psi = np.arange(0.0, 3.15, 0.1)
    for h in range(7):
        series = phi0_series_oracle(GF, psi, float(h), n_terms=2000)
        closed = phi0_closed(GF, psi, float(h))
        np.testing.assert_allclose(series, closed, atol=1e-10)


def test_band_coefficient_generating_function_dual_route():
    # closed geometric form vs. the quadrature path used by other families
    for ell in (0, 1, 2, 5):
        for h in (0.0, 3.0):
            closed = band_coefficient(GF, ell, h)
            quad = _band_coefficient_quad(GF, ell, h)
            assert quad == pytest.approx(closed, rel=1e-12)
    assert band_coefficient(GF, 0, 0) == 1.0
    assert band_coefficient(GF, 1, 0) == pytest.approx(0.8, rel=1e-15)


def test_band_coefficient_negative_binomial_hand_integral():
    # tau = 1 has elementary antiderivatives:
    #   b_0(0) = (1-a)/(2a) * log((1+a)/(1-a))
    #   b_1(0) = (1-a)/2 * (-2/a + log((1+a)/(1-a))/a**2)
    a = 0.8
    nb = ModelSpec(Family.NEGATIVE_BINOMIAL, a, 0.1, shape=1.0)
    logr = math.log((1 + a) / (1 - a))
    assert band_coefficient(nb, 0, 0) == pytest.approx(
        (1 - a) / (2 * a) * logr, rel=1e-12
    )
    assert band_coefficient(nb, 1, 0) == pytest.approx(
        (1 - a) / 2 * (-2 / a + logr / a**2), rel=1e-12
    )


def test_icf_with_no_removed_band_is_scaled_phi0():
    psi = np.linspace(0.0, math.pi, 13)
    for spec in FAMILY_SPECS:
        np.testing.assert_array_equal(
            icf_value(spec, psi, 2, kappa=0, gamma0=1.0), phi0_closed(spec, psi, 2)
        )
    np.testing.assert_array_equal(
        icf_value(GF, psi, 1, kappa=0, gamma0=2.5), 2.5 * phi0_closed(GF, psi, 1)
    )


def test_icf_truncation_worked_values():
    # alpha = 0.8: phi0(0,0) = 45/(4 pi); removing degree 0 leaves 44/(4 pi),
    # removing degrees {0, 1} leaves (45 - 1 - 3*0.8)/(4 pi).
    assert phi0_closed(GF, 0.0, 0) == pytest.approx(3.5809862195676451, rel=1e-12)
    assert icf_value(GF, 0.0, 0, kappa=1) == pytest.approx(
        3.5014087480216974, rel=1e-12
    )
    assert icf_value(GF, 0.0, 0, kappa=2) == pytest.approx(
        3.3104228163114233, rel=1e-12
    )


def test_icf_broadcasts_over_lag_grids():
    psi = np.array([0.0, 0.4, 1.1])
    h = np.array([0, 1, 2, 5])
    grid = icf_value(GF, psi[:, None], h[None, :], kappa=1)
    assert grid.shape == (3, 4)
    for i, p in enumerate(psi):
        for j, lag in enumerate(h):
            assert grid[i, j] == pytest.approx(
                icf_value(GF, float(p), float(lag), kappa=1), rel=1e-13
            )


def test_icf_removes_low_degree_content():
    # after removal, the truncated kernel must integrate to zero against the
    # removed Legendre degrees
    from sphereirf.sphere import gauss_legendre_nodes, legendre_p_sequence

    x, w = gauss_legendre_nodes(128)
    seq = legendre_p_sequence(2, x)
    for spec in FAMILY_SPECS:
        vals = icf_core(spec, 2, np.arccos(x), 1.0)
        for ell in range(2):
            proj = 2.0 * math.pi * float(np.sum(w * seq[ell] * vals))
            assert abs(proj) < 1e-12, (spec.family, ell)


def test_icf_rejects_negative_kappa():
    with pytest.raises(ConfigError):
        icf_value(GF, 0.5, 0, kappa=-1)


def test_default_anchor_layouts():
    assert default_anchors(0) == ()
    assert default_anchors(1) == (NORTH_POLE,)
    tetra = default_anchors(2)
    assert len(tetra) == 4
    from sphereirf.sphere import great_circle

    expected = math.acos(-1.0 / 3.0)
    for i in range(4):
        for j in range(i + 1, 4):
            assert great_circle(tetra[i], tetra[j]) == pytest.approx(
                expected, abs=1e-12
            )
    with pytest.raises(ConfigError):
        default_anchors(3)


def test_nil_basis_constant_band():
    basis = nil_space_basis((NORTH_POLE,), 1)
    assert basis.shape == (1, 1)
    assert basis[0, 0] == pytest.approx(2.0 * math.sqrt(math.pi), rel=1e-14)


def test_nil_basis_cardinal_at_anchors():
    spec = IntrinsicSpec.build(kappa=2, d=1)
    lons = np.array([p.lon for p in spec.anchors])
    lats = np.array([p.lat for p in spec.anchors])
    np.testing.assert_allclose(spec.nil_values(lons, lats), np.eye(4), atol=1e-12)


def test_nil_basis_rejects_degenerate_anchors():
    # four equatorial points kill the polar degree-1 harmonic
    ring = tuple(SpherePoint(k * math.pi / 2.0, 0.0) for k in range(4))
    with pytest.raises(NumericalError):
        nil_space_basis(ring, 2)


def test_intrinsic_build_defaults_and_validation():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    assert spec.anchors == (NORTH_POLE,)
    assert spec.gamma_nu == (DEFAULT_GAMMA_NU,)
    assert spec.gamma0 == 1.0
    with pytest.raises(ConfigError):
        IntrinsicSpec.build(kappa=1, d=2)
    with pytest.raises(ConfigError):
        IntrinsicSpec.build(kappa=1, d=0, gamma0=0.0)
    with pytest.raises(ConfigError):
        IntrinsicSpec.build(kappa=2, d=0, anchors=(NORTH_POLE,))
    with pytest.raises(ConfigError):
        IntrinsicSpec.build(kappa=1, d=0, gamma_nu=(-1.0,))
    dup = (NORTH_POLE, NORTH_POLE, SpherePoint(0.0, 0.0), SpherePoint(1.0, 0.0))
    with pytest.raises(ConfigError):
        IntrinsicSpec.build(kappa=2, d=0, anchors=dup)


def test_intrinsic_dict_roundtrip():
    spec = IntrinsicSpec.build(kappa=2, d=1, gamma0=1.5)
    again = IntrinsicSpec.from_dict(spec.to_dict())
    assert again.kappa == spec.kappa and again.d == spec.d
    assert again.gamma0 == spec.gamma0
    assert again.gamma_nu == spec.gamma_nu
    for p, q in zip(again.anchors, spec.anchors):
        assert p.lon == pytest.approx(q.lon, abs=1e-15)
        assert p.lat == pytest.approx(q.lat, abs=1e-15)
    with pytest.raises(ConfigError):
        IntrinsicSpec.from_dict({"kappa": 1, "d": 0, "jitter": 1e-8})


def test_integrated_block_stationary_case():
    spec = IntrinsicSpec.build(kappa=1, d=0)
    for t, s in [(0, 0), (3, 1), (2, 5)]:
        assert integrated_block(GF, spec, 0.7, t, s) == pytest.approx(
            float(icf_core(GF, 1, 0.7, float(t - s))), rel=1e-14
        )


def test_integrated_block_single_step_matches_core():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    assert integrated_block(GF, spec, 0.0, 1, 1) == pytest.approx(
        3.5014087480216974, rel=1e-12
    )


def test_integrated_block_vanishes_at_time_origin():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    for s in range(4):
        assert integrated_block(GF, spec, 0.9, 0, s) == 0.0
        assert integrated_block(GF, spec, 0.9, s, 0) == 0.0


def test_integrated_block_symmetric_in_times():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    for t, s in [(1, 2), (4, 2), (5, 5), (3, 7)]:
        assert integrated_block(GF, spec, 1.1, t, s) == pytest.approx(
            integrated_block(GF, spec, 1.1, s, t), rel=1e-13
        )


def test_integrated_block_rejects_negative_times():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    with pytest.raises(ConfigError):
        integrated_block(GF, spec, 0.5, -1, 2)


def test_second_difference_of_block_recovers_core():
    spec = IntrinsicSpec.build(kappa=1, d=1)

    def block(psi, t, s):
        return integrated_block(GF, spec, psi, t, s)

    for psi in (0.0, 0.6, 2.2):
        for t, s in [(1, 1), (2, 1), (3, 3), (5, 2)]:
            diff = (
                block(psi, t, s)
                - block(psi, t - 1, s)
                - block(psi, t, s - 1)
                + block(psi, t - 1, s - 1)
            )
            want = float(icf_core(GF, 1, psi, float(t - s)))
            assert diff == pytest.approx(want, abs=1e-12)


def test_full_covariance_at_anchor_before_any_increment():
    spec = IntrinsicSpec.build(kappa=1, d=1)
    pole = spec.anchors[0]
    got = full_covariance(GF, spec, pole, pole, 0, 0)
    assert got == pytest.approx(1.0 / FOUR_PI, rel=1e-12)


def test_full_covariance_without_band_is_scaled_phi0():
    spec = IntrinsicSpec.build(kappa=0, d=0, gamma0=1.3)
    p = SpherePoint.from_degrees(20.0, 35.0)
    q = SpherePoint.from_degrees(-40.0, -10.0)
    from sphereirf.sphere import great_circle

    want = 1.3**2 * phi0_closed(GF, great_circle(p, q), 2)
    assert full_covariance(GF, spec, p, q, 5, 3) == pytest.approx(want, rel=1e-13)


def test_full_covariance_symmetric_in_arguments():
    rng = np.random.default_rng(7)
    spec = IntrinsicSpec.build(kappa=2, d=1)
    for _ in range(5):
        lon = rng.uniform(0, 2 * math.pi, 2)
        lat = np.arcsin(rng.uniform(-1, 1, 2))
        p = SpherePoint(lon[0], lat[0])
        q = SpherePoint(lon[1], lat[1])
        t, s = rng.integers(0, 5, 2)
        a = full_covariance(GF, spec, p, q, int(t), int(s))
        b = full_covariance(GF, spec, q, p, int(s), int(t))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def _covariance_matrix(model, spec, points, times):
    n = len(points)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = full_covariance(
                model, spec, points[i], points[j], times[i], times[j]
            )
    return out


def test_full_covariance_positive_semidefinite():
    # the negative_binomial case is the one that fails if the removed band
    # does not use the family's own coefficients
    cases = [
        (GF, IntrinsicSpec.build(kappa=1, d=1)),
        (ModelSpec(Family.NEGATIVE_BINOMIAL, 0.8, 0.1, shape=1.0),
         IntrinsicSpec.build(kappa=1, d=0)),
        (ModelSpec(Family.SINE_POWER, 0.6, 0.2, shape=1.2),
         IntrinsicSpec.build(kappa=2, d=1)),
    ]
    rng = np.random.default_rng(11)
    for model, spec in cases:
        lon = rng.uniform(0, 2 * math.pi, 40)
        lat = np.arcsin(rng.uniform(-1, 1, 40))
        points = [SpherePoint(a, b) for a, b in zip(lon, lat)]
        times = rng.integers(spec.d, 5, 40).tolist()
        mat = _covariance_matrix(model, spec, points, times)
        np.testing.assert_allclose(mat, mat.T, atol=1e-13)
        eigs = np.linalg.eigvalsh(mat)
        floor = -1e-8 * float(np.max(np.diag(mat)))
        assert eigs.min() >= floor, (model.family, eigs.min())
