import numpy as np
import pytest

from tests.conftest import random_field
from nls_virial.invariants.params_invariants import (
    Field,
    Verdict,
    classify,
    conserved,
    dichotomy_bounds,
    dichotomy_polynomial,
    dilate,
    energy_mass_ratio,
    eta,
    galilean_boost,
    galilean_reclassify,
    lambda_roots,
    make_params,
    mass_rescale,
    upper_root,
    zero_momentum_frame,
)
from nls_virial.utils.errors import (
    AliasRiskError,
    NonFiniteError,
    OutOfRangeError,
    RatioOutOfRangeError,
    ValidationError,
    ZeroMassError,
)
from nls_virial.utils import spectral
from nls_virial.utils.spectral import Grid


# ---------------------------------------------------------------------------
# ProblemParams
# ---------------------------------------------------------------------------
def test_derived_quantities_1d_septic():
    params = make_params(1, 7)
    assert params.s_c == pytest.approx(1.0 / 6.0, rel=1e-15)
    assert params.omega1 == pytest.approx(3.0, rel=1e-15)
    assert params.omega2 == pytest.approx(2.0, rel=1e-15)
    assert params.virial_power == 3.0


@pytest.mark.parametrize("N, p", [(2, 3.0), (1, 5.0), (3, 5.0), (4, 2.5), (3, 2.0), (1, 3.0)])
def test_params_outside_window_rejected(N, p):
    with pytest.raises(OutOfRangeError):
        make_params(N, p)


def test_omega_difference_is_one(rng):
    for _ in range(50):
        N = int(rng.integers(1, 4))
        lower = 1.0 + 4.0 / N
        upper = 1.0 + 4.0 / (N - 2) if N >= 3 else lower + 10.0
        p = rng.uniform(lower, upper)
        if not lower < p < upper:
            continue
        params = make_params(N, p)
        assert abs(params.omega1 - params.omega2 - 1.0) <= 8 * np.finfo(float).eps * params.omega1
        assert params.omega1 / params.omega2 > 1.0
        assert 0.0 < params.s_c < 1.0


def test_dichotomy_polynomial_maximum_at_one(params_1d):
    assert float(dichotomy_polynomial(1.0, params_1d)) == pytest.approx(1.0, abs=1e-15)
    for lam in (1.0 - 1e-6, 1.0 + 1e-6):
        assert float(dichotomy_polynomial(lam, params_1d)) < 1.0


# ---------------------------------------------------------------------------
# λ 根
# ---------------------------------------------------------------------------
def test_lambda_roots_cubic_factorization(params_1d):
    lam_minus, lam_plus = lambda_roots(0.5, params_1d)
    assert lam_minus == pytest.approx(0.5, abs=1e-10)
    assert lam_plus == pytest.approx((1.0 + np.sqrt(3.0)) / 2.0, abs=1e-10)
    for lam in (lam_minus, lam_plus):
        assert abs(float(dichotomy_polynomial(lam, params_1d)) - 0.5) <= 1e-12


def test_lambda_roots_zero_ratio(params_1d):
    lam_minus, lam_plus = lambda_roots(0.0, params_1d)
    assert lam_minus == 0.0
    assert lam_plus == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("ratio", [1.0, 1.5, -0.1])
def test_lambda_roots_out_of_range(params_1d, ratio):
    with pytest.raises(RatioOutOfRangeError):
        lambda_roots(ratio, params_1d)


def test_upper_root_accepts_negative_ratio(params_1d):
    lam = upper_root(-100.0, params_1d)
    assert lam > 1.5
    assert float(dichotomy_polynomial(lam, params_1d)) == pytest.approx(-100.0, abs=1e-9)


def test_roots_residual_across_params():
    for N, p in [(1, 7.0), (2, 5.0), (3, 3.0), (2, 4.2), (3, 4.5)]:
        params = make_params(N, p)
        for ratio in (0.01, 0.3, 0.9, 0.999):
            for lam in lambda_roots(ratio, params):
                assert abs(float(dichotomy_polynomial(lam, params)) - ratio) <= 1e-12


# ---------------------------------------------------------------------------
# 守恆量
# ---------------------------------------------------------------------------
def test_conserved_matches_direct_summation(rng):
    params = make_params(1, 7)
    grid = Grid(1, 1.0, 8)
    values = rng.normal(size=8) + 1j * rng.normal(size=8)
    u = Field(values, grid, params)

    n, h = 8, grid.spacing
    j = np.arange(n)
    dft = np.exp(-2j * np.pi * np.outer(j, j) / n)
    k = 2 * np.pi * np.fft.fftfreq(n, d=h)
    k[n // 2] = 0.0
    derivative = np.conj(dft) @ (1j * k * (dft @ values)) / n

    mass = h * np.sum(np.abs(values) ** 2)
    grad = h * np.sum(np.abs(derivative) ** 2)
    lp1 = h * np.sum(np.abs(values) ** 8)
    momentum = h * np.sum(np.imag(np.conj(values) * derivative))

    cq = conserved(u)
    assert cq.mass == pytest.approx(mass, rel=1e-12)
    assert cq.grad_norm_sq == pytest.approx(grad, rel=1e-12)
    assert cq.lp1_norm == pytest.approx(lp1, rel=1e-12)
    assert cq.energy == pytest.approx(grad / 2 - lp1 / 8, rel=1e-12)
    assert cq.momentum[0] == pytest.approx(momentum, rel=1e-12, abs=1e-14)


def test_field_rejects_non_finite(params_1d, grid_1d):
    values = np.zeros(grid_1d.shape)
    values[3] = np.nan
    with pytest.raises(NonFiniteError):
        Field(values, grid_1d, params_1d)


def test_field_rejects_wrong_shape(params_1d, grid_1d):
    with pytest.raises(ValidationError):
        Field(np.zeros(100), grid_1d, params_1d)


def test_field_values_are_read_only(Q_1d):
    with pytest.raises(ValueError):
        Q_1d.profile.values[0] = 1.0


# ---------------------------------------------------------------------------
# η、ratio 與分類
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("c", [0.5, 1.2, 2.0])
def test_eta_of_scaled_ground_state(Q_1d, c):
    u = Q_1d.profile.with_values(c * Q_1d.profile.values)
    assert eta(u, Q_1d) == pytest.approx(c ** 6, rel=1e-10)


@pytest.mark.parametrize("c", [0.5, 0.9, 1.2, 1.5])
def test_ratio_of_scaled_ground_state(Q_1d, c):
    u = Q_1d.profile.with_values(c * Q_1d.profile.values)
    assert energy_mass_ratio(u, Q_1d) == pytest.approx(c ** 10 * (3 * c ** 2 - 2 * c ** 8), rel=1e-6)


def test_half_ground_state_is_global_bounded(Q_1d):
    u = Q_1d.profile.with_values(0.5 * Q_1d.profile.values)
    report = classify(u, Q_1d)
    assert report.verdict == Verdict.GLOBAL_BOUNDED
    # 在孤立子軌道上 GN 取等號，所以 η(0) 恰為 λ₋
    assert report.lambda_minus == pytest.approx(report.eta, rel=1e-6)


def test_ground_state_itself_is_boundary(Q_1d):
    assert classify(Q_1d.profile, Q_1d).verdict == Verdict.BOUNDARY_INDETERMINATE


@pytest.mark.parametrize("c", [1.2, 1.3, 1.5, 2.0])
def test_supercritical_multiples_are_case_two(Q_1d, c):
    u = Q_1d.profile.with_values(c * Q_1d.profile.values)
    report = classify(u, Q_1d)
    assert report.verdict == Verdict.POSSIBLE_DIVERGENCE
    assert report.negative_ratio
    assert report.lambda_minus == 0.0
    assert report.lambda_plus > 1.0


def test_fast_moving_ground_state_is_above_threshold(Q_1d):
    boosted = galilean_boost(Q_1d.profile, [3.0])
    assert classify(boosted, Q_1d).verdict == Verdict.ABOVE_THRESHOLD


@pytest.mark.slow
def test_three_dimensional_cubic_examples(Q_3d):
    half = classify(Q_3d.profile.with_values(0.5 * Q_3d.profile.values), Q_3d)
    assert half.eta == pytest.approx(0.25, rel=1e-10)
    assert half.verdict == Verdict.GLOBAL_BOUNDED

    # ratio(cQ) = c²(3c² - 2c⁴)
    above = classify(Q_3d.profile.with_values(1.2 * Q_3d.profile.values), Q_3d)
    assert above.ratio == pytest.approx(0.248832, rel=1e-6)
    assert above.eta == pytest.approx(1.44, rel=1e-10)
    assert above.verdict == Verdict.POSSIBLE_DIVERGENCE


def test_dichotomy_bounds_sharp_on_orbit(Q_1d, rng, params_1d, grid_1d):
    on_orbit = dichotomy_bounds(Q_1d.profile.with_values(0.7 * Q_1d.profile.values), Q_1d)
    assert on_orbit["lower_slack"] == pytest.approx(0.0, abs=1e-6 * on_orbit["ratio"])
    assert on_orbit["upper_slack"] > 0
    for _ in range(10):
        bounds = dichotomy_bounds(random_field(rng, grid_1d, params_1d), Q_1d)
        assert bounds["upper_slack"] >= 0
        assert bounds["lower_slack"] >= -1e-8 * abs(bounds["ratio"])


# ---------------------------------------------------------------------------
# Galilean 變換
# ---------------------------------------------------------------------------
def test_zero_boost_is_identity(Q_1d):
    assert galilean_boost(Q_1d.profile, [0.0]) is Q_1d.profile


def test_unit_boost_of_ground_state(Q_1d):
    boosted = conserved(galilean_boost(Q_1d.profile, [1.0]))
    M, E = Q_1d.norms.mass, Q_1d.norms.energy
    assert boosted.mass == pytest.approx(M, rel=1e-12)
    assert boosted.momentum[0] == pytest.approx(M, rel=1e-10)
    assert boosted.energy == pytest.approx(E + M / 2, rel=1e-10)


def test_galilean_identities_on_random_fields(rng, params_1d, grid_1d):
    for _ in range(20):
        u = random_field(rng, grid_1d, params_1d)
        cq = conserved(u)
        boosted, xi0 = zero_momentum_frame(u)
        cb = conserved(boosted)
        assert cb.mass == pytest.approx(cq.mass, rel=1e-12)
        assert abs(cb.momentum[0]) <= 1e-10 * cq.mass
        expected = cq.energy - 0.5 * cq.momentum[0] ** 2 / cq.mass
        assert cb.energy == pytest.approx(expected, rel=1e-10, abs=1e-12 * cq.grad_norm_sq)


def test_zero_momentum_frame_of_real_field(Q_1d):
    frame, xi0 = zero_momentum_frame(Q_1d.profile)
    assert frame is Q_1d.profile
    assert np.all(xi0 == 0)


def test_zero_momentum_frame_undoes_boost(Q_1d):
    moving = galilean_boost(Q_1d.profile, [2.0])
    recovered, xi0 = zero_momentum_frame(moving)
    assert xi0[0] == pytest.approx(-2.0, abs=1e-10)
    assert np.max(np.abs(recovered.values - Q_1d.profile.values)) < 1e-10


def test_zero_momentum_frame_minimizes_energy(rng, params_1d, grid_1d):
    u = random_field(rng, grid_1d, params_1d)
    frame, xi0 = zero_momentum_frame(u)
    best = conserved(frame).energy
    for offset in np.linspace(-1.0, 1.0, 10):
        trial = conserved(galilean_boost(u, xi0 + offset)).energy
        assert best <= trial + 1e-12 * abs(trial)


def test_zero_momentum_frame_requires_mass(params_1d, grid_1d):
    with pytest.raises(ZeroMassError):
        zero_momentum_frame(Field(np.zeros(grid_1d.shape), grid_1d, params_1d))


def test_galilean_reclassify_reports_both_frames(Q_1d):
    u = galilean_boost(Q_1d.profile.with_values(0.6 * Q_1d.profile.values), [0.4])
    report = galilean_reclassify(u, Q_1d)
    assert report.xi0[0] == pytest.approx(-0.4, abs=1e-10)
    assert report.energy_shift < 0
    assert report.gradient_identity_residual < 1e-10
    assert report.boosted.verdict == Verdict.GLOBAL_BOUNDED
    assert report.case_preserved is True


# ---------------------------------------------------------------------------
# 尺度變換
# ---------------------------------------------------------------------------
def test_mass_rescale_identity(Q_1d):
    assert mass_rescale(Q_1d.profile, Q_1d) is Q_1d.profile


def test_mass_rescale_matches_ground_state_mass(Q_1d):
    u = Q_1d.profile.with_values(1.1 * Q_1d.profile.values)
    v = mass_rescale(u, Q_1d)
    assert conserved(v).mass == pytest.approx(Q_1d.norms.mass, rel=1e-8)


def test_mass_rescale_preserves_eta(rng, params_1d, grid_1d, Q_1d):
    for _ in range(5):
        u = random_field(rng, grid_1d, params_1d)
        # 質量接近 M(Q)，使 β 接近 1
        u = u.with_values(u.values * np.sqrt(Q_1d.norms.mass / conserved(u).mass * rng.uniform(0.8, 1.25)))
        v = mass_rescale(u, Q_1d)
        assert conserved(v).mass == pytest.approx(Q_1d.norms.mass, rel=1e-8)
        assert eta(v, Q_1d) == pytest.approx(eta(u, Q_1d), rel=1e-8)


def test_mass_rescale_alias_guard(Q_1d):
    # 1D p=7 時 2Q 的 β = 4^3 = 64，格點無法解析
    with pytest.raises(AliasRiskError):
        mass_rescale(Q_1d.profile.with_values(2.0 * Q_1d.profile.values), Q_1d)


@pytest.mark.slow
def test_mass_rescale_rejects_unresolved_result_in_3d(Q_3d):
    # 3D 立方時 2Q 的 β = 4，長度尺度檢查會通過，但重新取樣後的質量對不上
    with pytest.raises(AliasRiskError, match="質量偏差"):
        mass_rescale(Q_3d.profile.with_values(2.0 * Q_3d.profile.values), Q_3d)


def test_mass_rescale_requires_mass(Q_1d, params_1d, grid_1d):
    with pytest.raises(ZeroMassError):
        mass_rescale(Field(np.zeros(grid_1d.shape), grid_1d, params_1d), Q_1d)


def test_interpolation_matrices_are_not_hoarded(grid_1d):
    x = grid_1d.axis
    values = np.exp(-x ** 2)
    spectral._interpolation_matrix.cache_clear()
    for scale in (0.8, 0.9, 1.1, 1.2, 1.3):
        scaled = spectral.dilate_values(values, grid_1d, scale)
        assert np.max(np.abs(scaled - np.exp(-(scale * x) ** 2))) < 1e-12
    info = spectral._interpolation_matrix.cache_info()
    assert info.maxsize <= 2
    assert info.currsize <= 2


@pytest.mark.parametrize("scale", [0.5, 2.0])
def test_scale_invariance_of_eta_and_ratio(Q_1d, params_1d, grid_1d, scale):
    x = grid_1d.axis
    u = Field(1.2 * np.exp(-x ** 2) * np.exp(0.3j * x), grid_1d, params_1d)
    scaled = dilate(u, scale)
    assert eta(scaled, Q_1d) == pytest.approx(eta(u, Q_1d), rel=1e-7)
    assert energy_mass_ratio(scaled, Q_1d) == pytest.approx(energy_mass_ratio(u, Q_1d), rel=1e-7)
