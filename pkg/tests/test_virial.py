import numpy as np
import pytest
from scipy.integrate import trapezoid

from nls_virial.diagnostics import virial
from nls_virial.diagnostics.virial import (
    BoundVariant,
    VirialConstants,
    eta_exterior,
    exterior_gn_check,
    gamma_window,
    local_variance_rate,
    local_virial,
    localization_bound,
    localized_variance,
    make_cutoff,
    radial_gn_report,
    rho_dyadic,
    tb_localized,
    tb_radial,
    tb_variance,
    variance,
    variance_rate,
    virial_denominator,
)
from nls_virial.invariants.params_invariants import Field, make_params
from nls_virial.utils import spectral
from nls_virial.utils.errors import (
    BoundaryMassError,
    GammaOutOfWindowError,
    LambdaNotSupercriticalError,
    NotCase2Error,
    NotRadialError,
    RadiusTooLargeError,
    RadiusTooSmallError,
    ValidationError,
)
from nls_virial.utils.spectral import Grid


def _scaled(Q, c):
    return Q.profile.with_values(c * Q.profile.values)


def _gaussian(grid, params, amplitude=1.0, width=1.0, center=0.0, chirp=0.0):
    x = grid.axis
    return Field(amplitude * np.exp(-((x - center) / width) ** 2) * np.exp(1j * chirp * x ** 2), grid, params)


# ---------------------------------------------------------------------------
# 變異數
# ---------------------------------------------------------------------------
def test_variance_of_zero_field(params_1d, grid_1d):
    zero = Field(np.zeros(grid_1d.shape), grid_1d, params_1d)
    assert variance(zero) == 0.0
    assert variance_rate(zero) == 0.0


def test_variance_under_translation(params_1d, grid_1d):
    u = _gaussian(grid_1d, params_1d, amplitude=0.7, width=1.3, chirp=0.2)
    shift = 1.5
    moved = u.with_values(spectral.translate(u.values, grid_1d, [shift]))
    density = np.abs(u.values) ** 2
    first_moment = grid_1d.integrate(grid_1d.axis * density)
    mass = grid_1d.integrate(density)
    expected = variance(u) + 2 * shift * first_moment + shift ** 2 * mass
    assert variance(moved) == pytest.approx(expected, rel=1e-10)


def test_variance_of_closed_form_soliton(Q_1d):
    x = np.linspace(-40.0, 40.0, 400001)
    beta = Q_1d.coefficient
    q = (4.0 * beta) ** (1.0 / 6.0) * (1.0 / np.cosh(3.0 * np.sqrt(beta) * x)) ** (1.0 / 3.0)
    assert variance(Q_1d.profile) == pytest.approx(trapezoid(x ** 2 * q ** 2, x), rel=1e-8)


def test_variance_rate_of_real_field_is_zero(Q_1d):
    assert variance_rate(Q_1d.profile) == 0.0


def test_variance_rate_of_chirped_gaussian(params_1d, grid_1d):
    # u = e^{i x²} g  =>  Im∫ū x·∇u = 2∫|x|²g²
    u = _gaussian(grid_1d, params_1d, width=1.0, chirp=1.0)
    assert variance_rate(u) == pytest.approx(2.0 * variance(u), rel=1e-8)


def test_boundary_mass_rejected(params_1d, grid_1d):
    u = _gaussian(grid_1d, params_1d, center=15.0)
    with pytest.raises(BoundaryMassError):
        variance(u)


# ---------------------------------------------------------------------------
# 變異數上界
# ---------------------------------------------------------------------------
def test_variance_bound_for_real_data(Q_1d):
    report = tb_variance(_scaled(Q_1d, 1.5), Q_1d)
    assert report.variant == BoundVariant.VARIANCE
    assert report.r0_prime == 0.0
    assert report.t_b == pytest.approx(np.sqrt(2.0 * report.r0), rel=1e-14)
    assert abs(report.root_residual) <= 1e-10 * report.r0
    assert report.beta == pytest.approx(1.5 ** 6, rel=1e-10)
    assert report.t_b_unscaled == pytest.approx(report.beta ** 2 * report.t_b, rel=1e-14)
    assert report.denominator > 0


@pytest.mark.parametrize("c", [1.3, 2.0])
def test_variance_bound_for_other_multiples(Q_1d, c):
    report = tb_variance(_scaled(Q_1d, c), Q_1d)
    assert report.t_b > 0
    assert report.lambda_plus > 1


def test_variance_bound_requires_case_two(Q_1d):
    with pytest.raises(NotCase2Error):
        tb_variance(_scaled(Q_1d, 0.5), Q_1d)


def test_denominator_positive_beyond_one():
    for N, p in [(1, 7.0), (2, 5.0), (3, 3.0), (2, 3.5)]:
        params = make_params(N, p)
        assert virial_denominator(1.0, params) == pytest.approx(0.0, abs=1e-12)
        for lam in np.linspace(1.001, 5.0, 30):
            assert virial_denominator(lam, params) > 0


# ---------------------------------------------------------------------------
# 截斷函數
# ---------------------------------------------------------------------------
def test_bridge_polynomial_joins_smoothly():
    f = virial._BRIDGE
    assert [float(poly(1.0)) for poly in f] == pytest.approx([1.0, 2.0, 2.0, 0.0, 0.0], abs=1e-4)
    assert [float(poly(2.0)) for poly in f] == pytest.approx([0.0] * 5, abs=1e-4)


def test_cutoff_is_exact_inside_and_zero_outside(grid_1d):
    cut = make_cutoff(grid_1d, 4.0)
    radius = grid_1d.radius
    inner = radius <= 4.0
    assert np.allclose(cut.weight[inner], radius[inner] ** 2, rtol=1e-14, atol=0)
    assert np.all(cut.lap[inner] == 2.0)
    outer = radius >= 8.0
    for arr in (cut.weight, cut.gradient_factor, cut.hess_rr, cut.hess_tt, cut.lap, cut.bilap):
        assert np.all(arr[outer] == 0.0)
    assert np.all(cut.phi <= (radius / 4.0) ** 2 + 1e-12)


def test_cutoff_hessian_trace_matches_laplacian():
    grid = Grid(2, 12.0, 64)
    cut = make_cutoff(grid, 3.0)
    trace = sum(cut.hessian()[j, j] for j in range(2))
    assert np.max(np.abs(trace - cut.lap)) <= 1e-12


def test_cutoff_radius_limits(grid_1d):
    with pytest.raises(RadiusTooLargeError):
        make_cutoff(grid_1d, 11.0)
    with pytest.raises(RadiusTooSmallError):
        make_cutoff(grid_1d, 0.0)


def test_cutoff_is_cached(grid_1d):
    assert make_cutoff(grid_1d, 4.0) is make_cutoff(grid_1d, 4.0)


# ---------------------------------------------------------------------------
# 局部 virial
# ---------------------------------------------------------------------------
def test_local_virial_of_zero_field(params_1d, grid_1d):
    zero = Field(np.zeros(grid_1d.shape), grid_1d, params_1d)
    assert tuple(local_virial(zero, make_cutoff(grid_1d, 4.0))) == (0.0, 0.0, 0.0)


def test_localization_error_vanishes_for_interior_field(params_1d, grid_1d):
    u = _gaussian(grid_1d, params_1d, amplitude=1.5, width=0.7, chirp=0.3)
    cut = make_cutoff(grid_1d, 8.0)
    result = local_virial(u, cut)
    assert result.z_R == pytest.approx(variance(u), rel=1e-12)
    scale = max(abs(result.z_R_second), u.grid.integrate(sum(np.abs(g) ** 2 for g in u.gradient())))
    assert abs(result.A_R) <= 1e-8 * scale


def test_local_variance_rate_inside_cutoff(params_1d, grid_1d):
    # 半徑內 a = |x|²，所以 z_R' = 4 Im∫ū x·∇u
    u = _gaussian(grid_1d, params_1d, width=1.0, chirp=1.0)
    cut = make_cutoff(grid_1d, 8.0)
    assert local_variance_rate(u, cut) == pytest.approx(4.0 * variance_rate(u), rel=1e-10)
    assert local_variance_rate(_gaussian(grid_1d, params_1d), cut) == 0.0


def test_localization_error_for_ground_state(Q_1d):
    cut = make_cutoff(Q_1d.grid, 8.0)
    result = local_virial(Q_1d.profile, cut, C1=10.0)
    # 截斷函數的高階導數只出現在單邊估計的常數裡
    assert result.A_R <= localization_bound(Q_1d.profile, 8.0, 1e5)
    assert abs(result.A_R) <= 1e-3 * Q_1d.norms.grad_norm_sq


# ---------------------------------------------------------------------------
# γ 窗口
# ---------------------------------------------------------------------------
def test_gamma_window_example(params_1d):
    assert gamma_window(1.5, params_1d) == pytest.approx(24.0, rel=1e-14)


def test_gamma_window_requires_supercritical_lambda(params_1d):
    with pytest.raises(LambdaNotSupercriticalError):
        gamma_window(1.0, params_1d)


def test_gamma_window_near_one_is_small_positive(params_1d):
    value = gamma_window(1.0 + 1e-9, params_1d)
    assert 0.0 < value < 1e-6


def test_reduced_denominator_positive_on_lattice():
    for N, p in [(1, 7.0), (2, 5.0), (3, 3.0)]:
        params = make_params(N, p)
        for lam in np.linspace(1.01, 3.0, 20):
            g_max = gamma_window(lam, params)
            for fraction in np.linspace(0.01, 0.99, 20):
                gamma = fraction * g_max
                assert virial_denominator(lam, params) - gamma * lam ** 2 > 0


# ---------------------------------------------------------------------------
# 局部化與徑向上界
# ---------------------------------------------------------------------------
def test_eta_exterior(Q_1d, params_1d, grid_1d):
    u = _gaussian(grid_1d, params_1d, width=0.5)
    assert eta_exterior(u, Q_1d, 8.0) < 1e-12
    full = eta_exterior(Q_1d.profile, Q_1d, 0.0)
    assert full == pytest.approx(1.0, rel=1e-12)
    values = [eta_exterior(Q_1d.profile, Q_1d, R) for R in (0.5, 1.0, 2.0, 4.0)]
    assert values == sorted(values, reverse=True)


def test_localized_bound_dominates_variance_bound(Q_1d):
    u = _scaled(Q_1d, 1.5)
    loc = tb_localized(u, Q_1d, gamma=12.0, R=8.0)
    var = tb_variance(u, Q_1d)
    assert loc.variant == BoundVariant.LOCALIZED
    assert loc.gamma_max == pytest.approx(24.0, rel=1e-12)
    assert loc.t_b >= var.t_b
    assert abs(loc.root_residual) <= 1e-10 * loc.r0


def test_localized_bound_rejects_bad_gamma_and_radius(Q_1d):
    u = _scaled(Q_1d, 1.5)
    with pytest.raises(GammaOutOfWindowError):
        tb_localized(u, Q_1d, gamma=30.0, R=8.0)
    with pytest.raises(RadiusTooSmallError):
        tb_localized(u, Q_1d, gamma=12.0, R=0.5)


def test_radial_bound_matches_localized_with_same_constant(Q_2d):
    u = _scaled(Q_2d, 1.5)
    radial = tb_radial(u, Q_2d, gamma=1.0, R=4.0, C_gamma=1.0, C_Q=0.5)
    localized = tb_localized(u, Q_2d, gamma=1.0, R=4.0, C=1.0)
    assert radial.variant == BoundVariant.RADIAL
    assert radial.t_b == pytest.approx(localized.t_b, rel=1e-12)
    assert set(radial.radial_gn) >= {"lhs", "rhs", "slack", "holds"}


def test_radial_bound_rejects_translated_data(Q_2d):
    u = _scaled(Q_2d, 1.5)
    moved = u.with_values(spectral.translate(u.values, u.grid, [0.5, 0.0]))
    with pytest.raises(NotRadialError):
        tb_radial(moved, Q_2d, gamma=1.0, R=4.0)


def test_radial_gn_holds_for_gaussian(Q_2d, params_2d):
    grid = Q_2d.grid
    u = Field(np.exp(-grid.radius ** 2), grid, params_2d)
    report = radial_gn_report(u, Q_2d, gamma=1.0, R=5.0)
    assert report["holds"]
    assert report["slack"] > 0


def test_rho_dyadic(Q_2d, params_2d):
    grid = Q_2d.grid
    zero = Field(np.zeros(grid.shape), grid, params_2d)
    assert rho_dyadic(zero, 1.0) == 0.0

    u = Q_2d.profile
    mass = Q_2d.norms.mass
    for R in (0.5, 1.0, 2.0):
        assert rho_dyadic(u, R) <= mass / R ** (2 * params_2d.s_c)

    density = np.abs(u.values) ** 2
    expected, current = 0.0, 1.0
    while True:
        annulus = (grid.radius >= current) & (grid.radius <= 2 * current)
        expected = max(expected, grid.integrate(density[annulus]) / current ** (2 * params_2d.s_c))
        current *= 2 ** 0.25
        if 2 * current > grid.extent:
            break
    assert rho_dyadic(u, 1.0) == pytest.approx(expected, rel=1e-14)


def test_exterior_gn_check_reports_both_sides(Q_1d):
    result = exterior_gn_check(Q_1d.profile, Q_1d.cgn, 2.0)
    mask = Q_1d.grid.radius >= 2.0
    lp1 = Q_1d.grid.integrate(np.abs(Q_1d.profile.values[mask]) ** 8)
    assert result["lhs"] == pytest.approx(lp1, rel=1e-12)
    assert result["slack"] == pytest.approx(result["rhs"] - result["lhs"])


def test_invalid_constants():
    with pytest.raises(ValidationError):
        VirialConstants(C1=0.0)


def test_localized_variance_bounded_by_variance(Q_1d):
    cut = make_cutoff(Q_1d.grid, 3.0)
    assert localized_variance(Q_1d.profile, cut) <= variance(Q_1d.profile)
