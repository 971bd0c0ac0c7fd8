"""
virial.py
變異數與局部化變異數、virial 恆等式，以及三種爆破時間上界 (變異數、局部化、徑向)。

質量正規化以 NLS 尺度律精確處理，不重新取樣:
    v(x) = β^{2/(p-1)} u(βx)，μ = M(Q)/M(u) = β^{4/(p-1)-N}
    ‖xv‖² = μβ^{-2}‖xu‖²，  Im∫v̄ x·∇v = μ Im∫ū x·∇u
    z_{R}(v) = μβ^{-2} z_{βR}(u)，  z'_{R}(v) = μ z'_{βR}(u)
    v 的爆破時間 T_v 對應 u 的 β²T_v
半徑 R 一律以原始座標 (u 的座標) 給定；正規化座標中的半徑為 R/β。
"""

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial

from nls_virial.invariants.params_invariants import (
    DichotomyReport,
    Field,
    ProblemParams,
    Verdict,
    classify,
    conserved,
    mass_scaling,
)
from nls_virial.solvers.groundstate import GroundState
from nls_virial.utils import spectral
from nls_virial.utils.errors import (
    BoundaryMassError,
    GammaOutOfWindowError,
    LambdaNotSupercriticalError,
    NegativeDenominatorError,
    NotCase2Error,
    NotRadialError,
    RadiusTooLargeError,
    RadiusTooSmallError,
    ValidationError,
)
from nls_virial.utils.spectral import Grid

logger = logging.getLogger(__name__)

BOUNDARY_MASS_FRACTION = 1e-6
RADIAL_TOLERANCE = 1e-8
RHO_LADDER_STEP = 2.0 ** 0.25


@dataclass(frozen=True)
class VirialConstants:
    """各上界中的自由常數；C 為局部化上界分母中的常數"""

    C: float = 1.0
    C1: float = 10.0
    C2: float = 1.0
    C_gamma: float = 1.0
    C_Q: float = 1.0

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not value > 0:
                raise ValidationError(f"常數 {name} 必須為正: {value}")

    def as_dict(self) -> dict:
        return {"C": self.C, "C1": self.C1, "C2": self.C2, "C_gamma": self.C_gamma, "C_Q": self.C_Q}


class BoundVariant(str, Enum):
    VARIANCE = "Variance"
    LOCALIZED = "Localized"
    RADIAL = "Radial"


@dataclass(frozen=True)
class VirialReport:
    """
    r0、r0_prime 與 t_b 皆屬於質量正規化後的場 (時間也已正規化)，
    t_b_unscaled = β² t_b 為原始時間下的上界。
    """

    variant: BoundVariant
    r0: float
    r0_prime: float
    t_b: float
    t_b_unscaled: float
    lambda_plus: float
    denominator: float
    beta: float
    mass_factor: float
    gamma: Optional[float] = None
    gamma_max: Optional[float] = None
    R: Optional[float] = None
    radial_gn: Optional[dict] = None

    @property
    def root_residual(self) -> float:
        """t_b 代回 -t²/2 + r'(0)t + r(0) 的殘差"""
        return -0.5 * self.t_b ** 2 + self.r0_prime * self.t_b + self.r0

    def as_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "r0": self.r0,
            "r0_prime": self.r0_prime,
            "t_b": self.t_b,
            "t_b_unscaled": self.t_b_unscaled,
            "lambda_plus": self.lambda_plus,
            "denominator": self.denominator,
            "beta": self.beta,
            "mass_factor": self.mass_factor,
            "gamma": self.gamma,
            "gamma_max": self.gamma_max,
            "R": self.R,
            "radial_gn": self.radial_gn,
            "root_residual": self.root_residual,
        }


# ---------------------------------------------------------------------------
# 變異數
# ---------------------------------------------------------------------------
def boundary_mass_fraction(u: Field) -> float:
    """半盒子 |x| > L/2 之外的質量比例"""
    density = np.abs(u.values) ** 2
    total = np.sum(density)
    if total == 0:
        return 0.0
    return float(np.sum(density[u.grid.radius > 0.5 * u.grid.extent]) / total)


def _check_boundary(u: Field) -> None:
    fraction = boundary_mass_fraction(u)
    if fraction >= BOUNDARY_MASS_FRACTION:
        raise BoundaryMassError(f"|x| > L/2 之外的質量比例 {fraction:.3e} >= {BOUNDARY_MASS_FRACTION}")


def variance(u: Field, check_boundary: bool = True) -> float:
    """∫|x|²|u|²，x 由盒子中心量起"""
    if check_boundary:
        _check_boundary(u)
    return u.grid.integrate(u.grid.radius ** 2 * np.abs(u.values) ** 2)


def variance_rate(u: Field, check_boundary: bool = True) -> float:
    """Im∫(x·∇u)ū；‖xu‖₂² 的時間導數為其 4 倍"""
    if check_boundary:
        _check_boundary(u)
    if u.is_real:
        return 0.0
    x_dot_grad = sum(x * g for x, g in zip(u.grid.coords, u.gradient()))
    return u.grid.integrate(np.imag(np.conj(u.values) * x_dot_grad))


def _roots_time(r0: float, r0_prime: float) -> float:
    return r0_prime + float(np.sqrt(r0_prime ** 2 + 2.0 * r0))


def virial_denominator(lambda_plus: float, params: ProblemParams) -> float:
    """(-16ω₁λ² + 4N(p-1)ω₂λ^{N(p-1)/2})，乘上 E(Q) 之前的部分"""
    npm = params.N * (params.p - 1.0)
    return -16.0 * params.omega1 * lambda_plus ** 2 + 4.0 * npm * params.omega2 * lambda_plus ** params.virial_power


def _case2_report(u: Field, Q: GroundState) -> DichotomyReport:
    report = classify(u, Q)
    if report.verdict != Verdict.POSSIBLE_DIVERGENCE:
        raise NotCase2Error(f"資料不屬於第二種情形 (verdict={report.verdict.value})")
    return report


def _mass_factors(u_mass: float, Q: GroundState) -> Tuple[float, float]:
    beta = mass_scaling(u_mass, Q.norms.mass, Q.params)
    return beta, Q.norms.mass / u_mass


def tb_variance(u: Field, Q: GroundState) -> VirialReport:
    """
    r(0) = ‖xv‖²/D，r'(0) = 4 Im∫v̄ x·∇v / D，t_b = r'(0) + sqrt(r'(0)² + 2r(0))，
    D = (-16ω₁λ₊² + 4N(p-1)ω₂λ₊^{N(p-1)/2}) E(Q)，v 為質量正規化後的場。

    :raises NotCase2Error: 分類結果不是 PossibleDivergence
    :raises BoundaryMassError: 半盒子外質量過多
    :raises NegativeDenominatorError: D <= 0
    """
    report = _case2_report(u, Q)
    params = u.params
    lam = report.lambda_plus
    denominator = virial_denominator(lam, params) * Q.norms.energy
    if not denominator > 0:
        raise NegativeDenominatorError(f"D={denominator} <= 0 (λ₊={lam})")

    beta, mu = _mass_factors(conserved(u).mass, Q)
    r0 = mu * beta ** -2 * variance(u) / denominator
    r0_prime = 4.0 * mu * variance_rate(u) / denominator
    t_b = _roots_time(r0, r0_prime)
    logger.info("[Virial] variance 上界: λ₊=%.10g r0=%.6g r0'=%.6g t_b=%.6g (原始時間 %.6g)",
                lam, r0, r0_prime, t_b, beta ** 2 * t_b)
    return VirialReport(
        variant=BoundVariant.VARIANCE,
        r0=r0,
        r0_prime=r0_prime,
        t_b=t_b,
        t_b_unscaled=beta ** 2 * t_b,
        lambda_plus=lam,
        denominator=denominator,
        beta=beta,
        mass_factor=mu,
    )


# ---------------------------------------------------------------------------
# 截斷函數
# ---------------------------------------------------------------------------
def _blend_polynomials() -> Tuple[Polynomial, ...]:
    # S(s) = s⁵(126 - 420s + 540s² - 315s³ + 70s⁴)，S 的一到四階導數在 s = 0, 1 皆為零
    smoothstep = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
    shifted = smoothstep(Polynomial([-1.0, 1.0]))
    bridge = Polynomial([0.0, 0.0, 1.0]) * (1.0 - shifted)
    return tuple(bridge.deriv(k) for k in range(5))


_BRIDGE = _blend_polynomials()


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    """
    權重 a(x) = R²φ(|x|/R) 及其導數在格點上的取樣。

    - gradient_factor: ∇a = gradient_factor · x
    - hess_rr, hess_tt: ∂ⱼ∂ₖa = hess_rr x̂ⱼx̂ₖ + hess_tt (δⱼₖ - x̂ⱼx̂ₖ)
    - lap: Δa，bilap: Δ²a
    """

    R: float
    grid: Grid
    weight: np.ndarray
    gradient_factor: np.ndarray
    hess_rr: np.ndarray
    hess_tt: np.ndarray
    lap: np.ndarray
    bilap: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.weight / self.R ** 2

    def hessian(self) -> np.ndarray:
        grid = self.grid
        radius = grid.radius
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = [np.where(radius > 0, x / radius, 0.0) for x in grid.coords]
        tensor = np.empty((grid.dim, grid.dim) + grid.shape)
        for j in range(grid.dim):
            for k in range(grid.dim):
                delta = self.hess_tt if j == k else 0.0
                tensor[j, k] = delta + (self.hess_rr - self.hess_tt) * unit[j] * unit[k]
        return tensor


_cutoff_cache: Dict[Tuple[Grid, float], CutoffProfile] = {}
_cutoff_lock = threading.Lock()


def _build_cutoff(grid: Grid, R: float) -> CutoffProfile:
    N = grid.dim
    r2 = sum(x ** 2 for x in grid.coords) * np.ones(grid.shape)
    radius = np.sqrt(r2)
    rho = radius / R
    inner = rho <= 1.0
    bridge = (rho > 1.0) & (rho < 2.0)

    weight = np.zeros(grid.shape)
    gradient_factor = np.zeros(grid.shape)
    hess_rr = np.zeros(grid.shape)
    hess_tt = np.zeros(grid.shape)
    lap = np.zeros(grid.shape)
    bilap = np.zeros(grid.shape)

    # |x| <= R: a = |x|²
    weight[inner] = r2[inner]
    gradient_factor[inner] = 2.0
    hess_rr[inner] = 2.0
    hess_tt[inner] = 2.0
    lap[inner] = 2.0 * N

    s = rho[bridge]
    f0, f1, f2, f3, f4 = (poly(s) for poly in _BRIDGE)
    weight[bridge] = R ** 2 * f0
    gradient_factor[bridge] = R * f1 / radius[bridge]
    hess_rr[bridge] = f2
    hess_tt[bridge] = f1 / s
    lap[bridge] = f2 + (N - 1) * f1 / s
    g1 = f3 + (N - 1) * (f2 / s - f1 / s ** 2)
    g2 = f4 + (N - 1) * (f3 / s - 2.0 * f2 / s ** 2 + 2.0 * f1 / s ** 3)
    bilap[bridge] = (g2 + (N - 1) * g1 / s) / R ** 2

    return CutoffProfile(R, grid, weight, gradient_factor, hess_rr, hess_tt, lap, bilap)


def make_cutoff(grid: Grid, R: float) -> CutoffProfile:
    """
    :raises RadiusTooSmallError: R <= 0
    :raises RadiusTooLargeError: 2R 超出半盒長 L
    """
    if not R > 0:
        raise RadiusTooSmallError(f"截斷半徑必須為正: R={R}")
    if 2.0 * R > grid.extent:
        raise RadiusTooLargeError(f"2R={2.0 * R:.6g} 超出盒子半邊長 L={grid.extent}")
    key = (grid, float(R))
    with _cutoff_lock:
        cached = _cutoff_cache.get(key)
    if cached is not None:
        return cached
    profile = _build_cutoff(grid, float(R))
    with _cutoff_lock:
        return _cutoff_cache.setdefault(key, profile)


# ---------------------------------------------------------------------------
# 局部 virial
# ---------------------------------------------------------------------------
class LocalVirial(NamedTuple):
    z_R: float
    z_R_second: float
    A_R: float


def localized_variance(u: Field, cut: CutoffProfile) -> float:
    return u.grid.integrate(cut.weight * np.abs(u.values) ** 2)


def local_variance_rate(u: Field, cut: CutoffProfile) -> float:
    """z_R' = 2 Im∫ū ∇a·∇u"""
    if u.is_real:
        return 0.0
    grad_a_dot = sum(x * g for x, g in zip(u.grid.coords, u.gradient())) * cut.gradient_factor
    return 2.0 * u.grid.integrate(np.imag(np.conj(u.values) * grad_a_dot))


def _exterior(u: Field, R: float):
    mask = u.grid.radius >= R
    modulus = np.abs(u.values)
    mass = u.grid.integrate(modulus[mask] ** 2)
    lp1 = u.grid.integrate(modulus[mask] ** (u.params.p + 1.0))
    grad = u.grid.integrate(sum(np.abs(g[mask]) ** 2 for g in u.gradient()))
    return mass, grad, lp1


def localization_bound(u: Field, R: float, C1: float) -> float:
    """C₁(R^{-2}‖u‖²_{L²(|x|>=R)} + ‖u‖^{p+1}_{L^{p+1}(|x|>=R)})"""
    mass, _, lp1 = _exterior(u, R)
    return C1 * (mass / R ** 2 + lp1)


def local_virial(u: Field, cut: CutoffProfile, C1: Optional[float] = None) -> LocalVirial:
    """
    z_R'' = 4∫∂ⱼ∂ₖa Re(∂ⱼū∂ₖu) - (2(p-1)/(p+1))∫Δa|u|^{p+1} - ∫Δ²a|u|²
    A_R   = z_R'' - [4N(p-1)E(u) - (2N(p-1)-8)‖∇u‖₂²]

    給定 C1 時檢查單邊估計 A_R <= C1(R^{-2}‖u‖²_{ext} + ‖u‖^{p+1}_{ext})，違反時記錄警告。
    """
    grid, params = u.grid, u.params
    p = params.p
    modulus_sq = np.abs(u.values) ** 2
    grads = u.gradient()
    grad_sq = sum(np.abs(g) ** 2 for g in grads)
    radius = grid.radius
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = sum(x * g for x, g in zip(grid.coords, grads))
        radial = np.where(radius > 0, radial / radius, 0.0)
    radial_sq = np.abs(radial) ** 2

    hess_term = 4.0 * grid.integrate(cut.hess_tt * grad_sq + (cut.hess_rr - cut.hess_tt) * radial_sq)
    nonlinear_term = 2.0 * (p - 1.0) / (p + 1.0) * grid.integrate(cut.lap * modulus_sq ** ((p + 1.0) / 2.0))
    bilap_term = grid.integrate(cut.bilap * modulus_sq)
    z_second = hess_term - nonlinear_term - bilap_term

    cq = conserved(u)
    npm = params.N * (p - 1.0)
    global_rhs = 4.0 * npm * cq.energy - (2.0 * npm - 8.0) * cq.grad_norm_sq
    a_r = z_second - global_rhs
    if C1 is not None:
        bound = localization_bound(u, cut.R, C1)
        if a_r > bound:
            logger.warning("[Virial] 局部化誤差 A_R=%.3e 超過 C1 上界 %.3e (R=%g)", a_r, bound, cut.R)
    return LocalVirial(localized_variance(u, cut), z_second, a_r)


def gamma_window(lambda_plus: float, params: ProblemParams) -> float:
    """γ_max = min(2ω₁(2N(p-1)-8), 4N(p-1)ω₂λ₊^{(N(p-1)-4)/2} - 16ω₁)"""
    if not lambda_plus > 1.0:
        raise LambdaNotSupercriticalError(f"λ₊={lambda_plus} 必須 > 1")
    npm = params.N * (params.p - 1.0)
    first = 2.0 * params.omega1 * (2.0 * npm - 8.0)
    second = 4.0 * npm * params.omega2 * lambda_plus ** ((npm - 4.0) / 2.0) - 16.0 * params.omega1
    return min(first, second)


def eta_exterior(u: Field, Q: GroundState, R: float) -> float:
    """
    η_{>=R} = ‖u‖^{s_c(p-1)}_{L²(|x|>=R)} ‖∇u‖^{(1-s_c)(p-1)}_{L²(|x|>=R)}
              / (‖Q‖₂^{s_c(p-1)} ‖∇Q‖₂^{(1-s_c)(p-1)})
    梯度先以全域譜微分計算再遮罩。
    """
    params = u.params
    mass, grad, _ = _exterior(u, R)
    mass_power = params.s_c * (params.p - 1.0) / 2.0
    grad_power = (1.0 - params.s_c) * (params.p - 1.0) / 2.0
    return float((mass / Q.norms.mass) ** mass_power * (grad / Q.norms.grad_norm_sq) ** grad_power)


def _normalized_eta_exterior(u: Field, Q: GroundState, R: float, beta: float, mu: float) -> float:
    params = u.params
    factor = mu ** ((params.p - 1.0) / 2.0) * beta ** ((1.0 - params.s_c) * (params.p - 1.0))
    return factor * eta_exterior(u, Q, R)


def _localized_setup(u: Field, Q: GroundState, gamma: float):
    report = _case2_report(u, Q)
    lam = report.lambda_plus
    gamma_max = gamma_window(lam, u.params)
    if not 0.0 < gamma < gamma_max:
        raise GammaOutOfWindowError(f"γ={gamma} 不在 (0, γ_max={gamma_max:.6g}) 之內")
    reduced = virial_denominator(lam, u.params) - gamma * lam ** 2
    if not reduced > 0:
        raise NegativeDenominatorError(f"局部化分母 {reduced} <= 0 (λ₊={lam}, γ={gamma})")
    beta, mu = _mass_factors(conserved(u).mass, Q)
    return lam, gamma_max, reduced, beta, mu


def _localized_report(u, Q, gamma, R, constant, variant, lam, gamma_max, reduced, beta, mu, radial_gn=None):
    cut = make_cutoff(u.grid, R)
    denominator = constant * Q.norms.energy * reduced
    r0 = mu * beta ** -2 * localized_variance(u, cut) / denominator
    r0_prime = mu * local_variance_rate(u, cut) / denominator
    t_b = _roots_time(r0, r0_prime)
    logger.info("[Virial] %s 上界: γ=%.6g R=%.6g r0=%.6g r0'=%.6g t_b=%.6g",
                variant.value, gamma, R, r0, r0_prime, t_b)
    return VirialReport(
        variant=variant,
        r0=r0,
        r0_prime=r0_prime,
        t_b=t_b,
        t_b_unscaled=beta ** 2 * t_b,
        lambda_plus=lam,
        denominator=denominator,
        beta=beta,
        mass_factor=mu,
        gamma=gamma,
        gamma_max=gamma_max,
        R=R,
        radial_gn=radial_gn,
    )


def tb_localized(u: Field, Q: GroundState, gamma: float, R: float, C1: float = 10.0, C2: float = 1.0,
                 C: float = 1.0) -> VirialReport:
    """
    r̃(0) = z_R(0) / (C E(Q)(-16ω₁λ₊² + 4N(p-1)ω₂λ₊^{N(p-1)/2} - γλ₊²))，r̃'(0) 同分母。

    :param R: 原始座標中的截斷半徑；正規化座標中需滿足 R/β >= C2 γ^{-1/2}
    :raises GammaOutOfWindowError: γ 不在 (0, γ_max)
    :raises RadiusTooSmallError: R/β < C2 γ^{-1/2}
    """
    lam, gamma_max, reduced, beta, mu = _localized_setup(u, Q, gamma)
    normalized_radius = R / beta
    if normalized_radius < C2 / np.sqrt(gamma):
        raise RadiusTooSmallError(f"正規化半徑 R/β={normalized_radius:.6g} < C2 γ^(-1/2)={C2 / np.sqrt(gamma):.6g}")
    exterior = _normalized_eta_exterior(u, Q, R, beta, mu)
    if exterior > gamma:
        logger.warning("[Virial] t=0 時 η_{>=R}=%.4g 已超過 γ=%.4g，局部化上界不成立", exterior, gamma)
    cut = make_cutoff(u.grid, R)
    local_virial(u, cut, C1)
    return _localized_report(u, Q, gamma, R, C, BoundVariant.LOCALIZED, lam, gamma_max, reduced, beta, mu)


# ---------------------------------------------------------------------------
# 徑向情形
# ---------------------------------------------------------------------------
def radial_deviation(u: Field) -> float:
    """所有座標軸反射與座標互換下的最大偏差"""
    values = u.values
    deviation = 0.0
    for axis in range(u.grid.dim):
        deviation = max(deviation, float(np.max(np.abs(spectral.reflect(values, axis) - values))))
    for j in range(u.grid.dim):
        for k in range(j + 1, u.grid.dim):
            deviation = max(deviation, float(np.max(np.abs(np.swapaxes(values, j, k) - values))))
    return deviation


def check_radial(u: Field, tolerance: float = RADIAL_TOLERANCE) -> None:
    peak = float(np.max(np.abs(u.values)))
    deviation = radial_deviation(u)
    if deviation > tolerance * max(peak, np.finfo(float).tiny):
        raise NotRadialError(f"場不是徑向對稱: 偏差 {deviation:.3e} (峰值 {peak:.3e})")


def rho_dyadic(u: Field, R: float) -> float:
    """ρ(u,R) = sup_{R'>=R} (R')^{-2s_c} ∫_{R'<=|x|<=2R'}|u|²，R' 取 R·2^{j/4} 直到 2R' 超出半盒長"""
    if not R > 0:
        raise RadiusTooSmallError(f"R 必須為正: {R}")
    grid = u.grid
    radius = grid.radius
    density = np.abs(u.values) ** 2
    best = 0.0
    current = R
    while True:
        annulus = (radius >= current) & (radius <= 2.0 * current)
        value = grid.integrate(density[annulus]) / current ** (2.0 * u.params.s_c)
        best = max(best, value)
        current *= RHO_LADDER_STEP
        if 2.0 * current > grid.extent:
            break
    return best


def radial_gn_report(u: Field, Q: GroundState, gamma: float, R: float, C_gamma: float = 1.0,
                     C_Q: float = 1.0) -> dict:
    """
    質量正規化後的徑向 GN 不等式:
        ∫_{|x|>=R}|v|^{p+1} <= γ∫_{|x|>=R}|∇v|² + C_γ C_Q / R^{2(1-s_c)}
    v 與半徑 R/β 皆在正規化座標中；回傳兩側與 slack。
    """
    params = u.params
    beta, mu = _mass_factors(conserved(u).mass, Q)
    mass, grad, lp1 = _exterior(u, R)
    radius = R / beta
    lhs = mu * beta ** 2 * lp1
    rhs = gamma * mu * beta ** 2 * grad + C_gamma * C_Q / radius ** (2.0 * (1.0 - params.s_c))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "slack": rhs - lhs,
        "holds": bool(lhs <= rhs),
        "normalized_radius": radius,
        "exterior_mass": mu * mass,
    }


def tb_radial(u: Field, Q: GroundState, gamma: float, R: float, C_gamma: float = 1.0,
              C_Q: float = 1.0) -> VirialReport:
    """
    分母常數 C̃_Q = 2C_Q 的局部化上界；並回報徑向 GN 不等式。

    :raises NotRadialError: 反射/互換偏差超過 1e-8 · max|u|
    :raises RadiusTooSmallError: R/β 不大於 max(γ^{-1/2}, (2C_γ/(D/E(Q) - γλ₊²))^{1/(2(1-s_c))})
    """
    check_radial(u)
    lam, gamma_max, reduced, beta, mu = _localized_setup(u, Q, gamma)
    params = u.params
    threshold = max(gamma ** -0.5, (2.0 * C_gamma / reduced) ** (1.0 / (2.0 * (1.0 - params.s_c))))
    if not R / beta > threshold:
        raise RadiusTooSmallError(f"正規化半徑 R/β={R / beta:.6g} 必須 > {threshold:.6g}")
    gn = radial_gn_report(u, Q, gamma, R, C_gamma, C_Q)
    if not gn["holds"]:
        logger.warning("[Virial] 徑向 GN 不等式不成立: lhs=%.4g rhs=%.4g", gn["lhs"], gn["rhs"])
    return _localized_report(u, Q, gamma, R, 2.0 * C_Q, BoundVariant.RADIAL, lam, gamma_max, reduced, beta, mu,
                             radial_gn=gn)


def exterior_gn_check(u: Field, cgn: float, R: float) -> dict:
    """‖u‖^{p+1}_{L^{p+1}(|x|>=R)} <= C_GN ‖∇u‖^{N(p-1)/2}_{L²(|x|>=R)} ‖u‖^{2-(N-2)(p-1)/2}_{L²(|x|>=R)}"""
    params = u.params
    mass, grad, lp1 = _exterior(u, R)
    rhs = cgn * grad ** (params.virial_power / 2.0) * mass ** (params.gn_mass_power / 2.0)
    slack = rhs - lp1
    logger.debug("[Virial] 外部梯度以全域譜微分後遮罩計算 (R=%g)", R)
    if slack < -1e-8 * lp1:
        logger.warning("[Virial] 外部 GN 不等式被違反: slack=%.3e (R=%g)", slack, R)
    return {"lhs": lp1, "rhs": rhs, "slack": slack}


def scaled_variance_curvature(records: Sequence, report: VirialReport) -> pd.DataFrame:
    """
    以紀錄點上的中央二階差分估計 r''(τ)，τ = t/β² 為正規化時間。
    只使用有變異數且 boundary_ok 的紀錄；回傳欄位 t, r, curvature。
    """
    usable = [rec for rec in records if rec.variance is not None and rec.boundary_ok]
    times = np.array([rec.t for rec in usable]) / report.beta ** 2
    scaled = report.mass_factor * report.beta ** -2 * np.array([rec.variance for rec in usable])
    scaled /= report.denominator
    curvature = np.full(len(usable), np.nan)
    for i in range(1, len(usable) - 1):
        h1 = times[i] - times[i - 1]
        h2 = times[i + 1] - times[i]
        if h1 <= 0 or h2 <= 0:
            continue
        curvature[i] = 2.0 * ((scaled[i + 1] - scaled[i]) / h2 - (scaled[i] - scaled[i - 1]) / h1) / (h1 + h2)
    return pd.DataFrame({"t": [rec.t for rec in usable], "r": scaled, "curvature": curvature})
