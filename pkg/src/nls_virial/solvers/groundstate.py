"""
groundstate.py
以 Petviashvili 迭代求解基態 -βQ + ΔQ + |Q|^{p-1}Q = 0 (β = 1 - s_c 或 1)，
並提供 Pohozaev 恆等式、Gagliardo-Nirenberg 最佳常數與一維解析解。
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from nls_virial.invariants.params_invariants import ConservedQuantities, Field, ProblemParams, conserved
from nls_virial.utils import spectral
from nls_virial.utils.errors import (
    GridTooCoarseError,
    NoConvergenceError,
    ValidationError,
    WrongDimensionError,
)
from nls_virial.utils.spectral import Grid

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("critical", "unit")
INITIAL_GUESSES = ("sech", "gaussian")


@dataclass(frozen=True)
class SolverOptions:
    """
    :param tolerance: 殘差上限 (相對於 ‖Q‖∞)
    :param step_tolerance: 相鄰兩次迭代的 sup 差上限 (相對於 max(1, ‖Q‖∞))
    :param max_iterations: 最大迭代次數
    :param normalization: "critical" 取係數 1 - s_c，"unit" 取係數 1
    :param edge_band: 計算殘差時排除的邊界帶比例 (每軸)
    :param min_points_per_fwhm: 半高全寬內至少要有的格點數
    :param initial_guess: "sech" 以一維解析式為初始猜測，"gaussian" 以同樣峰值與曲率的 Gaussian
    """

    tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    max_iterations: int = 2000
    normalization: str = "critical"
    edge_band: float = 0.05
    min_points_per_fwhm: float = 16.0
    initial_guess: str = "sech"

    def __post_init__(self):
        if not self.tolerance > 0 or not self.step_tolerance > 0:
            raise ValidationError("tolerance 與 step_tolerance 必須為正")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations 必須 >= 1: {self.max_iterations}")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError(f"未知的 normalization: {self.normalization} (可用: {NORMALIZATIONS})")
        if not 0.0 <= self.edge_band < 0.5:
            raise ValidationError(f"edge_band 必須在 [0, 0.5): {self.edge_band}")
        if self.initial_guess not in INITIAL_GUESSES:
            raise ValidationError(f"未知的 initial_guess: {self.initial_guess} (可用: {INITIAL_GUESSES})")

    def as_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "step_tolerance": self.step_tolerance,
            "max_iterations": self.max_iterations,
            "normalization": self.normalization,
            "edge_band": self.edge_band,
            "min_points_per_fwhm": self.min_points_per_fwhm,
            "initial_guess": self.initial_guess,
        }


@dataclass(frozen=True, eq=False)
class GroundState:
    profile: Field
    norms: ConservedQuantities
    cgn: float
    residual: float
    iterations: int
    coefficient: float
    residual_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def params(self) -> ProblemParams:
        return self.profile.params

    @property
    def grid(self) -> Grid:
        return self.profile.grid

    def summary(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "grid": self.grid.describe(),
            "coefficient": self.coefficient,
            "norms": self.norms.as_dict(),
            "cgn": self.cgn,
            "residual": self.residual,
            "iterations": self.iterations,
            "pohozaev": pohozaev_residuals(self),
        }


def equation_coefficient(params: ProblemParams, normalization: str = "critical") -> float:
    if normalization not in NORMALIZATIONS:
        raise ValidationError(f"未知的 normalization: {normalization}")
    return 1.0 - params.s_c if normalization == "critical" else 1.0


def _sech_profile(radius, params: ProblemParams, coefficient: float) -> np.ndarray:
    p = params.p
    amplitude = (coefficient * (p + 1.0) / 2.0) ** (1.0 / (p - 1.0))
    slope = np.sqrt(coefficient) * (p - 1.0) / 2.0
    return amplitude * spectral.sech(slope * radius) ** (2.0 / (p - 1.0))


def _gaussian_profile(radius, params: ProblemParams, coefficient: float) -> np.ndarray:
    # 峰值與原點曲率和 sech 剖面相同，尾端衰減較快
    p = params.p
    amplitude = (coefficient * (p + 1.0) / 2.0) ** (1.0 / (p - 1.0))
    slope = np.sqrt(coefficient) * (p - 1.0) / 2.0
    return amplitude * np.exp(-(slope * radius) ** 2 / (p - 1.0))


def soliton_1d_closed_form(params: ProblemParams, grid: Grid, coefficient: Optional[float] = None) -> Field:
    """一維解析解 Q(x) = (β(p+1)/2)^{1/(p-1)} sech^{2/(p-1)}(√β(p-1)x/2)"""
    if params.N != 1:
        raise WrongDimensionError(f"解析解只適用於 N = 1，收到 N = {params.N}")
    beta = 1.0 - params.s_c if coefficient is None else coefficient
    return Field(_sech_profile(grid.axis, params, beta), grid, params)


def fwhm_estimate(params: ProblemParams, coefficient: Optional[float] = None) -> float:
    """以一維解析解估計半高全寬；係數 β 使寬度按 β^{-1/2} 縮放"""
    beta = 1.0 - params.s_c if coefficient is None else coefficient
    slope = np.sqrt(beta) * (params.p - 1.0) / 2.0
    return float(2.0 * np.arccosh(2.0 ** ((params.p - 1.0) / 2.0)) / slope)


def equation_residual(values: np.ndarray, grid: Grid, params: ProblemParams, coefficient: float,
                      edge_band: float = 0.05) -> float:
    """sup |-βQ + ΔQ + |Q|^{p-1}Q| / ‖Q‖∞，排除每軸兩端 edge_band 比例的點"""
    q = np.real(values)
    lap = np.real(spectral.laplacian(q, grid))
    res = np.abs(-coefficient * q + lap + np.abs(q) ** (params.p - 1.0) * q)
    cut = int(np.floor(edge_band * grid.points))
    if cut:
        interior = tuple(slice(cut, grid.points - cut) for _ in range(grid.dim))
        res = res[interior]
    peak = np.max(np.abs(q))
    return float(np.max(res) / peak) if peak > 0 else float(np.max(res))


def solve_ground_state(params: ProblemParams, grid: Grid, opts: Optional[SolverOptions] = None) -> GroundState:
    """
    Petviashvili 迭代:
        M_k = Σ (β + |k|²)|Q̂|² / Re Σ conj(Q̂) N̂,   N = |Q|^{p-1}Q
        Q̂ <- M_k^{p/(p-1)} N̂ / (β + |k|²)

    初始猜測預設為以 |x| 取代 x 的一維 sech 解析式，置於格點中心；
    opts.initial_guess = "gaussian" 時改用 Gaussian。

    :raises GridTooCoarseError: 半高全寬內的格點數少於 opts.min_points_per_fwhm
    :raises NoConvergenceError: 超過 opts.max_iterations 仍未收斂
    """
    opts = opts or SolverOptions()
    if params.N != grid.dim:
        raise WrongDimensionError(f"參數維度 N={params.N} 與格點維度 {grid.dim} 不一致")
    beta = equation_coefficient(params, opts.normalization)
    width = fwhm_estimate(params, beta)
    if width / grid.spacing < opts.min_points_per_fwhm:
        raise GridTooCoarseError(
            f"半高全寬 {width:.4g} 只有 {width / grid.spacing:.1f} 個格點 (需要 >= {opts.min_points_per_fwhm})"
        )

    p = params.p
    gamma = p / (p - 1.0)
    symbol = beta + grid.k_squared
    if opts.initial_guess == "gaussian":
        q = _gaussian_profile(grid.radius, params, beta)
    else:
        q = _sech_profile(grid.radius, params, beta)
    history = []
    logger.info("[GroundState] 開始求解 N=%d p=%g 係數=%.6g 格點=%s", params.N, p, beta, grid.describe())

    for iteration in range(1, opts.max_iterations + 1):
        q_hat = spectral.fftn(q)
        nonlinear_hat = spectral.fftn(np.abs(q) ** (p - 1.0) * q)
        numerator = np.sum(symbol * np.abs(q_hat) ** 2)
        denominator = np.real(np.sum(np.conj(q_hat) * nonlinear_hat))
        if not denominator > 0:
            raise NoConvergenceError(f"Petviashvili 穩定因子的分母非正 (第 {iteration} 次迭代)")
        stabilizer = numerator / denominator
        q_next = np.real(spectral.ifftn(stabilizer ** gamma * nonlinear_hat / symbol))
        if not np.all(np.isfinite(q_next)):
            raise NoConvergenceError(f"Petviashvili 迭代在第 {iteration} 次出現非有限值")

        change = float(np.max(np.abs(q_next - q)))
        q = q_next
        residual = equation_residual(q, grid, params, beta, opts.edge_band)
        history.append(residual)
        logger.debug("[GroundState] iter=%d M=%.15f change=%.3e residual=%.3e", iteration, stabilizer, change, residual)
        scale = max(1.0, float(np.max(np.abs(q))))
        if change < opts.step_tolerance * scale and residual < opts.tolerance:
            break
    else:
        raise NoConvergenceError(
            f"Petviashvili 迭代 {opts.max_iterations} 次後仍未收斂 (residual={history[-1]:.3e})"
        )

    if np.max(q) < 0:
        q = -q
    profile = Field(q, grid, params)
    norms = conserved(profile)
    result = GroundState(
        profile=profile,
        norms=norms,
        cgn=gn_ratio(profile),
        residual=history[-1],
        iterations=iteration,
        coefficient=beta,
        residual_history=tuple(history),
    )
    logger.info("[GroundState] 收斂: iterations=%d residual=%.3e M=%.12g E=%.12g",
                iteration, result.residual, norms.mass, norms.energy)
    return result


def pohozaev_residuals(Q: GroundState) -> dict:
    """
    三個 Pohozaev 恆等式的相對殘差:
      M/‖∇Q‖² = (2/N)(1-s_c)/β  (β = 1 - s_c 時即 2/N)
      E = (N(p-1)-4)/(2N(p-1)) ‖∇Q‖²
      ‖Q‖_{p+1}^{p+1} = 2(p+1)/(N(p-1)) ‖∇Q‖²
    """
    params, norms = Q.params, Q.norms
    N, p = params.N, params.p
    grad = norms.grad_norm_sq
    expected_mass = (2.0 / N) * (1.0 - params.s_c) / Q.coefficient * grad
    expected_energy = (N * (p - 1.0) - 4.0) / (2.0 * N * (p - 1.0)) * grad
    expected_lp1 = 2.0 * (p + 1.0) / (N * (p - 1.0)) * grad
    return {
        "mass_gradient": abs(norms.mass - expected_mass) / abs(expected_mass),
        "energy": abs(norms.energy - expected_energy) / abs(expected_energy),
        "potential": abs(norms.lp1_norm - expected_lp1) / abs(expected_lp1),
    }


def _gn_denominator(cq: ConservedQuantities, params: ProblemParams) -> float:
    return cq.grad_norm_sq ** (params.virial_power / 2.0) * cq.mass ** (params.gn_mass_power / 2.0)


def gn_ratio(u: Field) -> float:
    """‖u‖_{p+1}^{p+1} / (‖∇u‖₂^{N(p-1)/2} ‖u‖₂^{2-(N-2)(p-1)/2})；u ≡ 0 時回傳 0"""
    cq = conserved(u)
    if cq.lp1_norm == 0.0:
        return 0.0
    return float(cq.lp1_norm / _gn_denominator(cq, u.params))


def sharp_gn_constant(Q: GroundState) -> float:
    return gn_ratio(Q.profile)


def gn_check(u: Field, cgn: float) -> float:
    """C_GN ‖∇u‖₂^{N(p-1)/2} ‖u‖₂^{2-(N-2)(p-1)/2} - ‖u‖_{p+1}^{p+1}，最佳常數下應 >= 0"""
    cq = conserved(u)
    slack = cgn * _gn_denominator(cq, u.params) - cq.lp1_norm
    if slack < -1e-8 * cq.lp1_norm:
        logger.warning("[GN] 不等式被違反: slack=%.3e (‖u‖_{p+1}^{p+1}=%.3e)", slack, cq.lp1_norm)
    return float(slack)
