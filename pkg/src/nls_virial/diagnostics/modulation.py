"""
modulation.py
場到縮放孤立子軌道 {e^{iθ} λ^{N/2} Q(λ(x - x₀))} 的距離，以及其假設條件檢查。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from nls_virial.invariants.params_invariants import (
    Field,
    conserved,
    dichotomy_polynomial,
    mass_rescale,
    mass_scaling,
)
from nls_virial.solvers.groundstate import GroundState, fwhm_estimate
from nls_virial.utils import spectral
from nls_virial.utils.errors import MassMismatchError, ScaleUnresolvableError, ValidationError

logger = logging.getLogger(__name__)

MASS_MATCH_TOLERANCE = 1e-8
MIN_CELLS_PER_WIDTH = 4.0
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class ModulationFit:
    theta: float
    x0: Tuple[float, ...]
    lam: float
    dist_l2: float
    dist_h1dot: float
    overlap: float

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "x0": list(self.x0),
            "lambda": self.lam,
            "dist_l2": self.dist_l2,
            "dist_h1dot": self.dist_h1dot,
            "overlap": self.overlap,
        }


@dataclass(frozen=True)
class UnscaledFit:
    """質量正規化後的擬合，與換回原始座標的距離與位移"""

    normalized: ModulationFit
    beta: float
    x0: Tuple[float, ...]
    dist_l2: float
    dist_h1dot: float

    def as_dict(self) -> dict:
        return {
            "normalized": self.normalized.as_dict(),
            "beta": self.beta,
            "x0": list(self.x0),
            "dist_l2": self.dist_l2,
            "dist_h1dot": self.dist_h1dot,
        }


def _check_mass(u: Field, Q: GroundState) -> None:
    mismatch = abs(conserved(u).mass / Q.norms.mass - 1.0)
    if mismatch > MASS_MATCH_TOLERANCE:
        raise MassMismatchError(f"M(u)/M(Q) - 1 = {mismatch:.3e}，請先套用 mass_rescale")


def hypotheses_check(u: Field, Q: GroundState, lam: float, rho: float) -> Tuple[bool, bool]:
    """
    (|E(u)/E(Q) - (ω₁λ² - ω₂λ^{N(p-1)/2})| <= ρλ^{N(p-1)/2},
     |‖∇u‖₂/‖∇Q‖₂ - λ| <= ρ·(λ 若 λ >= 1 否則 λ²))

    兩個比較都允許數個 ulp 的捨入誤差。
    """
    if not lam > 0 or rho < 0:
        raise ValidationError(f"需要 λ > 0 且 ρ >= 0 (λ={lam}, ρ={rho})")
    _check_mass(u, Q)
    params = u.params
    cq = conserved(u)
    eps = 64 * np.finfo(float).eps

    energy_ratio = cq.energy / Q.norms.energy
    target = float(dichotomy_polynomial(lam, params))
    energy_gap = abs(energy_ratio - target)
    energy_ok = energy_gap <= rho * lam ** params.virial_power + eps * max(1.0, abs(target), abs(energy_ratio))

    grad_ratio = np.sqrt(cq.grad_norm_sq / Q.norms.grad_norm_sq)
    grad_tolerance = rho * (lam if lam >= 1 else lam ** 2)
    gradient_ok = abs(grad_ratio - lam) <= grad_tolerance + eps * max(1.0, lam)
    return bool(energy_ok), bool(gradient_ok)


def orbit_profile(Q: GroundState, lam: float) -> np.ndarray:
    """λ^{N/2} Q(λx)"""
    values = spectral.dilate_values(Q.profile.values, Q.grid, lam)
    return lam ** (Q.params.N / 2.0) * values


def _wrap(index: np.ndarray, points: int) -> np.ndarray:
    return np.where(index > points // 2, index - points, index)


def _refine(coefficients: np.ndarray, kvecs, shift: np.ndarray, spacing: float) -> np.ndarray:
    """以譜 Newton 法在 s 上最大化 |g(s)|²，g(s) = Σ a_k e^{ik·s}"""
    dim = len(kvecs)
    for _ in range(NEWTON_MAX_ITER):
        phase = np.exp(1j * sum(k * s for k, s in zip(kvecs, shift)))
        terms = coefficients * phase
        g = np.sum(terms)
        dg = np.array([np.sum(1j * k * terms) for k in kvecs])
        ddg = np.empty((dim, dim), dtype=complex)
        for j in range(dim):
            for l in range(j, dim):
                ddg[j, l] = ddg[l, j] = -np.sum(kvecs[j] * kvecs[l] * terms)
        gradient = 2.0 * np.real(np.conj(g) * dg)
        hessian = 2.0 * np.real(np.outer(np.conj(dg), dg) + np.conj(g) * ddg)
        try:
            update = -np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            break
        if np.any(np.linalg.eigvalsh(hessian) >= 0):
            # 非凹區域: 改走梯度上升方向
            update = gradient / (np.linalg.norm(gradient) + np.finfo(float).tiny) * spacing * 0.5
        length = np.linalg.norm(update)
        if length > spacing:
            update *= spacing / length
        shift = shift + update
        if length < 1e-13 * spacing:
            break
    return shift


def fit(u: Field, Q: GroundState, lam: float) -> ModulationFit:
    """
    最小化 ‖u - e^{iθ}λ^{N/2}Q(λ(· - x₀))‖₂:
      1. 以 FFT 計算所有格點位移的相關函數，取 |c| 的峰值
      2. 以三角插值的相關函數在峰值附近做 Newton 細化
      3. θ = arg⟨u, Q_λ(· - x₀)⟩

    :raises ScaleUnresolvableError: 縮放後的孤立子寬度少於 4 個格距
    """
    if not lam > 0:
        raise ValidationError(f"λ 必須為正: {lam}")
    grid = u.grid
    width = fwhm_estimate(u.params, Q.coefficient) / lam
    if width < MIN_CELLS_PER_WIDTH * grid.spacing:
        raise ScaleUnresolvableError(
            f"λ={lam} 時孤立子寬度 {width:.4g} 少於 {MIN_CELLS_PER_WIDTH} 個格距 ({grid.spacing:.4g})"
        )
    template = orbit_profile(Q, lam)
    u_hat = spectral.fftn(u.values)
    cross = u_hat * np.conj(spectral.fftn(template))
    correlation = grid.weight * spectral.ifftn(cross)
    peak = np.array(np.unravel_index(np.argmax(np.abs(correlation)), grid.shape))
    start = _wrap(peak, grid.points) * grid.spacing

    coefficients = grid.weight / grid.size * cross
    # Nyquist 模不參與插值
    for axis in range(grid.dim):
        index = [slice(None)] * grid.dim
        index[axis] = grid.points // 2
        coefficients[tuple(index)] = 0.0
    shift = _refine(coefficients, grid.kvecs, start.astype(float), grid.spacing)
    shift = (shift + grid.extent) % (2.0 * grid.extent) - grid.extent

    aligned = spectral.translate(template, grid, shift)
    overlap = grid.integrate(u.values * np.conj(aligned))
    theta = float(np.mod(np.angle(overlap), 2.0 * np.pi))
    residual = u.values - np.exp(1j * theta) * aligned
    dist_l2 = float(np.sqrt(grid.integrate(np.abs(residual) ** 2)))
    dist_h1dot = float(np.sqrt(grid.integrate(sum(np.abs(g) ** 2 for g in spectral.gradient(residual, grid)))))
    logger.debug("[Modulation] λ=%.6g θ=%.10f x0=%s dist_l2=%.3e", lam, theta, shift, dist_l2)
    return ModulationFit(
        theta=theta,
        x0=tuple(float(s) for s in shift),
        lam=float(lam),
        dist_l2=dist_l2,
        dist_h1dot=dist_h1dot,
        overlap=float(abs(overlap)),
    )


def default_scale(u: Field, Q: GroundState) -> float:
    """λ = ‖∇u‖₂/‖∇Q‖₂"""
    return float(np.sqrt(conserved(u).grad_norm_sq / Q.norms.grad_norm_sq))


def fit_unscaled(u: Field, Q: GroundState, lam: Optional[float] = None,
                 min_points_per_width: float = 1.0) -> UnscaledFit:
    """
    先以 mass_rescale 正規化質量再擬合，距離與位移換回原始座標:
        L² 距離乘 β^{s_c}，Ḣ¹ 距離乘 β^{s_c - 1}，x₀ -> βx₀
    """
    v = mass_rescale(u, Q, min_points_per_width)
    beta = mass_scaling(conserved(u).mass, Q.norms.mass, u.params)
    scale = default_scale(v, Q) if lam is None else lam
    normalized = fit(v, Q, scale)
    s_c = u.params.s_c
    return UnscaledFit(
        normalized=normalized,
        beta=beta,
        x0=tuple(beta * x for x in normalized.x0),
        dist_l2=beta ** s_c * normalized.dist_l2,
        dist_h1dot=beta ** (s_c - 1.0) * normalized.dist_h1dot,
    )


def orbit_proximity(u: Field, Q: GroundState) -> float:
    """|‖u‖_{p+1} - ‖Q‖_{p+1}| + |‖u‖₂ - ‖Q‖₂| + |‖∇u‖₂ - ‖∇Q‖₂|"""
    p = u.params.p
    cq, cq_q = conserved(u), Q.norms
    return float(
        abs(cq.lp1_norm ** (1.0 / (p + 1.0)) - cq_q.lp1_norm ** (1.0 / (p + 1.0)))
        + abs(np.sqrt(cq.mass) - np.sqrt(cq_q.mass))
        + abs(np.sqrt(cq.grad_norm_sq) - np.sqrt(cq_q.grad_norm_sq))
    )
