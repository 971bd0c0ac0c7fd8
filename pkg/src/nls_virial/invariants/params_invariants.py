"""
params_invariants.py

問題參數 (N, p)、守恆量、尺度不變的二分法量 (ratio, η)、λ 根求解、
二分法分類，以及 Galilean 變換與質量重新標度。

所有函式皆為純函式: 輸入的 Field 不會被修改 (values 為唯讀陣列)。
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from nls_virial.utils import spectral
from nls_virial.utils.errors import (
    AliasRiskError,
    NonFiniteError,
    OutOfRangeError,
    RatioOutOfRangeError,
    ValidationError,
    ZeroMassError,
)
from nls_virial.utils.spectral import Grid

if TYPE_CHECKING:
    from nls_virial.solvers.groundstate import GroundState

logger = logging.getLogger(__name__)

BOUNDARY_TOLERANCE = 1e-9
ROOT_XTOL = 1e-14
RESCALE_MASS_TOLERANCE = 1e-8


@dataclass(frozen=True)
class ProblemParams:
    """
    NLS 參數與其導出量。

    - s_c    = N/2 - 2/(p-1)，需落在 (0, 1)
    - omega1 = N(p-1) / (N(p-1) - 4)
    - omega2 = 4 / (N(p-1) - 4)，恆有 omega1 - omega2 = 1
    """

    N: int
    p: float
    s_c: float = field(init=False)
    omega1: float = field(init=False)
    omega2: float = field(init=False)

    def __post_init__(self):
        _check_window(self.N, self.p)
        npm = self.N * (self.p - 1.0)
        object.__setattr__(self, "s_c", self.N / 2.0 - 2.0 / (self.p - 1.0))
        object.__setattr__(self, "omega1", npm / (npm - 4.0))
        object.__setattr__(self, "omega2", 4.0 / (npm - 4.0))

    @property
    def virial_power(self) -> float:
        """N(p-1)/2: GN 不等式中梯度的次方，也是二分法多項式的高次項"""
        return self.N * (self.p - 1.0) / 2.0

    @property
    def gn_mass_power(self) -> float:
        """2 - (N-2)(p-1)/2: GN 不等式中 L² 範數的次方"""
        return 2.0 - (self.N - 2) * (self.p - 1.0) / 2.0

    @property
    def mass_weight(self) -> float:
        """(1 - s_c)/s_c"""
        return (1.0 - self.s_c) / self.s_c

    def as_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "s_c": self.s_c, "omega1": self.omega1, "omega2": self.omega2}


def _check_window(N: int, p: float) -> None:
    if N not in spectral.SUPPORTED_DIMS:
        raise OutOfRangeError(f"N={N} 不在支援範圍 (1, 2, 3)")
    lower = 1.0 + 4.0 / N
    if not p > lower:
        raise OutOfRangeError(f"p={p} 未超過 L² 臨界指數 1+4/N={lower} (需嚴格大於)")
    if N >= 3:
        upper = 1.0 + 4.0 / (N - 2)
        if not p < upper:
            raise OutOfRangeError(f"p={p} 未低於能量臨界指數 1+4/(N-2)={upper} (需嚴格小於)")


def make_params(N: int, p: float) -> ProblemParams:
    """驗證 (N, p) 落在質量超臨界、能量次臨界的開區間並回傳參數"""
    return ProblemParams(N=int(N), p=float(p))


@dataclass(frozen=True, eq=False)
class Field:
    """格點上的複數場 u(x)。values 在建構時複製並設為唯讀。"""

    values: np.ndarray
    grid: Grid
    params: ProblemParams

    def __post_init__(self):
        if self.params.N != self.grid.dim:
            raise ValidationError(f"參數維度 N={self.params.N} 與格點維度 {self.grid.dim} 不一致")
        arr = np.array(self.values, dtype=complex)
        if arr.shape != self.grid.shape:
            raise ValidationError(f"場的形狀 {arr.shape} 與格點 {self.grid.shape} 不一致")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("場含有非有限值 (NaN/Inf)")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(values, self.grid, self.params)

    @property
    def is_real(self) -> bool:
        return not np.any(self.values.imag)

    def gradient(self):
        return spectral.gradient(self.values, self.grid)


@dataclass(frozen=True)
class ConservedQuantities:
    mass: float
    energy: float
    momentum: Tuple[float, ...]
    grad_norm_sq: float
    lp1_norm: float

    def as_dict(self) -> dict:
        return {
            "mass": self.mass,
            "energy": self.energy,
            "momentum": list(self.momentum),
            "grad_norm_sq": self.grad_norm_sq,
            "lp1_norm": self.lp1_norm,
        }


def conserved(u: Field) -> ConservedQuantities:
    """以譜微分與格點求積計算 M、E、P、‖∇u‖₂²、‖u‖_{p+1}^{p+1}"""
    grid, p = u.grid, u.params.p
    modulus = np.abs(u.values)
    grads = u.gradient()
    density = modulus ** 2
    grad_density = sum(np.abs(g) ** 2 for g in grads)
    with np.errstate(over="ignore", invalid="ignore"):
        lp1_density = modulus ** (p + 1.0)
    for name, arr in (("|u|^2", density), ("|grad u|^2", grad_density), ("|u|^(p+1)", lp1_density)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"被積函數 {name} 含有非有限值")

    mass = grid.integrate(density)
    grad_norm_sq = grid.integrate(grad_density)
    lp1_norm = grid.integrate(lp1_density)
    if u.is_real:
        # 實場的動量恆為零
        momentum = (0.0,) * grid.dim
    else:
        momentum = tuple(grid.integrate(np.imag(np.conj(u.values) * g)) for g in grads)
    energy = 0.5 * grad_norm_sq - lp1_norm / (p + 1.0)
    return ConservedQuantities(mass, energy, momentum, grad_norm_sq, lp1_norm)


# ---------------------------------------------------------------------------
# 二分法多項式與 λ 根
# ---------------------------------------------------------------------------
def dichotomy_polynomial(lam, params: ProblemParams):
    """f(λ) = ω₁λ² - ω₂λ^{N(p-1)/2}，在 λ = 1 取得最大值 1"""
    lam = np.asarray(lam, dtype=float)
    return params.omega1 * lam ** 2 - params.omega2 * lam ** params.virial_power


def lower_root(ratio: float, params: ProblemParams) -> float:
    if ratio == 0.0:
        return 0.0
    return optimize.bisect(
        lambda x: float(dichotomy_polynomial(x, params)) - ratio,
        0.0, 1.0, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200,
    )


def upper_root(ratio: float, params: ProblemParams) -> float:
    """
    f(λ) = ratio 在 (1, ∞) 上的根。ratio < 0 (負能量) 時依然存在。
    上界以倍增方式擴張直到 f(λ_hi) < ratio。
    """
    if not ratio < 1.0:
        raise RatioOutOfRangeError(f"ratio={ratio} >= 1，上根不存在")

    def g(x):
        return float(dichotomy_polynomial(x, params)) - ratio

    hi = 2.0
    for _ in range(200):
        if g(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise RatioOutOfRangeError(f"無法為 ratio={ratio} 找到上界")
    return optimize.bisect(g, 1.0, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)


def lambda_roots(ratio: float, params: ProblemParams) -> Tuple[float, float]:
    """
    ω₁λ² - ω₂λ^{N(p-1)/2} = ratio 的兩個非負根 (λ₋, λ₊)，0 <= λ₋ < 1 < λ₊。

    :raises RatioOutOfRangeError: ratio < 0 或 ratio >= 1 (ratio = 1 時兩根在 λ = 1 重合)
    """
    if not 0.0 <= ratio < 1.0:
        raise RatioOutOfRangeError(f"ratio={ratio} 不在 [0, 1) 之內")
    return lower_root(ratio, params), upper_root(ratio, params)


# ---------------------------------------------------------------------------
# 尺度不變量與分類
# ---------------------------------------------------------------------------
class Verdict(str, Enum):
    GLOBAL_BOUNDED = "GlobalBounded"
    POSSIBLE_DIVERGENCE = "PossibleDivergence"
    BOUNDARY_INDETERMINATE = "BoundaryIndeterminate"
    ABOVE_THRESHOLD = "AboveThreshold"


@dataclass(frozen=True)
class DichotomyReport:
    ratio: float
    eta: float
    lambda_minus: Optional[float]
    lambda_plus: Optional[float]
    verdict: Verdict
    mass_ratio: float
    tolerance: float = BOUNDARY_TOLERANCE

    @property
    def negative_ratio(self) -> bool:
        return self.ratio < 0.0

    def as_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "eta": self.eta,
            "lambda_minus": self.lambda_minus,
            "lambda_plus": self.lambda_plus,
            "verdict": self.verdict.value,
            "mass_ratio": self.mass_ratio,
            "negative_ratio": self.negative_ratio,
            "tolerance": self.tolerance,
        }


def scale_invariant_gradient(cq: ConservedQuantities, params: ProblemParams) -> float:
    """‖∇u‖₂ ‖u‖₂^{(1-s_c)/s_c}"""
    return float(np.sqrt(cq.grad_norm_sq) * cq.mass ** (params.mass_weight / 2.0))


def scale_invariant_energy(cq: ConservedQuantities, params: ProblemParams) -> float:
    """M(u)^{(1-s_c)/s_c} E(u)"""
    return float(cq.mass ** params.mass_weight * cq.energy)


def eta_from(cq: ConservedQuantities, reference: ConservedQuantities, params: ProblemParams) -> float:
    return scale_invariant_gradient(cq, params) / scale_invariant_gradient(reference, params)


def ratio_from(cq: ConservedQuantities, reference: ConservedQuantities, params: ProblemParams) -> float:
    return scale_invariant_energy(cq, params) / scale_invariant_energy(reference, params)


def eta(u: Field, Q: "GroundState") -> float:
    return eta_from(conserved(u), Q.norms, u.params)


def energy_mass_ratio(u: Field, Q: "GroundState") -> float:
    return ratio_from(conserved(u), Q.norms, u.params)


def _check_shared(u: Field, Q: "GroundState") -> None:
    if u.params != Q.profile.params or u.grid != Q.profile.grid:
        raise ValidationError("場與基態的 (N, p) 或格點不一致")


def classify_quantities(
    cq: ConservedQuantities, Q: "GroundState", tolerance: float = BOUNDARY_TOLERANCE
) -> DichotomyReport:
    params = Q.profile.params
    ratio = ratio_from(cq, Q.norms, params)
    eta_value = eta_from(cq, Q.norms, params)
    mass_ratio = cq.mass / Q.norms.mass

    lam_minus = lam_plus = None
    if ratio < 1.0:
        if ratio >= 0.0:
            lam_minus, lam_plus = lambda_roots(ratio, params)
        else:
            # E(u) < 0 只可能落在第二種情形；λ₋ 以 0 回報
            lam_minus, lam_plus = 0.0, upper_root(ratio, params)

    if abs(eta_value - 1.0) < tolerance or abs(ratio - 1.0) < tolerance:
        verdict = Verdict.BOUNDARY_INDETERMINATE
    elif ratio > 1.0:
        verdict = Verdict.ABOVE_THRESHOLD
    elif eta_value < 1.0:
        verdict = Verdict.GLOBAL_BOUNDED
    else:
        verdict = Verdict.POSSIBLE_DIVERGENCE
    return DichotomyReport(ratio, eta_value, lam_minus, lam_plus, verdict, mass_ratio, tolerance)


def classify(u: Field, Q: "GroundState", tolerance: float = BOUNDARY_TOLERANCE) -> DichotomyReport:
    """
    依初始資料判定二分法情形:
      - ratio < 1 且 η < 1 -> GlobalBounded
      - ratio < 1 且 η > 1 -> PossibleDivergence
      - |η - 1| 或 |ratio - 1| 小於 tolerance -> BoundaryIndeterminate (嚴格不等式不成立)
      - ratio > 1 -> AboveThreshold
    """
    _check_shared(u, Q)
    report = classify_quantities(conserved(u), Q, tolerance)
    logger.debug("[Dichotomy] ratio=%.12g eta=%.12g verdict=%s", report.ratio, report.eta, report.verdict.value)
    return report


def dichotomy_bounds(u: Field, Q: "GroundState") -> dict:
    """
    雙邊估計 2ω₁η² >= ratio >= ω₁η² - ω₂η^{N(p-1)/2}。
    回傳兩側的 slack (皆應 >= 0)；在孤立子軌道上右側為等號。
    """
    _check_shared(u, Q)
    params = u.params
    cq = conserved(u)
    ratio = ratio_from(cq, Q.norms, params)
    eta_value = eta_from(cq, Q.norms, params)
    upper = 2.0 * params.omega1 * eta_value ** 2
    lower = float(dichotomy_polynomial(eta_value, params))
    return {
        "ratio": ratio,
        "eta": eta_value,
        "upper_slack": upper - ratio,
        "lower_slack": ratio - lower,
    }


# ---------------------------------------------------------------------------
# Galilean 變換
# ---------------------------------------------------------------------------
def galilean_boost(u: Field, xi0: Sequence[float]) -> Field:
    """t = 0 時的 Galilean 變換 ũ(x) = e^{i x·ξ₀} u(x)"""
    xi0 = np.asarray(xi0, dtype=float).reshape(u.grid.dim)
    if not np.all(np.isfinite(xi0)):
        raise NonFiniteError("ξ₀ 含有非有限值")
    if not np.any(xi0):
        return u
    phase = sum(x * xi for x, xi in zip(u.grid.coords, xi0))
    return u.with_values(u.values * np.exp(1j * phase))


def zero_momentum_frame(u: Field) -> Tuple[Field, np.ndarray]:
    """取 ξ₀ = -P(u)/M(u)，使動量歸零並讓 boost 後的能量最小"""
    cq = conserved(u)
    if cq.mass <= 0.0:
        raise ZeroMassError("M(u) = 0，無法定義零動量座標系")
    xi0 = -np.asarray(cq.momentum) / cq.mass
    boosted = galilean_boost(u, xi0)
    if boosted is not u:
        residual = np.max(np.abs(conserved(boosted).momentum))
        if residual >= 1e-10 * cq.mass:
            logger.warning("[Galilean] 零動量座標系仍有殘餘動量 |P|=%.3e (M=%.3e)", residual, cq.mass)
    return boosted, xi0


@dataclass(frozen=True)
class GalileanReport:
    xi0: Tuple[float, ...]
    original: DichotomyReport
    boosted: DichotomyReport
    energy_shift: float
    gradient_identity_residual: float
    case_preserved: Optional[bool]

    def as_dict(self) -> dict:
        return {
            "xi0": list(self.xi0),
            "original": self.original.as_dict(),
            "boosted": self.boosted.as_dict(),
            "energy_shift": self.energy_shift,
            "gradient_identity_residual": self.gradient_identity_residual,
            "case_preserved": self.case_preserved,
        }


def galilean_reclassify(u: Field, Q: "GroundState", tolerance: float = BOUNDARY_TOLERANCE) -> GalileanReport:
    """
    同時分類 u 與其零動量座標系 ũ。
    ‖∇ũ‖² = ‖∇u‖² - |P|²/M；兩者皆在門檻之下時，情形 (1)/(2) 應一致。
    """
    _check_shared(u, Q)
    cq = conserved(u)
    boosted, xi0 = zero_momentum_frame(u)
    cq_b = conserved(boosted)
    p_sq = float(np.dot(cq.momentum, cq.momentum))
    expected = cq.grad_norm_sq - p_sq / cq.mass
    residual = abs(cq_b.grad_norm_sq - expected) / max(cq.grad_norm_sq, np.finfo(float).tiny)
    original = classify_quantities(cq, Q, tolerance)
    moved = classify_quantities(cq_b, Q, tolerance)
    below = {Verdict.GLOBAL_BOUNDED, Verdict.POSSIBLE_DIVERGENCE}
    preserved = None
    if original.verdict in below and moved.verdict in below:
        preserved = original.verdict == moved.verdict
    return GalileanReport(
        xi0=tuple(float(x) for x in xi0),
        original=original,
        boosted=moved,
        energy_shift=cq_b.energy - cq.energy,
        gradient_identity_residual=float(residual),
        case_preserved=preserved,
    )


# ---------------------------------------------------------------------------
# NLS 尺度變換
# ---------------------------------------------------------------------------
def dilate(u: Field, scale: float) -> Field:
    """NLS 尺度變換 u -> s^{2/(p-1)} u(s x)，以譜插值重新取樣"""
    if not scale > 0:
        raise ValidationError(f"尺度必須為正: {scale}")
    if scale == 1.0:
        return u
    factor = scale ** (2.0 / (u.params.p - 1.0))
    return u.with_values(factor * spectral.dilate_values(u.values, u.grid, scale))


def mass_scaling(mass: float, reference_mass: float, params: ProblemParams) -> float:
    """β = (M(u)/M(Q))^{(p-1)/(N(p-1)-4)}"""
    return (mass / reference_mass) ** ((params.p - 1.0) / (params.N * (params.p - 1.0) - 4.0))


def mass_rescale(u: Field, Q: "GroundState", min_points_per_width: float = 1.0) -> Field:
    """
    v(x) = β^{2/(p-1)} u(βx)，使 M(v) = M(Q)。

    :param min_points_per_width: 縮放後每個梯度長度尺度 sqrt(M/‖∇u‖²) 至少要有的格點數
    :raises ZeroMassError: M(u) = 0
    :raises AliasRiskError: β 讓場窄到格點無法解析
    """
    _check_shared(u, Q)
    cq = conserved(u)
    if cq.mass <= 0.0:
        raise ZeroMassError("M(u) = 0，無法重新標度質量")
    beta = mass_scaling(cq.mass, Q.norms.mass, u.params)
    if beta == 1.0:
        return u
    grid = u.grid
    if cq.grad_norm_sq > 0.0:
        length = np.sqrt(cq.mass / cq.grad_norm_sq) / beta
        if length < min_points_per_width * grid.spacing:
            raise AliasRiskError(
                f"β={beta:.6g} 後的長度尺度 {length:.4g} 小於 {min_points_per_width} 個格距 ({grid.spacing:.4g})"
            )
    if beta < 1.0:
        outside = grid.integrate(np.abs(u.values[grid.radius > beta * grid.extent]) ** 2)
        if outside > 1e-6 * cq.mass:
            logger.warning("[MassRescale] β=%.4g 放大後有 %.2e 的質量被移出盒子", beta, outside / cq.mass)
    v = dilate(u, beta)
    # 長度尺度的檢查只看 ‖∇u‖，頻譜尾端被截掉時仍可能漏掉
    mismatch = abs(conserved(v).mass / Q.norms.mass - 1.0)
    if mismatch > RESCALE_MASS_TOLERANCE:
        raise AliasRiskError(
            f"β={beta:.6g} 重新取樣後質量偏差 {mismatch:.3e} 超過 {RESCALE_MASS_TOLERANCE:g}，格點無法解析縮放後的場"
        )
    return v
