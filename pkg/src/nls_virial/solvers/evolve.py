"""
evolve.py
週期格點上 iu_t + Δu + |u|^{p-1}u = 0 的 Strang 分裂擬譜時間積分，
附帶守恆量監測、爆破偵測與紀錄表。
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from nls_virial.diagnostics import virial
from nls_virial.invariants.params_invariants import (
    ConservedQuantities,
    DichotomyReport,
    Field,
    ProblemParams,
    Verdict,
    conserved,
    eta_from,
)
from nls_virial.solvers.groundstate import GroundState
from nls_virial.utils import spectral
from nls_virial.utils.errors import NonFiniteError, ValidationError

logger = logging.getLogger(__name__)

MASS_DRIFT_CONTRACT = 1e-10
ENERGY_DRIFT_CONTRACT = 1e-6


@dataclass(frozen=True)
class EvolveOptions:
    """
    :param dt0: 初始 (也是最大) 時間步長
    :param dt_min: 步長低於此值即判定爆破
    :param cfl_nl: dt · max|u|^{p-1} 的上限
    :param record_every: 每幾步紀錄一次診斷量
    :param t_max: 積分終點
    :param blowup_factor: ‖∇u‖₂ 相對初值成長到此倍數即判定爆破
    :param dealias_ratio: 2/3 規則的截斷比例
    :param track_variance: 是否在紀錄中計算 ‖xu‖₂²
    :param cutoff_radius: 若給定則同時紀錄 z_R 與 η_{>=R}
    """

    dt0: float = 1e-3
    dt_min: float = 1e-9
    cfl_nl: float = 0.1
    record_every: int = 50
    t_max: float = 1.0
    blowup_factor: float = 10.0
    dealias_ratio: float = 2.0 / 3.0
    track_variance: bool = True
    cutoff_radius: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.dt_min < self.dt0:
            raise ValidationError(f"需要 0 < dt_min < dt0 (dt_min={self.dt_min}, dt0={self.dt0})")
        if not 0 < self.cfl_nl <= 1:
            raise ValidationError(f"cfl_nl 必須在 (0, 1]: {self.cfl_nl}")
        if not self.blowup_factor > 1:
            raise ValidationError(f"blowup_factor 必須 > 1: {self.blowup_factor}")
        if self.record_every < 1:
            raise ValidationError(f"record_every 必須 >= 1: {self.record_every}")
        if not self.t_max > 0:
            raise ValidationError(f"t_max 必須為正: {self.t_max}")
        if not 0 < self.dealias_ratio <= 1:
            raise ValidationError(f"dealias_ratio 必須在 (0, 1]: {self.dealias_ratio}")

    def as_dict(self) -> dict:
        return {
            "dt0": self.dt0,
            "dt_min": self.dt_min,
            "cfl_nl": self.cfl_nl,
            "record_every": self.record_every,
            "t_max": self.t_max,
            "blowup_factor": self.blowup_factor,
            "dealias_ratio": self.dealias_ratio,
            "track_variance": self.track_variance,
            "cutoff_radius": self.cutoff_radius,
        }


class Termination(str, Enum):
    HORIZON_REACHED = "HorizonReached"
    BLOWUP_DETECTED = "BlowupDetected"
    NON_FINITE = "NonFinite"


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    step: int
    conserved: ConservedQuantities
    eta: float
    dt: float
    max_amplitude: float
    boundary_ok: bool
    variance: Optional[float] = None
    z_R: Optional[float] = None
    exterior_eta: Optional[float] = None

    @property
    def grad_norm(self) -> float:
        return float(np.sqrt(self.conserved.grad_norm_sq))


@dataclass(frozen=True, eq=False)
class EvolveOutcome:
    final: Field
    records: List[TrajectoryRecord]
    termination: Termination
    t_end: float
    steps: int
    reason: str = ""
    notes: tuple = field(default_factory=tuple)

    @property
    def blowup_time(self) -> Optional[float]:
        return self.t_end if self.termination == Termination.BLOWUP_DETECTED else None

    def drift(self) -> dict:
        """相對初始紀錄的最大守恆量漂移"""
        first = self.records[0].conserved
        mass = max(abs(r.conserved.mass - first.mass) for r in self.records) / max(first.mass, np.finfo(float).tiny)
        energy_scale = max(abs(first.energy), np.finfo(float).tiny)
        energy = max(abs(r.conserved.energy - first.energy) for r in self.records) / energy_scale
        momentum = max(
            float(np.max(np.abs(np.subtract(r.conserved.momentum, first.momentum)))) for r in self.records
        ) / max(first.mass, np.finfo(float).tiny)
        return {"mass": mass, "energy": energy, "momentum": momentum}

    def summary(self) -> dict:
        return {
            "termination": self.termination.value,
            "t_end": self.t_end,
            "steps": self.steps,
            "records": len(self.records),
            "reason": self.reason,
            "drift": self.drift(),
            "boundary_ok": all(r.boundary_ok for r in self.records),
            "notes": list(self.notes),
        }


def _nonlinear_phase(values: np.ndarray, dt: float, p: float) -> np.ndarray:
    return values * np.exp(0.5j * dt * np.abs(values) ** (p - 1.0))


def step(u: Field, dt: float, dealias_ratio: float = 2.0 / 3.0) -> Field:
    """
    一個 Strang 分裂步: 半步非線性相位 -> 全步線性 e^{-i dt|k|²} -> 半步非線性相位，
    每個非線性子步後套用 2/3 去混疊。

    :raises NonFiniteError: 結果含 NaN/Inf
    """
    if not dt > 0:
        raise ValidationError(f"dt 必須為正: {dt}")
    grid, p = u.grid, u.params.p
    mask = grid.dealias_mask(dealias_ratio)
    with np.errstate(over="ignore", invalid="ignore"):
        values_hat = spectral.fftn(_nonlinear_phase(u.values, dt, p)) * mask
        values = spectral.ifftn(np.exp(-1j * dt * grid.k_squared) * values_hat)
        values = spectral.ifftn(spectral.fftn(_nonlinear_phase(values, dt, p)) * mask)
    return u.with_values(values)


def reverse_step(u: Field, dt: float, dealias_ratio: float = 2.0 / 3.0) -> Field:
    """時間反演: conj(step(conj(u), dt))，即往回走 dt"""
    flipped = u.with_values(np.conj(u.values))
    return u.with_values(np.conj(step(flipped, dt, dealias_ratio).values))


def _record(u: Field, t: float, step_count: int, dt: float, Q: GroundState, opts: EvolveOptions) -> TrajectoryRecord:
    cq = conserved(u)
    variance_value = z_value = exterior = None
    if opts.track_variance:
        variance_value = virial.variance(u, check_boundary=False)
    if opts.cutoff_radius is not None:
        cut = virial.make_cutoff(u.grid, opts.cutoff_radius)
        z_value = virial.localized_variance(u, cut)
        exterior = virial.eta_exterior(u, Q, opts.cutoff_radius)
    return TrajectoryRecord(
        t=t,
        step=step_count,
        conserved=cq,
        eta=eta_from(cq, Q.norms, u.params),
        dt=dt,
        max_amplitude=float(np.max(np.abs(u.values))),
        boundary_ok=virial.boundary_mass_fraction(u) < virial.BOUNDARY_MASS_FRACTION,
        variance=variance_value,
        z_R=z_value,
        exterior_eta=exterior,
    )


def _adaptive_dt(u: Field, opts: EvolveOptions) -> float:
    peak = float(np.max(np.abs(u.values)))
    nonlinear = peak ** (u.params.p - 1.0)
    return min(opts.dt0, opts.cfl_nl / nonlinear) if nonlinear > 0 else opts.dt0


def evolve(u0: Field, opts: EvolveOptions, Q: GroundState) -> EvolveOutcome:
    """
    自適應步長 dt = min(dt0, cfl_nl/max|u|^{p-1}, 剩餘時間) 反覆套用 step，
    每 record_every 步紀錄一次 (終點也會紀錄)。

    終止條件:
      - t 到達 t_max -> HorizonReached
      - ‖∇u‖₂ >= blowup_factor · 初值，或 CFL 步長低於 dt_min -> BlowupDetected
      - 出現非有限值 -> NonFinite
    """
    t, step_count = 0.0, 0
    u = u0
    dt = _adaptive_dt(u0, opts)
    records = [_record(u0, 0.0, 0, dt, Q, opts)]
    grad0 = records[0].grad_norm
    amp0 = records[0].max_amplitude
    termination, reason = Termination.HORIZON_REACHED, ""
    logger.info("[Evolve] 開始: t_max=%g dt0=%g ‖∇u0‖=%.6g", opts.t_max, opts.dt0, grad0)

    while t < opts.t_max:
        dt_cfl = _adaptive_dt(u, opts)
        if dt_cfl < opts.dt_min:
            termination, reason = Termination.BLOWUP_DETECTED, f"CFL 步長 {dt_cfl:.3e} 低於 dt_min"
            break
        remaining = opts.t_max - t
        dt = min(dt_cfl, remaining)
        try:
            u = step(u, dt, opts.dealias_ratio)
        except NonFiniteError as e:
            termination, reason = Termination.NON_FINITE, str(e)
            break
        step_count += 1
        t = opts.t_max if dt == remaining else t + dt

        if step_count % opts.record_every == 0 or t >= opts.t_max:
            try:
                rec = _record(u, t, step_count, dt, Q, opts)
            except NonFiniteError as e:
                termination, reason = Termination.NON_FINITE, str(e)
                break
            records.append(rec)
            logger.debug("[Evolve] t=%.6f dt=%.3e ‖∇u‖=%.6g eta=%.6g", t, dt, rec.grad_norm, rec.eta)
            if grad0 > 0 and rec.grad_norm >= opts.blowup_factor * grad0:
                termination = Termination.BLOWUP_DETECTED
                reason = f"‖∇u‖₂ 成長到初值的 {rec.grad_norm / grad0:.3g} 倍"
                break

    outcome = EvolveOutcome(u, records, termination, t, step_count, reason)
    notes = _check_contracts(outcome, amp0, opts)
    if notes:
        outcome = EvolveOutcome(u, records, termination, t, step_count, reason, tuple(notes))
    logger.info("[Evolve] 結束: %s t=%.6g steps=%d %s", termination.value, t, step_count, reason)
    return outcome


def _check_contracts(outcome: EvolveOutcome, amp0: float, opts: EvolveOptions) -> List[str]:
    notes = []
    if not all(r.boundary_ok for r in outcome.records):
        first_bad = next(r.t for r in outcome.records if not r.boundary_ok)
        notes.append(f"週期盒子有效性於 t={first_bad:.6g} 失效 (|x| > L/2 的質量 >= 1e-6)")
        logger.warning("[Evolve] %s", notes[-1])
    bounded = all(r.max_amplitude <= 10.0 * amp0 for r in outcome.records)
    if outcome.termination == Termination.HORIZON_REACHED and bounded:
        drift = outcome.drift()
        if drift["mass"] > MASS_DRIFT_CONTRACT:
            notes.append(f"質量漂移 {drift['mass']:.3e} 超過 {MASS_DRIFT_CONTRACT}")
            logger.warning("[Evolve] %s", notes[-1])
        if drift["energy"] > ENERGY_DRIFT_CONTRACT:
            notes.append(f"能量漂移 {drift['energy']:.3e} 超過 {ENERGY_DRIFT_CONTRACT}")
            logger.warning("[Evolve] %s", notes[-1])
    return notes


def records_frame(records: Sequence[TrajectoryRecord], params: ProblemParams) -> pd.DataFrame:
    """欄位: t,mass,energy,px[,py,pz],grad_norm,eta,variance,z_R,dt"""
    momentum_cols = ["px", "py", "pz"][: params.N]
    rows = []
    for rec in records:
        row = {"t": rec.t, "mass": rec.conserved.mass, "energy": rec.conserved.energy}
        row.update(dict(zip(momentum_cols, rec.conserved.momentum)))
        row.update({
            "grad_norm": rec.grad_norm,
            "eta": rec.eta,
            "variance": np.nan if rec.variance is None else rec.variance,
            "z_R": np.nan if rec.z_R is None else rec.z_R,
            "dt": rec.dt,
        })
        rows.append(row)
    columns = ["t", "mass", "energy"] + momentum_cols + ["grad_norm", "eta", "variance", "z_R", "dt"]
    return pd.DataFrame(rows, columns=columns)


def confinement_check(records: Sequence[TrajectoryRecord], report: DichotomyReport,
                      params: ProblemParams, tolerance: float = 1e-3) -> dict:
    """
    第一種情形: ratio/(2ω₁) - tol <= η² 且 η <= λ₋ + tol
    第二種情形: η >= λ₊ - tol
    回傳違反的紀錄時間與最大超出量；違反時記錄警告。
    """
    if report.verdict == Verdict.GLOBAL_BOUNDED:
        floor = report.ratio / (2.0 * params.omega1)
        excess = [max(r.eta - report.lambda_minus, floor - r.eta ** 2) for r in records]
        case = 1
    elif report.verdict == Verdict.POSSIBLE_DIVERGENCE:
        excess = [report.lambda_plus - r.eta for r in records]
        case = 2
    else:
        return {"case": None, "ok": None, "max_excess": None, "violations": []}
    violations = [r.t for r, e in zip(records, excess) if e > tolerance]
    if violations:
        logger.warning("[Evolve] 情形 (%d) 的 η 界限在 %d 個紀錄被違反 (首次 t=%.6g)",
                       case, len(violations), violations[0])
    return {
        "case": case,
        "ok": not violations,
        "max_excess": float(max(excess)),
        "violations": violations,
        "tolerance": tolerance,
    }


def scattering_observables(records: Sequence[TrajectoryRecord], report: DichotomyReport,
                           params: ProblemParams) -> dict:
    """
    在週期盒子仍有效 (boundary_ok) 的時間窗內:
      - ‖u‖_{p+1} 相對初值的衰減比例
      - η² 與動能極限 ratio/ω₁ 的相對差 (L^{p+1} 範數趨於零時 E -> ‖∇u‖²/2)
      - η² 與下界 ratio/(2ω₁) 的相對差
    """
    window = []
    for rec in records:
        if not rec.boundary_ok:
            break
        window.append(rec)
    if len(window) < 2:
        return {"window_end": window[-1].t if window else None, "lp1_decay": None,
                "eta_gap": None, "eta_gap_lower_bound": None}
    p = params.p
    first, last = window[0], window[-1]
    norm0 = first.conserved.lp1_norm ** (1.0 / (p + 1.0))
    norm1 = last.conserved.lp1_norm ** (1.0 / (p + 1.0))
    limit = report.ratio / params.omega1
    lower = report.ratio / (2.0 * params.omega1)
    return {
        "window_end": last.t,
        "lp1_decay": 1.0 - norm1 / norm0 if norm0 > 0 else None,
        "eta_gap": abs(last.eta ** 2 - limit) / abs(limit) if limit else None,
        "eta_gap_lower_bound": abs(last.eta ** 2 - lower) / abs(lower) if lower else None,
    }
