"""
runner.py
執行情境檔中的實驗並寫出產物:
  - meta.json        參數、導出量、版本、執行設定、耗時
  - report.json      各階段結果 (schema 1，鍵排序，不含耗時，可逐位元重現)
  - trajectory.csv   有時間演化時才寫出 (17 位有效數字)
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from nls_virial import __version__
from nls_virial.diagnostics import modulation, virial
from nls_virial.invariants import params_invariants as invariants
from nls_virial.invariants.params_invariants import Field, Verdict
from nls_virial.pipeline.scenario import SCHEMA_VERSION, Scenario, build_initial_data, load_scenario
from nls_virial.solvers import evolve as evolution
from nls_virial.solvers.groundstate import GroundState
from nls_virial.utils.cache_utils import GroundStateCache, save_ground_state
from nls_virial.utils.config_loader import Config
from nls_virial.utils.errors import NLSVirialError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

BOUNDARY_NOTE = "boundary case excluded by strict inequality"
ABOVE_THRESHOLD_NOTE = "ratio above the ground-state threshold; the dichotomy does not apply"


def _clean(value):
    """JSON 不接受 NaN/Inf，轉成 None；其餘遞迴處理"""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _clean(value.item())
    return value


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_clean(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_trajectory(path: Path, outcome: evolution.EvolveOutcome, scenario: Scenario) -> None:
    frame = evolution.records_frame(outcome.records, scenario.params)
    frame.to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# 各階段
# ---------------------------------------------------------------------------
def stage_groundstate(scenario: Scenario, cache: GroundStateCache) -> GroundState:
    Q = cache.get_or_solve(scenario.params, scenario.grid, scenario.options.solver)
    return Q


def stage_classify(u0: Field, Q: GroundState, scenario: Scenario) -> dict:
    tolerance = scenario.options.classify_tolerance
    report = invariants.classify(u0, Q, tolerance)
    block = {
        "conserved": invariants.conserved(u0).as_dict(),
        "dichotomy": report.as_dict(),
        "bounds": invariants.dichotomy_bounds(u0, Q),
    }
    try:
        block["galilean"] = invariants.galilean_reclassify(u0, Q, tolerance).as_dict()
    except ValidationError as e:
        block["galilean"] = {"skipped": str(e)}
    return block


def stage_bounds(u0: Field, Q: GroundState, scenario: Scenario) -> dict:
    """計算所有適用的爆破時間上界；前提不成立者記為 skipped 並附原因"""
    opts = scenario.options
    constants = opts.constants
    bounds: Dict[str, dict] = {}
    try:
        bounds["variance"] = virial.tb_variance(u0, Q).as_dict()
    except ValidationError as e:
        bounds["variance"] = {"skipped": str(e)}

    if opts.gamma is None or opts.R is None:
        reason = "options.gamma 與 options.R 未設定"
        bounds["localized"] = {"skipped": reason}
        bounds["radial"] = {"skipped": reason}
        return bounds
    try:
        bounds["localized"] = virial.tb_localized(
            u0, Q, opts.gamma, opts.R, constants.C1, constants.C2, constants.C
        ).as_dict()
    except ValidationError as e:
        bounds["localized"] = {"skipped": str(e)}
    if scenario.params.N == 1:
        bounds["radial"] = {"skipped": "徑向上界只適用於 N >= 2"}
    else:
        try:
            bounds["radial"] = virial.tb_radial(u0, Q, opts.gamma, opts.R, constants.C_gamma, constants.C_Q).as_dict()
        except ValidationError as e:
            bounds["radial"] = {"skipped": str(e)}
    return bounds


def stage_evolve(u0: Field, Q: GroundState, scenario: Scenario, out_dir: Path) -> evolution.EvolveOutcome:
    outcome = evolution.evolve(u0, scenario.options.evolve, Q)
    write_trajectory(out_dir / "trajectory.csv", outcome, scenario)
    return outcome


def stage_modulation(u0: Field, Q: GroundState, scenario: Scenario) -> dict:
    opts = scenario.options
    unscaled = modulation.fit_unscaled(u0, Q, opts.modulation_lambda, opts.min_points_per_width)
    v = invariants.mass_rescale(u0, Q, opts.min_points_per_width)
    energy_ok, gradient_ok = modulation.hypotheses_check(v, Q, unscaled.normalized.lam, opts.rho)
    return {
        "fit": unscaled.as_dict(),
        "hypotheses": {"rho": opts.rho, "energy": energy_ok, "gradient": gradient_ok},
        "orbit_proximity": modulation.orbit_proximity(v, Q),
    }


def _verdict_block(dichotomy: dict, outcome: evolution.EvolveOutcome, bounds: Optional[dict],
                   confinement: dict, scattering: Optional[dict]) -> dict:
    predicted = dichotomy["verdict"]
    t_b = None
    if bounds and "t_b_unscaled" in bounds.get("variance", {}):
        t_b = bounds["variance"]["t_b_unscaled"]
    t_obs = outcome.blowup_time
    block = {
        "predicted": predicted,
        "observed": outcome.termination.value,
        "t_obs": t_obs,
        "t_b_variance": t_b,
        "before_bound": None if t_obs is None or t_b is None else t_obs < t_b,
        "confinement": confinement,
        "scattering": scattering,
    }
    consistent = bool(confinement.get("ok", True))
    if predicted == Verdict.GLOBAL_BOUNDED.value:
        consistent = consistent and outcome.termination == evolution.Termination.HORIZON_REACHED
    elif predicted == Verdict.POSSIBLE_DIVERGENCE.value and t_b is not None:
        if t_obs is not None:
            consistent = consistent and t_obs < t_b
        elif outcome.termination == evolution.Termination.HORIZON_REACHED:
            consistent = consistent and outcome.t_end <= t_b
    block["consistent"] = consistent
    return block


def full_pipeline(scenario: Scenario, Q: GroundState, u0: Field, out_dir: Path) -> dict:
    """基態 -> 分類 -> (第二種情形) 爆破上界 -> 時間演化 -> 預測與觀察的比對"""
    report: Dict[str, object] = {}
    classified = stage_classify(u0, Q, scenario)
    report["classify"] = classified
    verdict = classified["dichotomy"]["verdict"]
    if verdict == Verdict.BOUNDARY_INDETERMINATE.value:
        logger.info("[Pipeline] %s，於分類後停止", BOUNDARY_NOTE)
        report["notes"] = [BOUNDARY_NOTE]
        return report
    if verdict == Verdict.ABOVE_THRESHOLD.value:
        logger.info("[Pipeline] %s，於分類後停止", ABOVE_THRESHOLD_NOTE)
        report["notes"] = [ABOVE_THRESHOLD_NOTE]
        return report

    bounds = None
    if verdict == Verdict.POSSIBLE_DIVERGENCE.value:
        bounds = stage_bounds(u0, Q, scenario)
        report["bounds"] = bounds

    logger.info("[Pipeline] 開始時間演化")
    outcome = stage_evolve(u0, Q, scenario, out_dir)
    report["evolve"] = outcome.summary()
    dichotomy = invariants.classify(u0, Q, scenario.options.classify_tolerance)
    confinement = evolution.confinement_check(outcome.records, dichotomy, scenario.params)
    scattering = None
    if verdict == Verdict.GLOBAL_BOUNDED.value:
        scattering = evolution.scattering_observables(outcome.records, dichotomy, scenario.params)
    if bounds and "t_b" in bounds.get("variance", {}):
        curvature = virial.scaled_variance_curvature(outcome.records, virial_report_from(bounds["variance"]))
        interior = curvature["curvature"].dropna()
        report["variance_curvature"] = {
            "max": float(interior.max()) if len(interior) else None,
            "points": int(len(interior)),
        }
    report["verdict"] = _verdict_block(classified["dichotomy"], outcome, bounds, confinement, scattering)
    return report


def virial_report_from(block: dict) -> virial.VirialReport:
    return virial.VirialReport(
        variant=virial.BoundVariant(block["variant"]),
        r0=block["r0"],
        r0_prime=block["r0_prime"],
        t_b=block["t_b"],
        t_b_unscaled=block["t_b_unscaled"],
        lambda_plus=block["lambda_plus"],
        denominator=block["denominator"],
        beta=block["beta"],
        mass_factor=block["mass_factor"],
    )


def execute(scenario: Scenario, config: Config) -> dict:
    """執行實驗並回傳 report 內容 (不含 schema/版本外框)；例外直接往外拋"""
    out_dir = scenario.output
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = GroundStateCache(config.cache_dir)
    cache.connect()
    try:
        Q = stage_groundstate(scenario, cache)
    finally:
        cache.close()
    report: Dict[str, object] = {"groundstate": Q.summary()}

    if scenario.experiment == "groundstate":
        save_ground_state(out_dir / "ground_state.bin", Q)
        return report

    u0 = build_initial_data(scenario, Q)
    if scenario.experiment == "classify":
        report["classify"] = stage_classify(u0, Q, scenario)
    elif scenario.experiment == "evolve":
        outcome = stage_evolve(u0, Q, scenario, out_dir)
        dichotomy = invariants.classify(u0, Q, scenario.options.classify_tolerance)
        report["evolve"] = outcome.summary()
        report["confinement"] = evolution.confinement_check(outcome.records, dichotomy, scenario.params)
    elif scenario.experiment == "tb_bounds":
        classified = stage_classify(u0, Q, scenario)
        report["classify"] = classified
        if classified["dichotomy"]["verdict"] == Verdict.POSSIBLE_DIVERGENCE.value:
            report["bounds"] = stage_bounds(u0, Q, scenario)
        else:
            report["notes"] = [f"verdict {classified['dichotomy']['verdict']}: 爆破上界不適用"]
    elif scenario.experiment == "modulation":
        report["modulation"] = stage_modulation(u0, Q, scenario)
    else:
        report.update(full_pipeline(scenario, Q, u0, out_dir))
    return report


def run(scenario: Scenario, config: Optional[Config] = None) -> int:
    """
    執行單一情境並寫出產物。

    :return: 結束碼 (0 成功、1 驗證失敗、2 數值失敗)
    """
    config = config or Config()
    started = time.perf_counter()
    logger.info("[Runner] 情境 %s: experiment=%s 輸出=%s", scenario.name, scenario.experiment, scenario.output)
    try:
        body = execute(scenario, config)
    except ValidationError as e:
        logger.error("[Runner] 驗證失敗: %s", e)
        return e.exit_code
    except NumericalError as e:
        logger.error("[Runner] 數值失敗: %s", e)
        return e.exit_code

    report = {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "scenario": scenario.name,
        "experiment": scenario.experiment,
        "config": scenario.resolved_config(),
    }
    report.update(body)
    write_json(scenario.output / "report.json", report)
    write_json(scenario.output / "meta.json", {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "scenario": str(scenario.path),
        "params": scenario.params.as_dict(),
        "grid": scenario.grid.describe(),
        "runtime_config": config.as_dict(),
        "wall_time": time.perf_counter() - started,
    })
    logger.info("[Runner] 完成 %s (%.2f s)", scenario.name, time.perf_counter() - started)
    return 0


def _run_file(path: str, out: Optional[str], env_file: str) -> int:
    config = Config(env_file)
    try:
        scenario = load_scenario(path, out, config.min_points_per_width)
    except NLSVirialError as e:
        logger.error("%s", e)
        return getattr(e, "exit_code", 1)
    return run(scenario, config)


def run_batch(paths: Sequence[str], out: Optional[str] = None, jobs: int = 1, env_file: str = ".env") -> List[int]:
    """
    多個情境檔；有多個檔案且指定 --out 時，每個情境寫到 out/<情境檔名>/ 以互相隔離。
    jobs > 1 時以行程池平行執行。
    """
    targets = []
    for path in paths:
        target = out
        if out is not None and len(paths) > 1:
            target = str(Path(out) / Path(path).stem)
        targets.append(target)
    if jobs <= 1 or len(paths) <= 1:
        return [_run_file(path, target, env_file) for path, target in zip(paths, targets)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_file, path, target, env_file) for path, target in zip(paths, targets)]
        return [f.result() for f in futures]
