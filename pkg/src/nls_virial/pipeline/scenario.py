"""
scenario.py
情境檔 (JSON) 的載入與驗證。驗證失敗一律以 ScenarioError 回報 "<檔名>:<行號>: <訊息>"。

範例:
{
  "schema": 1,
  "params": {"N": 1, "p": 7},
  "grid": {"L": 20, "points": 512},
  "initial_data": {"kind": "scaled_ground_state", "c": 1.5},
  "experiment": "full_pipeline",
  "options": {"evolve": {"t_max": 0.5}},
  "output": "out/blowup"
}
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from nls_virial.diagnostics.virial import VirialConstants
from nls_virial.invariants.params_invariants import BOUNDARY_TOLERANCE, Field, ProblemParams, make_params
from nls_virial.solvers.evolve import EvolveOptions
from nls_virial.solvers.groundstate import GroundState, SolverOptions
from nls_virial.utils.errors import ScenarioError, ValidationError
from nls_virial.utils.spectral import Grid

SCHEMA_VERSION = 1
EXPERIMENTS = ("groundstate", "classify", "evolve", "tb_bounds", "modulation", "full_pipeline")
INITIAL_KINDS = ("scaled_ground_state", "gaussian", "file")
NEEDS_INITIAL_DATA = {"classify", "evolve", "tb_bounds", "modulation", "full_pipeline"}
NEEDS_HORIZON = {"evolve", "full_pipeline"}
TOP_LEVEL_KEYS = {"schema", "params", "grid", "initial_data", "experiment", "options", "output"}
OPTION_KEYS = {"solver", "evolve", "constants", "classify_tolerance", "gamma", "R", "lambda", "rho",
               "min_points_per_width"}


@dataclass(frozen=True)
class ScenarioOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    evolve: EvolveOptions = field(default_factory=EvolveOptions)
    constants: VirialConstants = field(default_factory=VirialConstants)
    classify_tolerance: float = BOUNDARY_TOLERANCE
    gamma: Optional[float] = None
    R: Optional[float] = None
    modulation_lambda: Optional[float] = None
    rho: float = 0.05
    min_points_per_width: float = 1.0

    def __post_init__(self):
        if not self.classify_tolerance > 0:
            raise ValidationError(f"classify_tolerance 必須為正: {self.classify_tolerance}")
        if self.rho < 0:
            raise ValidationError(f"rho 必須 >= 0: {self.rho}")
        if not self.min_points_per_width > 0:
            raise ValidationError(f"min_points_per_width 必須為正: {self.min_points_per_width}")

    def as_dict(self) -> dict:
        return {
            "solver": self.solver.as_dict(),
            "evolve": self.evolve.as_dict(),
            "constants": self.constants.as_dict(),
            "classify_tolerance": self.classify_tolerance,
            "gamma": self.gamma,
            "R": self.R,
            "lambda": self.modulation_lambda,
            "rho": self.rho,
            "min_points_per_width": self.min_points_per_width,
        }


@dataclass(frozen=True)
class Scenario:
    path: Path
    params: ProblemParams
    grid: Grid
    initial_data: Dict[str, Any]
    experiment: str
    options: ScenarioOptions
    output: Path

    @property
    def name(self) -> str:
        return self.path.stem

    def resolved_config(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "grid": self.grid.describe(),
            "initial_data": self.initial_data,
            "experiment": self.experiment,
            "options": self.options.as_dict(),
        }


class _Locator:
    """以鍵名在原始文字中的位置找出行號"""

    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path

    def line(self, key: Optional[str] = None) -> int:
        if key is not None:
            match = re.search(r'"%s"\s*:' % re.escape(key), self.text)
            if match:
                return self.text.count("\n", 0, match.start()) + 1
        brace = self.text.find("{")
        return self.text.count("\n", 0, brace) + 1 if brace >= 0 else 1

    def error(self, message: str, key: Optional[str] = None) -> ScenarioError:
        return ScenarioError(message, self.path, self.line(key))


def _require(section: dict, key: str, where: str, loc: _Locator, anchor: str):
    if key not in section:
        raise loc.error(f"{where} 缺少必要欄位 '{key}'", anchor)
    return section[key]


def _number(value, key: str, loc: _Locator) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise loc.error(f"'{key}' 必須是數值，收到 {value!r}", key)
    return float(value)


def _build(cls, values, key: str, loc: _Locator):
    if not isinstance(values, dict):
        raise loc.error(f"'{key}' 必須是物件", key)
    try:
        return cls(**values)
    except TypeError as e:
        raise loc.error(f"'{key}' 含有未知欄位: {e}", key) from e
    except ValidationError as e:
        raise loc.error(str(e), key) from e


def _parse_initial_data(data, params: ProblemParams, grid: Grid, base: Path, loc: _Locator) -> dict:
    if not isinstance(data, dict):
        raise loc.error("'initial_data' 必須是物件", "initial_data")
    kind = _require(data, "kind", "initial_data", loc, "initial_data")
    if kind not in INITIAL_KINDS:
        raise loc.error(f"未知的 initial_data.kind '{kind}' (可用: {', '.join(INITIAL_KINDS)})", "kind")
    if kind == "scaled_ground_state":
        c = _number(_require(data, "c", "initial_data", loc, "kind"), "c", loc)
        return {"kind": kind, "c": c}
    if kind == "gaussian":
        amplitude = _number(_require(data, "amplitude", "initial_data", loc, "kind"), "amplitude", loc)
        width = _number(_require(data, "width", "initial_data", loc, "kind"), "width", loc)
        if not width > 0:
            raise loc.error(f"width 必須為正: {width}", "width")
        vectors = {}
        for key in ("center", "phase_velocity"):
            value = data.get(key, [0.0] * params.N)
            if not isinstance(value, list) or len(value) != params.N:
                raise loc.error(f"'{key}' 必須是長度 {params.N} 的陣列", key)
            vectors[key] = [_number(v, key, loc) for v in value]
        return {"kind": kind, "amplitude": amplitude, "width": width, **vectors}
    file_path = Path(_require(data, "path", "initial_data", loc, "kind"))
    if not file_path.is_absolute():
        file_path = base / file_path
    if not file_path.exists():
        raise loc.error(f"找不到初始資料檔 {file_path}", "path")
    try:
        values = _load_values(file_path, grid)
    except ValidationError as e:
        raise loc.error(str(e), "path") from e
    if not np.all(np.isfinite(values)):
        raise loc.error(f"{file_path} 含有 NaN 或 Inf", "path")
    return {"kind": kind, "path": str(file_path)}


def _load_values(file_path, grid: Grid) -> np.ndarray:
    try:
        values = np.load(file_path, allow_pickle=False)
    except (ValueError, OSError) as e:
        raise ValidationError(f"無法讀取 {file_path} 為 .npy 陣列: {e}") from e
    if not isinstance(values, np.ndarray):
        raise ValidationError(f"{file_path} 不是單一 .npy 陣列")
    if values.dtype.kind not in "biufc":
        raise ValidationError(f"{file_path}: 資料型別 {values.dtype} 不是數值")
    if values.shape != grid.shape:
        raise ValidationError(f"{file_path}: 形狀 {values.shape} 與格點 {grid.shape} 不符")
    return values


def _parse_options(data, loc: _Locator, min_points_per_width: float) -> ScenarioOptions:
    if not isinstance(data, dict):
        raise loc.error("'options' 必須是物件", "options")
    unknown = set(data) - OPTION_KEYS
    if unknown:
        raise loc.error(f"未知的選項: {', '.join(sorted(unknown))}", sorted(unknown)[0])
    kwargs = {}
    if "solver" in data:
        kwargs["solver"] = _build(SolverOptions, data["solver"], "solver", loc)
    if "evolve" in data:
        kwargs["evolve"] = _build(EvolveOptions, data["evolve"], "evolve", loc)
    if "constants" in data:
        kwargs["constants"] = _build(VirialConstants, data["constants"], "constants", loc)
    for key, target in (("classify_tolerance", "classify_tolerance"), ("gamma", "gamma"), ("R", "R"),
                        ("lambda", "modulation_lambda"), ("rho", "rho"),
                        ("min_points_per_width", "min_points_per_width")):
        if key in data:
            kwargs[target] = _number(data[key], key, loc)
    kwargs.setdefault("min_points_per_width", min_points_per_width)
    try:
        return ScenarioOptions(**kwargs)
    except ValidationError as e:
        raise loc.error(str(e), "options") from e


def parse_scenario(text: str, path="<scenario>", output_override=None,
                   min_points_per_width: float = 1.0) -> Scenario:
    path = Path(path)
    loc = _Locator(text, str(path))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"JSON 格式錯誤: {e.msg}", str(path), e.lineno) from e
    if not isinstance(data, dict):
        raise loc.error("情境檔的最上層必須是物件")

    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise loc.error(f"未知的欄位: {', '.join(sorted(unknown))}", sorted(unknown)[0])
    schema = data.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise loc.error(f"不支援的 schema {schema!r} (需要 {SCHEMA_VERSION})", "schema")

    params_section = _require(data, "params", "情境檔", loc, None)
    if not isinstance(params_section, dict):
        raise loc.error("'params' 必須是物件", "params")
    N = _require(params_section, "N", "params", loc, "params")
    p = _number(_require(params_section, "p", "params", loc, "params"), "p", loc)
    if isinstance(N, bool) or not isinstance(N, int):
        raise loc.error(f"'N' 必須是整數，收到 {N!r}", "N")
    try:
        params = make_params(N, p)
    except ValidationError as e:
        raise loc.error(str(e), "p") from e

    grid_section = _require(data, "grid", "情境檔", loc, "params")
    if not isinstance(grid_section, dict):
        raise loc.error("'grid' 必須是物件", "grid")
    extent = _number(_require(grid_section, "L", "grid", loc, "grid"), "L", loc)
    points = _require(grid_section, "points", "grid", loc, "grid")
    if isinstance(points, bool) or not isinstance(points, int):
        raise loc.error(f"'points' 必須是整數，收到 {points!r}", "points")
    try:
        grid = Grid(params.N, extent, points)
    except ValidationError as e:
        raise loc.error(str(e), "grid") from e

    experiment = _require(data, "experiment", "情境檔", loc, None)
    if experiment not in EXPERIMENTS:
        raise loc.error(f"未知的 experiment '{experiment}' (可用: {', '.join(EXPERIMENTS)})", "experiment")

    initial_data = {}
    if experiment in NEEDS_INITIAL_DATA:
        initial_data = _parse_initial_data(
            _require(data, "initial_data", "情境檔", loc, "experiment"), params, grid, path.parent, loc
        )
    options_section = data.get("options", {})
    if experiment in NEEDS_HORIZON:
        evolve_section = options_section.get("evolve") if isinstance(options_section, dict) else None
        if not isinstance(evolve_section, dict) or "t_max" not in evolve_section:
            raise loc.error(f"experiment '{experiment}' 需要 options.evolve.t_max", "options" if options_section else "experiment")
    options = _parse_options(options_section, loc, min_points_per_width)

    if output_override is not None:
        output = Path(output_override)
    else:
        output = Path(_require(data, "output", "情境檔", loc, "experiment"))
    return Scenario(path, params, grid, initial_data, experiment, options, output)


def load_scenario(path, output_override=None, min_points_per_width: float = 1.0) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError("找不到情境檔", str(path), 1)
    return parse_scenario(path.read_text(encoding="utf-8"), path, output_override, min_points_per_width)


def build_initial_data(scenario: Scenario, Q: Optional[GroundState] = None) -> Field:
    initial = scenario.initial_data
    grid, params = scenario.grid, scenario.params
    kind = initial.get("kind")
    if kind == "scaled_ground_state":
        if Q is None:
            raise ValidationError("scaled_ground_state 需要基態")
        return Field(initial["c"] * Q.profile.values, grid, params)
    if kind == "gaussian":
        shifted = sum((x - c) ** 2 for x, c in zip(grid.coords, initial["center"]))
        phase = sum(x * v for x, v in zip(grid.coords, initial["phase_velocity"]))
        values = initial["amplitude"] * np.exp(-shifted / initial["width"] ** 2) * np.exp(1j * phase)
        return Field(values, grid, params)
    if kind == "file":
        return Field(_load_values(initial["path"], grid), grid, params)
    raise ValidationError(f"experiment '{scenario.experiment}' 沒有初始資料")
