"""
cache_utils.py
基態的二進位匯出/匯入與磁碟快取。

檔案格式 (little-endian):
    header: magic b"NLSQ", version (u16), N (u8), pad, p (f64), L (f64), points (u32),
            coefficient (f64), residual (f64), iterations (u32)
    body:   points^N 個 '<f8' (實數剖面，C 順序)
"""

import hashlib
import json
import logging
import os
import struct
import tempfile
import threading
from pathlib import Path
from typing import Optional

import numpy as np

from nls_virial.invariants.params_invariants import Field, ProblemParams, conserved, make_params
from nls_virial.solvers.groundstate import GroundState, SolverOptions, gn_ratio, solve_ground_state
from nls_virial.utils.errors import ValidationError
from nls_virial.utils.spectral import Grid

logger = logging.getLogger(__name__)

MAGIC = b"NLSQ"
VERSION = 1
HEADER = struct.Struct("<4sHBxddIddI")


def save_ground_state(path, Q: GroundState) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = Q.grid
    header = HEADER.pack(
        MAGIC, VERSION, grid.dim, Q.params.p, grid.extent, grid.points,
        Q.coefficient, Q.residual, Q.iterations,
    )
    body = np.ascontiguousarray(np.real(Q.profile.values), dtype="<f8").tobytes()
    # 每個寫入者各自一個暫存檔，寫完再以 os.replace 原子性地換上
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(header + body)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def load_ground_state(path) -> GroundState:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValidationError(f"{path}: 檔案太短，不是基態檔")
    magic, version, N, p, extent, points, coefficient, residual, iterations = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError(f"{path}: magic 不符 ({magic!r})")
    if version != VERSION:
        raise ValidationError(f"{path}: 不支援的版本 {version}")
    params = make_params(N, p)
    grid = Grid(N, extent, points)
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if values.size != grid.size:
        raise ValidationError(f"{path}: 資料長度 {values.size} 與格點 {grid.size} 不符")
    profile = Field(values.reshape(grid.shape), grid, params)
    return GroundState(
        profile=profile,
        norms=conserved(profile),
        cgn=gn_ratio(profile),
        residual=residual,
        iterations=iterations,
        coefficient=coefficient,
    )


class GroundStateCache:
    def __init__(self, cache_dir):
        """
        :param cache_dir: 快取目錄 (通常來自 Config.cache_dir)
        """
        self.cache_dir = Path(cache_dir)
        self._lock = threading.Lock()
        self.connected = False

    def connect(self):
        """
        建立快取目錄
        """
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.connected = True

    @staticmethod
    def key(params: ProblemParams, grid: Grid, opts: SolverOptions) -> str:
        payload = {
            "N": params.N,
            "p": params.p,
            "L": grid.extent,
            "points": grid.points,
            "tolerance": opts.tolerance,
            "normalization": opts.normalization,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    def path_for(self, params: ProblemParams, grid: Grid, opts: SolverOptions) -> Path:
        return self.cache_dir / f"Q_{self.key(params, grid, opts)[:16]}.bin"

    def load(self, params: ProblemParams, grid: Grid, opts: SolverOptions) -> Optional[GroundState]:
        path = self.path_for(params, grid, opts)
        if not path.exists():
            return None
        try:
            Q = load_ground_state(path)
        except ValidationError as e:
            logger.warning("[Cache] 快取檔損壞，將重新求解: %s", e)
            return None
        logger.info("[Cache] 命中 %s", path.name)
        return Q

    def save(self, Q: GroundState, opts: SolverOptions) -> Path:
        if not self.connected:
            self.connect()
        path = self.path_for(Q.params, Q.grid, opts)
        with self._lock:
            save_ground_state(path, Q)
        logger.info("[Cache] 已寫入 %s", path.name)
        return path

    def get_or_solve(self, params: ProblemParams, grid: Grid, opts: SolverOptions) -> GroundState:
        Q = self.load(params, grid, opts)
        if Q is None:
            Q = solve_ground_state(params, grid, opts)
            self.save(Q, opts)
        return Q

    def close(self):
        """
        釋放資源 (目前只重設狀態)
        """
        self.connected = False
