"""
main.py
整個程式的主進入點。

    nls-virial run <scenario.json>... [--out DIR] [--jobs K]
    nls-virial groundstate --N 1 --p 7 --L 20 --points 512 --out DIR
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from nls_virial import __version__
from nls_virial.invariants.params_invariants import make_params
from nls_virial.pipeline.runner import run_batch, write_json
from nls_virial.solvers.groundstate import SolverOptions
from nls_virial.utils.cache_utils import GroundStateCache, save_ground_state
from nls_virial.utils.config_loader import Config
from nls_virial.utils.errors import NLSVirialError
from nls_virial.utils.spectral import Grid

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nls-virial",
        description="NLS 基態、二分法分類、virial 爆破上界與孤立子軌道擬合",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--env-file", default=".env", help="設定檔路徑 (預設 .env)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="執行一個或多個情境檔")
    run.add_argument("scenarios", nargs="+", help="情境檔 (JSON)")
    run.add_argument("--out", default=None, help="覆寫輸出目錄")
    run.add_argument("--jobs", type=int, default=None, help="平行執行的情境數 (預設取 NLS_VIRIAL_JOBS)")

    ground = subparsers.add_parser("groundstate", help="求解並匯出基態")
    ground.add_argument("--N", type=int, required=True)
    ground.add_argument("--p", type=float, required=True)
    ground.add_argument("--L", type=float, required=True, help="盒子半邊長")
    ground.add_argument("--points", type=int, required=True, help="每軸格點數 (2 的冪次)")
    ground.add_argument("--out", required=True, help="輸出目錄")
    ground.add_argument("--tolerance", type=float, default=SolverOptions.tolerance)
    ground.add_argument("--normalization", choices=("critical", "unit"), default="critical")
    return parser


def _groundstate(args, config: Config) -> int:
    params = make_params(args.N, args.p)
    grid = Grid(params.N, args.L, args.points)
    opts = SolverOptions(tolerance=args.tolerance, normalization=args.normalization)
    cache = GroundStateCache(config.cache_dir)
    cache.connect()
    Q = cache.get_or_solve(params, grid, opts)
    cache.close()
    out = Path(args.out)
    save_ground_state(out / "ground_state.bin", Q)
    write_json(out / "ground_state.json", {"schema": 1, "version": __version__, **Q.summary()})
    print(json.dumps({"residual": Q.residual, "iterations": Q.iterations, "cgn": Q.cgn}, sort_keys=True))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)

    # 1. 載入設定
    config = Config(args.env_file)
    logging.basicConfig(
        level=getattr(logging, config.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    # 2. 執行子命令
    if args.command == "groundstate":
        try:
            return _groundstate(args, config)
        except NLSVirialError as e:
            logger.error("%s", e)
            return getattr(e, "exit_code", 1)

    jobs = args.jobs if args.jobs is not None else config.jobs
    codes = run_batch(args.scenarios, args.out, jobs, args.env_file)
    # 多個情境時回傳最嚴重的結束碼
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
