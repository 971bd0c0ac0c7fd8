"""
config_loader.py
用於載入專案配置 (快取目錄、日誌等級、平行數等)。可結合 .env 或環境變數。
"""

import os
from pathlib import Path

from dotenv import load_dotenv


class Config:
    def __init__(self, env_file: str = ".env"):
        """
        :param env_file: 指定 .env 檔案路徑 (不存在時僅讀取環境變數)
        """
        load_dotenv(env_file)  # 讀取 .env
        default_cache = Path.home() / ".cache" / "nls_virial"
        self.cache_dir = Path(os.getenv("NLS_VIRIAL_CACHE", str(default_cache))).expanduser()
        self.log_level = os.getenv("NLS_VIRIAL_LOG_LEVEL", "INFO").upper()
        self.jobs = int(os.getenv("NLS_VIRIAL_JOBS", "1"))
        # mass_rescale 的混疊防護: 每個梯度長度尺度至少要有幾個格點
        self.min_points_per_width = float(os.getenv("NLS_VIRIAL_MIN_POINTS_PER_WIDTH", "1.0"))

    def as_dict(self) -> dict:
        return {
            "cache_dir": str(self.cache_dir),
            "log_level": self.log_level,
            "jobs": self.jobs,
            "min_points_per_width": self.min_points_per_width,
        }


if __name__ == "__main__":
    # 測試
    config = Config()
    print("Cache dir:", config.cache_dir)
    print("Log level:", config.log_level)
