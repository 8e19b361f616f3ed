"""
全局配置 — 环境变量优先 (前缀 MANIFOLD_SDE_)，支持 .env 文件
"""
import os
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """应用配置 (环境变量 > .env > 默认值)"""

    # ---- 应用 ----
    APP_NAME: str = "ManifoldSDE"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # ---- 并行 (MANIFOLD_SDE_THREADS) ----
    THREADS: Optional[int] = None
    ENSEMBLE_BATCH_SIZE: int = 1024   # 固定批大小, 与线程数无关 → 结果可复现
    NOISE_BLOCK_STEPS: int = 512      # 每次从随机流抽取的步数

    # ---- 数值容差 ----
    ON_MANIFOLD_TOL: float = 1e-10
    INVARIANCE_TOL: float = 1e-8
    TOL_EIG: float = 1e-9
    DEFAULT_STEP: float = 1e-3
    ANGLE_THRESHOLD: float = 1e-3     # 非特征性检查的最小夹角 (弧度)
    NEWTON_MAX_ITER: int = 50
    FD_STEP: float = 1e-5

    # ---- 截断 (例 1 中 ε 的角色) ----
    TRUNCATION_INNER_RADIUS: float = 0.5
    TRUNCATION_OUTER_RADIUS: float = 0.9

    model_config = {
        "env_prefix": "MANIFOLD_SDE_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def worker_count(threads: Optional[int] = None) -> int:
    """实际使用的线程数: 显式参数 > MANIFOLD_SDE_THREADS > CPU 核数"""
    if threads is not None:
        return max(1, int(threads))
    configured = get_settings().THREADS
    if configured:
        return max(1, configured)
    return os.cpu_count() or 1
