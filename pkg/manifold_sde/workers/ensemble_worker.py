"""
系综模拟 Worker — 线程池按固定批次推进多条轨道

每条轨道的随机流由 (seed, stream, 轨道编号) 决定, 批大小来自配置而非线程数,
批结果按轨道编号重新拼接, 因此输出与调度顺序、线程数无关。
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from manifold_sde.config import get_settings, worker_count
from manifold_sde.errors import DimensionMismatchError, EnsembleError, GridError
from manifold_sde.services.sde_core import (
    SdeSystem,
    advance,
    brownian_generator,
    step_count,
)

logger = logging.getLogger(__name__)

StopRule = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EnsembleRun:
    """times: (R,); states: (E, R, n), 停止后为 NaN; lifetimes: (E,), 存活轨道为 inf"""

    times: np.ndarray = field(compare=False)
    states: np.ndarray = field(compare=False)
    lifetimes: np.ndarray = field(compare=False)
    seed: int = 0
    stream: int = 0

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def survived(self) -> np.ndarray:
        return np.isinf(self.lifetimes)

    def to_frame(self) -> pd.DataFrame:
        """长表: traj_id, t, x1..xn"""
        e, r, n = self.states.shape
        frame = pd.DataFrame(self.states.reshape(e * r, n), columns=[f"x{i + 1}" for i in range(n)])
        frame.insert(0, "t", np.tile(self.times, e))
        frame.insert(0, "traj_id", np.repeat(np.arange(e), r))
        return frame


def _initial_states(sys: SdeSystem, x0, ensemble: int) -> np.ndarray:
    start = np.asarray(x0, dtype=float)
    if start.shape == (sys.dim,):
        return np.broadcast_to(start, (ensemble, sys.dim)).copy()
    if start.shape == (ensemble, sys.dim):
        return start.copy()
    raise DimensionMismatchError(f"初值形状 {start.shape} 应为 ({sys.dim},) 或 ({ensemble}, {sys.dim})")


def _run_batch(
    sys: SdeSystem,
    x0: np.ndarray,
    ids: np.ndarray,
    steps: int,
    h: float,
    seed: int,
    stream: int,
    record_every: int,
    stop_when: Optional[StopRule],
    block_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    size = len(ids)
    gens = [brownian_generator(seed, int(t), stream) for t in ids]
    scale = math.sqrt(h)
    x = x0.copy()
    alive = np.all(np.isfinite(x), axis=1)
    lifetimes = np.where(alive, np.inf, 0.0)
    if stop_when is not None:
        stopped = alive & np.asarray(stop_when(x), dtype=bool)
        lifetimes[stopped] = 0.0
        alive &= ~stopped
    records = np.full((size, steps // record_every + 1, sys.dim), np.nan)
    records[alive, 0] = x[alive]

    with np.errstate(all="ignore"):
        for start in range(0, steps, block_steps):
            count = min(block_steps, steps - start)
            # 按块抽取: 顺序抽样, 分块与一次性抽取逐位一致
            dW = np.stack([scale * g.standard_normal((count, sys.noise_dim)) for g in gens])
            for j in range(count):
                k = start + j
                candidate = advance(sys, x, dW[:, j, :], h)
                bad = ~np.all(np.isfinite(candidate), axis=1)
                if stop_when is not None:
                    bad |= np.asarray(stop_when(np.where(bad[:, None], x, candidate)), dtype=bool)
                newly_dead = alive & bad
                lifetimes[newly_dead] = k * h
                alive &= ~bad
                x = np.where(alive[:, None], candidate, x)
                if (k + 1) % record_every == 0:
                    slot = (k + 1) // record_every
                    records[alive, slot] = x[alive]
    return records, lifetimes


def run_ensemble(
    sys: SdeSystem,
    x0,
    T: float,
    h: float,
    ensemble: int,
    seed: int,
    stream: int = 0,
    record_every: Optional[int] = None,
    stop_when: Optional[StopRule] = None,
    threads: Optional[int] = None,
) -> EnsembleRun:
    """
    并行推进 ensemble 条轨道

    record_every: 记录间隔 (步数), 默认只记录 t=0 与 t=T
    stop_when:    (E, n) → bool 掩码, 为真的轨道在上一个有效状态处停止
    """
    settings = get_settings()
    steps = step_count(T, h)
    if ensemble < 1:
        raise EnsembleError(f"系综规模必须为正: {ensemble}")
    stride = steps if record_every is None else int(record_every)
    if stride < 1 or steps % stride:
        raise GridError(f"记录间隔 {stride} 必须整除步数 {steps}")

    starts = _initial_states(sys, x0, ensemble)
    batch = max(1, settings.ENSEMBLE_BATCH_SIZE)
    block = max(1, settings.NOISE_BLOCK_STEPS)
    chunks = [np.arange(lo, min(lo + batch, ensemble)) for lo in range(0, ensemble, batch)]
    workers = min(worker_count(threads), len(chunks))
    logger.info(
        "🚀 系综模拟 %s: %d 条轨道, %d 步, %d 批, %d 线程", sys.name, ensemble, steps, len(chunks), workers
    )

    def task(ids: np.ndarray):
        return _run_batch(sys, starts[ids], ids, steps, h, seed, stream, stride, stop_when, block)

    if workers == 1:
        results = [task(ids) for ids in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map 保持提交顺序
            results = list(pool.map(task, chunks))

    states = np.concatenate([r[0] for r in results], axis=0)
    lifetimes = np.concatenate([r[1] for r in results])
    stopped = int(np.sum(~np.isinf(lifetimes)))
    if stopped:
        logger.warning("⚠️ %d/%d 条轨道在 T 之前停止 (发散或越界)", stopped, ensemble)
    times = np.arange(steps // stride + 1) * (stride * h)
    return EnsembleRun(times, states, lifetimes, int(seed), int(stream))
