"""
SDE 核心 — Brownian 路径、Ito / Stratonovich 步进、离散随机积分、演算转换

约定:
  - Ito 积分: 被积函数取左端点值
  - Stratonovich 积分: 被积函数取中点, 离散化为两端点平均 (梯形/Heun 形式)
  - 步进器拒绝不匹配的演算标记, 转换必须通过 convert_calculus 显式完成
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import sympy

from manifold_sde.errors import (
    CalculusMismatchError,
    DimensionMismatchError,
    GridError,
    NonPolynomialError,
)
from manifold_sde.services.fields import (
    MatrixField,
    PolynomialMatrixField,
    PolynomialVectorField,
    SummedField,
    VectorField,
    default_variables,
    generators,
)

logger = logging.getLogger(__name__)


class Calculus(str, enum.Enum):
    ITO = "ito"
    STRATONOVICH = "stratonovich"


# ==========================================
# 1. 系统定义
# ==========================================
@dataclass(frozen=True)
class SdeSystem:
    drift: VectorField
    diffusion: MatrixField
    calculus: Calculus
    name: str = "anonymous"
    variables: tuple[str, ...] = ()
    # 线性部分 A (仅作元数据, drift 已包含 Ax)
    linear_part: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "calculus", Calculus(self.calculus))
        if self.drift.dim != self.diffusion.dim:
            raise DimensionMismatchError(
                f"漂移维数 {self.drift.dim} 与扩散矩阵行数 {self.diffusion.dim} 不一致"
            )
        if not self.variables:
            object.__setattr__(self, "variables", default_variables(self.drift.dim))
        elif len(self.variables) != self.drift.dim:
            raise DimensionMismatchError(f"变量名个数 {len(self.variables)} 与维数 {self.drift.dim} 不一致")
        if self.linear_part is not None:
            a = np.asarray(self.linear_part, dtype=float)
            if a.shape != (self.dim, self.dim):
                raise DimensionMismatchError(f"线性部分形状 {a.shape} 应为 {self.dim}×{self.dim}")
            object.__setattr__(self, "linear_part", a)

    @property
    def dim(self) -> int:
        return self.drift.dim

    @property
    def noise_dim(self) -> int:
        return self.diffusion.noise_dim

    @property
    def is_polynomial(self) -> bool:
        return isinstance(self.drift, PolynomialVectorField) and isinstance(self.diffusion, PolynomialMatrixField)

    def with_drift(self, drift: VectorField, calculus: Calculus) -> "SdeSystem":
        return replace(self, drift=drift, calculus=calculus)


def _check_point(sys: SdeSystem, x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0 or pts.shape[-1] != sys.dim:
        raise DimensionMismatchError(f"状态形状 {pts.shape} 与系统维数 {sys.dim} 不一致")
    return pts


def _check_increment(sys: SdeSystem, dW) -> np.ndarray:
    inc = np.asarray(dW, dtype=float)
    if inc.ndim == 0:
        inc = inc.reshape(1)
    if inc.shape[-1] != sys.noise_dim:
        raise DimensionMismatchError(f"噪声增量形状 {inc.shape} 与噪声维数 {sys.noise_dim} 不一致")
    return inc


def _apply_diffusion(b: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """B(x)·dW, 按噪声列逐列累加 (逐元素, 结果与批大小无关)"""
    out = b[..., :, 0] * dW[..., None, 0]
    for j in range(1, b.shape[-1]):
        out = out + b[..., :, j] * dW[..., None, j]
    return out


# ==========================================
# 2. 网格与 Brownian 路径
# ==========================================
def step_count(horizon: float, h: float, what: str = "T") -> int:
    """校验 horizon/h 为正整数 (相对误差 1e-12)"""
    if h <= 0:
        raise GridError(f"步长必须为正: h={h}")
    if horizon <= 0:
        raise GridError(f"{what} 必须为正: {what}={horizon}")
    ratio = horizon / h
    n = int(round(ratio))
    if n < 1 or abs(n * h - horizon) > 1e-12 * horizon:
        raise GridError(f"{what}/h = {ratio!r} 不是正整数")
    return n


def brownian_generator(seed: int, trajectory: int = 0, stream: int = 0) -> np.random.Generator:
    """计数器型随机流 (Philox), 以 (seed, stream, trajectory) 为键, 与调度顺序无关"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(trajectory)])))


@dataclass(frozen=True)
class BrownianPath:
    step: float
    steps: int
    increments: np.ndarray = field(compare=False)
    seed: int = 0

    @property
    def noise_dim(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.step

    @property
    def values(self) -> np.ndarray:
        """W(t_k), 形状 (N+1, m), 首行为 0"""
        w = np.zeros((self.steps + 1, self.noise_dim))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w

    def coarsen(self, factor: int) -> "BrownianPath":
        """同一条路径在 factor 倍粗网格上的表示 (相邻增量求和)"""
        factor = int(factor)
        if factor < 1 or self.steps % factor:
            raise GridError(f"步数 {self.steps} 不能被粗化因子 {factor} 整除")
        coarse = self.increments.reshape(self.steps // factor, factor, self.noise_dim).sum(axis=1)
        return BrownianPath(self.step * factor, self.steps // factor, coarse, self.seed)


def sample_brownian_path(m: int, T: float, h: float, seed: int) -> BrownianPath:
    """N = T/h 行独立高斯增量, 每个分量均值 0 方差 h"""
    n = step_count(T, h)
    if m < 1:
        raise DimensionMismatchError(f"噪声维数必须为正: {m}")
    increments = math.sqrt(h) * brownian_generator(seed).standard_normal((n, m))
    return BrownianPath(float(h), n, increments, int(seed))


def sample_increments(m: int, n: int, h: float, seed: int, trajectories: Sequence[int], stream: int = 0) -> np.ndarray:
    """多条路径的增量, 形状 (len(trajectories), n, m); 第 i 条与单路径采样逐位一致"""
    scale = math.sqrt(h)
    return np.stack([scale * brownian_generator(seed, t, stream).standard_normal((n, m)) for t in trajectories])


# ==========================================
# 3. 步进器
# ==========================================
def euler_maruyama_step(sys: SdeSystem, x, dW, h: float) -> np.ndarray:
    """x' = x + F(x)h + B(x)dW  (Ito)"""
    if sys.calculus is not Calculus.ITO:
        raise CalculusMismatchError("Euler–Maruyama 只用于 Ito 系统; 请先 convert_calculus")
    if h <= 0:
        raise GridError(f"步长必须为正: h={h}")
    pts = _check_point(sys, x)
    inc = _check_increment(sys, dW)
    return pts + sys.drift.evaluate(pts) * h + _apply_diffusion(sys.diffusion.evaluate(pts), inc)


def heun_step(sys: SdeSystem, x, dW, h: float) -> np.ndarray:
    """预测 x̄ = x + F h + B dW; 校正 x' = x + ½(F(x)+F(x̄))h + ½(B(x)+B(x̄))dW  (Stratonovich)"""
    if sys.calculus is not Calculus.STRATONOVICH:
        raise CalculusMismatchError("Heun 步进只用于 Stratonovich 系统; 请先 convert_calculus")
    if h <= 0:
        raise GridError(f"步长必须为正: h={h}")
    pts = _check_point(sys, x)
    inc = _check_increment(sys, dW)
    f0 = sys.drift.evaluate(pts)
    b0 = sys.diffusion.evaluate(pts)
    predictor = pts + f0 * h + _apply_diffusion(b0, inc)
    f1 = sys.drift.evaluate(predictor)
    b1 = sys.diffusion.evaluate(predictor)
    return pts + 0.5 * (f0 + f1) * h + _apply_diffusion(0.5 * (b0 + b1), inc)


def advance(sys: SdeSystem, x, dW, h: float) -> np.ndarray:
    """按演算标记分派步进器"""
    if sys.calculus is Calculus.ITO:
        return euler_maruyama_step(sys, x, dW, h)
    return heun_step(sys, x, dW, h)


# ==========================================
# 4. 轨道模拟
# ==========================================
@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray = field(compare=False)
    states: np.ndarray = field(compare=False)
    # 最后一个有效状态的时刻; 未中断时为 None
    lifetime: Optional[float] = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=[f"x{i + 1}" for i in range(self.states.shape[1])])
        frame.insert(0, "t", self.times)
        return frame


def simulate_on_path(sys: SdeSystem, x0, path: BrownianPath) -> Trajectory:
    """在给定 Brownian 路径上推进; 出现非有限状态时截断并记录寿命"""
    start = _check_point(sys, x0)
    if start.ndim != 1:
        raise DimensionMismatchError("simulate 只接受单个初值, 系综请用 run_ensemble")
    if path.noise_dim != sys.noise_dim:
        raise DimensionMismatchError(f"路径噪声维数 {path.noise_dim} 与系统 {sys.noise_dim} 不一致")
    states = np.empty((path.steps + 1, sys.dim))
    states[0] = start
    x = start
    with np.errstate(all="ignore"):
        for k in range(path.steps):
            x = advance(sys, x, path.increments[k], path.step)
            if not np.all(np.isfinite(x)):
                lifetime = k * path.step
                logger.warning("⚠️ 轨道在 t=%.6g 处发散, 截断于第 %d 步", (k + 1) * path.step, k)
                return Trajectory(path.times[: k + 1], states[: k + 1], lifetime)
            states[k + 1] = x
    return Trajectory(path.times, states, None)


def simulate(sys: SdeSystem, x0, T: float, h: float, seed: int) -> Trajectory:
    path = sample_brownian_path(sys.noise_dim, T, h, seed)
    return simulate_on_path(sys, x0, path)


# ==========================================
# 5. 离散随机积分
# ==========================================
def _path_increments(samples, path: BrownianPath, component: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(samples, dtype=float)
    if values.shape[-1] != path.steps + 1:
        raise DimensionMismatchError(f"被积函数样本数 {values.shape[-1]} 应为 N+1 = {path.steps + 1}")
    return values, path.increments[:, component]


def ito_sum(values: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Σ_k f_k ΔW_k (左端点), 沿最后一维"""
    return np.sum(values[..., :-1] * dW, axis=-1)


def stratonovich_sum(values: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Σ_k ½(f_k + f_{k+1}) ΔW_k (端点平均)"""
    return np.sum(0.5 * (values[..., :-1] + values[..., 1:]) * dW, axis=-1)


def ito_integral(samples, path: BrownianPath, component: int = 0) -> float:
    values, dW = _path_increments(samples, path, component)
    return float(ito_sum(values, dW))


def stratonovich_integral(samples, path: BrownianPath, component: int = 0) -> float:
    values, dW = _path_increments(samples, path, component)
    return float(stratonovich_sum(values, dW))


def integral_convergence_table(T: float, steps: Sequence[float], paths: int, seed: int) -> pd.DataFrame:
    """
    Ito vs Stratonovich 积分收敛表 (被积函数取 W 本身)

    每个 h 一行: Ito 和相对 ½W_T² − ½T 的 RMS 偏差、两种和之差的均值与标准差、
    梯形恒等式 (Stratonovich 和 = ½W_T²) 的最大误差。
    """
    rows = []
    for h in steps:
        n = step_count(T, h)
        dW = sample_increments(1, n, h, seed, range(paths), stream=2)[..., 0]
        w = np.concatenate([np.zeros((paths, 1)), np.cumsum(dW, axis=1)], axis=1)
        ito = ito_sum(w, dW)
        strat = stratonovich_sum(w, dW)
        wt = w[:, -1]
        gap = strat - ito
        rows.append(
            {
                "h": float(h),
                "paths": int(paths),
                "rms_ito_deviation": float(np.sqrt(np.mean((ito - (0.5 * wt**2 - 0.5 * T)) ** 2))),
                "mean_gap": float(np.mean(gap)),
                "std_gap": float(np.std(gap, ddof=1)),
                "max_trapezoid_error": float(np.max(np.abs(strat - 0.5 * wt**2))),
            }
        )
    return pd.DataFrame(rows)


# ==========================================
# 6. 演算转换
# ==========================================
@lru_cache(maxsize=64)
def ito_correction_field(diffusion: MatrixField) -> PolynomialVectorField:
    """½ Σ_j [DBʲ] Bʲ, 对扩散列做符号 Jacobian 后以精确多项式返回"""
    if not isinstance(diffusion, PolynomialMatrixField):
        raise NonPolynomialError("非多项式扩散矩阵没有解析 Jacobian, 无法计算漂移修正项")
    n = diffusion.dim
    b = diffusion.as_matrix()
    x = sympy.Matrix(generators(n))
    correction = sympy.zeros(n, 1)
    for j in range(diffusion.noise_dim):
        column = b[:, j]
        correction += column.jacobian(x) * column
    return PolynomialVectorField.from_matrix(n, correction * sympy.Float(0.5))


def drift_correction(sys: SdeSystem, x) -> np.ndarray:
    pts = _check_point(sys, x)
    return ito_correction_field(sys.diffusion).evaluate(pts)


def convert_calculus(sys: SdeSystem, target: Calculus) -> SdeSystem:
    """
    Stratonovich → Ito: 漂移加上 ½Σ[DBʲ]Bʲ; Ito → Stratonovich: 减去。
    扩散不变; 目标与当前相同时原样返回。
    """
    target = Calculus(target)
    if target is sys.calculus:
        return sys
    correction = ito_correction_field(sys.diffusion)
    sign = 1.0 if target is Calculus.ITO else -1.0
    if isinstance(sys.drift, PolynomialVectorField):
        drift = sys.drift + correction.scale(sign)
    else:
        drift = SummedField((sys.drift, correction.scale(sign)))
    logger.info("🔁 %s: %s → %s", sys.name, sys.calculus.value, target.value)
    return sys.with_drift(drift, target)
