"""
不变流形 — 切向条件残差、流形采样、限制到图流形、离散逃逸诊断

M = {G(x) = 0}, 法向 N(x) = ∇G(x)。
Ito 形式下 M 几乎必然局部不变 ⇔ 在 M 上
    μ(x)·∇G(x) = 0,  μ = F − ½Σ_j [DBʲ]Bʲ
    Bʲ(x)·∇G(x) = 0  (j = 1..m)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from manifold_sde.config import get_settings
from manifold_sde.errors import (
    CalculusMismatchError,
    DimensionMismatchError,
    DomainError,
    EnsembleError,
    ManifoldSamplingError,
    RestrictionError,
    SurfaceInversionError,
)
from manifold_sde.services.fields import (
    CallableMatrixField,
    CallableVectorField,
    ClosedFormScalarField,
    PolynomialMatrixField,
    PolynomialScalarField,
    PolynomialVectorField,
    SummedField,
)
from manifold_sde.services.sde_core import Calculus, SdeSystem, ito_correction_field, step_count
from manifold_sde.workers.ensemble_worker import run_ensemble

logger = logging.getLogger(__name__)

COMPONENTS = ("all", "drift", "diffusion")


# ==========================================
# 1. 流形
# ==========================================
@dataclass(frozen=True)
class GraphManifold:
    """
    function:       标量场, 需提供 evaluate / gradient (多项式、闭式或积分曲面)
    domain_box:     (n, 2) 轴对齐盒, G 在其中有定义
    chart_brackets: {依赖坐标下标: (lo, hi)}, restrict_system 求根的初始区间
    """

    function: object = field(compare=False)
    domain_box: np.ndarray = field(compare=False)
    name: str = "manifold"
    chart_brackets: Mapping[int, tuple[float, float]] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        box = np.asarray(self.domain_box, dtype=float)
        if box.shape != (self.dim, 2) or np.any(box[:, 0] >= box[:, 1]):
            raise DimensionMismatchError(f"定义域盒形状/端点非法: {box.tolist()}")
        object.__setattr__(self, "domain_box", box)

    @classmethod
    def from_polynomial(
        cls,
        poly: PolynomialScalarField,
        domain_box=None,
        name: str = "polynomial",
        chart_brackets: Optional[Mapping[int, tuple[float, float]]] = None,
    ) -> "GraphManifold":
        """多项式 G 的零集; 未给盒时为全空间"""
        box = domain_box if domain_box is not None else [[-np.inf, np.inf]] * poly.dim
        return cls(poly, np.asarray(box, dtype=float), name, dict(chart_brackets or {}))

    @property
    def dim(self) -> int:
        return self.function.dim

    def contains(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        lo, hi = self.domain_box[:, 0], self.domain_box[:, 1]
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def _require_inside(self, pts: np.ndarray):
        if not np.all(self.contains(pts)):
            raise DomainError(f"点不在 {self.name} 的定义域盒 {self.domain_box.tolist()} 内")

    def value(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        self._require_inside(pts)
        return self.function.evaluate(pts)

    def gradient(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        self._require_inside(pts)
        with np.errstate(all="ignore"):
            grad = self.function.gradient(pts)
        if not np.all(np.isfinite(grad)):
            raise DomainError(f"{self.name} 的梯度在给定点无定义")
        return grad

    def scaled(self, factor: float) -> "GraphManifold":
        """G → c·G (零水平集不变, 残差线性缩放)"""
        fn = self.function
        if isinstance(fn, PolynomialScalarField):
            scaled = fn.scale(factor)
        else:
            scaled = ClosedFormScalarField(
                fn.dim,
                lambda x: factor * fn.evaluate(x),
                lambda x: factor * fn.gradient(x),
                f"{factor}*({self.name})",
            )
        return GraphManifold(scaled, self.domain_box, f"{factor}*{self.name}", dict(self.chart_brackets))


# ==========================================
# 2. 切向向量与残差
# ==========================================
def _require_ito(sys: SdeSystem):
    if sys.calculus is not Calculus.ITO:
        raise CalculusMismatchError("切向漂移 μ 只对 Ito 形式定义; 请先 convert_calculus 到 ito")


def tangency_drift(sys: SdeSystem, x) -> np.ndarray:
    """μ(x) = F(x) − ½Σ_j [DBʲ(x)]Bʲ(x)"""
    _require_ito(sys)
    pts = np.asarray(x, dtype=float)
    return sys.drift.evaluate(pts) - ito_correction_field(sys.diffusion).evaluate(pts)


def tangency_vectors(sys: SdeSystem) -> dict[str, object]:
    """{"mu": μ, "B1": B¹, ...}; 多项式漂移时 μ 为精确多项式"""
    _require_ito(sys)
    correction = ito_correction_field(sys.diffusion)
    if isinstance(sys.drift, PolynomialVectorField):
        mu = sys.drift - correction
    else:
        mu = SummedField((sys.drift, correction.scale(-1.0)))
    vectors: dict[str, object] = {"mu": mu}
    for j, column in enumerate(sys.diffusion.columns(), start=1):
        vectors[f"B{j}"] = column
    return vectors


def invariance_residuals(sys: SdeSystem, M: GraphManifold, x) -> tuple[np.ndarray, np.ndarray]:
    """返回 (μ·∇G, [Bʲ·∇G]_j); 支持批量点"""
    _require_ito(sys)
    if M.dim != sys.dim:
        raise DimensionMismatchError(f"流形维数 {M.dim} 与系统维数 {sys.dim} 不一致")
    pts = np.asarray(x, dtype=float)
    grad = M.gradient(pts)
    mu = tangency_drift(sys, pts)
    b = sys.diffusion.evaluate(pts)
    mu_res = np.sum(mu * grad, axis=-1)
    col_res = np.einsum("...ij,...i->...j", b, grad)
    return mu_res, col_res


# ==========================================
# 3. 流形采样
# ==========================================
@dataclass(frozen=True)
class ManifoldSample:
    points: np.ndarray = field(compare=False)
    requested: int = 0
    # True: 尝试次数耗尽, 返回点数少于请求
    exhausted: bool = False


def _check_sub_box(M: GraphManifold, box) -> np.ndarray:
    b = np.asarray(box, dtype=float)
    if b.shape != (M.dim, 2) or np.any(b[:, 0] >= b[:, 1]):
        raise DimensionMismatchError(f"采样盒形状/端点非法: {b.tolist()}")
    if np.any(b[:, 0] < M.domain_box[:, 0]) or np.any(b[:, 1] > M.domain_box[:, 1]):
        raise DomainError(f"采样盒 {b.tolist()} 超出定义域盒 {M.domain_box.tolist()}")
    return b


def _endpoint_values(fn, pts: np.ndarray) -> np.ndarray:
    """批量求 G; 曲面支撑的 G 在覆盖范围外逐点退化为 NaN (记为未命中)"""
    try:
        return np.asarray(fn.evaluate(pts), dtype=float)
    except SurfaceInversionError:
        values = np.full(len(pts), np.nan)
        for i, p in enumerate(pts):
            try:
                values[i] = float(fn.evaluate(p))
            except SurfaceInversionError:
                continue
        return values


def sample_manifold_points(M: GraphManifold, box, count: int, seed: int, tol: Optional[float] = None) -> ManifoldSample:
    """在盒内随机线段上寻找 G 的变号, 用 Brent 区间法求零点"""
    if count <= 0:
        raise ValueError(f"采样点数必须为正: {count}")
    tol = get_settings().ON_MANIFOLD_TOL if tol is None else tol
    b = _check_sub_box(M, box)
    rng = np.random.default_rng(seed)
    fn = M.function
    found: list[np.ndarray] = []
    attempts = 0
    budget = 100 * count
    while len(found) < count and attempts < budget:
        batch = min(max(count, 64), budget - attempts)
        a = rng.uniform(b[:, 0], b[:, 1], size=(batch, M.dim))
        e = rng.uniform(b[:, 0], b[:, 1], size=(batch, M.dim))
        ga, ge = _endpoint_values(fn, a), _endpoint_values(fn, e)
        for i in range(batch):
            attempts += 1
            if len(found) >= count:
                break
            try:
                if ga[i] == 0.0:
                    point = a[i]
                elif ga[i] * ge[i] < 0.0:
                    start, delta = a[i], e[i] - a[i]
                    s = brentq(
                        lambda u: float(fn.evaluate(start + u * delta)),
                        0.0,
                        1.0,
                        xtol=1e-15,
                        rtol=4.0 * np.finfo(float).eps,
                        maxiter=200,
                    )
                    point = start + s * delta
                else:
                    continue
                value = float(fn.evaluate(point))
            except SurfaceInversionError:
                # 线段穿出曲面覆盖范围 (定义域盒只是外接盒)
                continue
            if abs(value) <= tol:
                found.append(point)

    if not found:
        raise ManifoldSamplingError(f"{M.name}: {budget} 次尝试内未找到 G 的变号")
    exhausted = len(found) < count
    if exhausted:
        logger.warning("⚠️ %s: 仅找到 %d/%d 个流形点 (变号稀少)", M.name, len(found), count)
    return ManifoldSample(np.array(found), count, exhausted)


# ==========================================
# 4. 不变性验证
# ==========================================
@dataclass(frozen=True)
class InvarianceReport:
    tol: float
    components: str
    points: np.ndarray = field(compare=False)
    g_values: np.ndarray = field(compare=False)
    mu_residuals: np.ndarray = field(compare=False)
    column_residuals: np.ndarray = field(compare=False)
    exhausted: bool = False

    @property
    def n_samples(self) -> int:
        return len(self.points)

    @property
    def max_mu_residual(self) -> float:
        return float(np.max(np.abs(self.mu_residuals)))

    @property
    def max_column_residuals(self) -> np.ndarray:
        return np.max(np.abs(self.column_residuals), axis=0)

    @property
    def invariant(self) -> bool:
        checks = []
        if self.components in ("all", "drift"):
            checks.append(self.max_mu_residual)
        if self.components in ("all", "diffusion"):
            checks.extend(self.max_column_residuals.tolist())
        return all(c <= self.tol for c in checks)

    @property
    def verdict(self) -> str:
        return "invariant" if self.invariant else "not invariant"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "tol": self.tol,
            "components": self.components,
            "n_samples": self.n_samples,
            "exhausted": self.exhausted,
            "max_mu_residual": self.max_mu_residual,
            "max_column_residuals": self.max_column_residuals.tolist(),
            "points": [
                {
                    "x": self.points[i].tolist(),
                    "g": float(self.g_values[i]),
                    "mu_res": float(self.mu_residuals[i]),
                    "col_res": self.column_residuals[i].tolist(),
                }
                for i in range(self.n_samples)
            ],
        }


def verify_invariance(
    sys: SdeSystem,
    M: GraphManifold,
    box,
    count: int,
    seed: int,
    tol: Optional[float] = None,
    components: str = "all",
) -> InvarianceReport:
    """采样流形点 → 计算全部残差; components 决定哪些残差参与判定"""
    if components not in COMPONENTS:
        raise ValueError(f"components 必须是 {COMPONENTS} 之一, 收到 {components!r}")
    _require_ito(sys)
    tol = get_settings().INVARIANCE_TOL if tol is None else float(tol)
    sample = sample_manifold_points(M, box, count, seed)
    mu_res, col_res = invariance_residuals(sys, M, sample.points)
    report = InvarianceReport(
        tol, components, sample.points, M.function.evaluate(sample.points), mu_res, col_res, sample.exhausted
    )
    logger.info(
        "✅ %s on %s: %s (max μ残差 %.3g, max 列残差 %s)",
        sys.name,
        M.name,
        report.verdict,
        report.max_mu_residual,
        np.array2string(report.max_column_residuals, precision=3),
    )
    return report


# ==========================================
# 5. 限制到图流形
# ==========================================
@dataclass(frozen=True)
class ChartLift:
    """图坐标 ξ → 流形上的点 (依赖坐标由 G=0 的一维求根得到)"""

    manifold: GraphManifold
    chart: tuple[int, ...]
    dependent: int
    bracket: tuple[float, float]
    scan_points: int = 64

    def _solve(self, xi: np.ndarray) -> float:
        fn = self.manifold.function
        base = np.empty(self.manifold.dim)
        base[list(self.chart)] = xi

        def g(t: float) -> float:
            p = base.copy()
            p[self.dependent] = t
            return float(fn.evaluate(p))

        grid = np.linspace(self.bracket[0], self.bracket[1], self.scan_points)
        probe = np.repeat(base[None, :], len(grid), axis=0)
        probe[:, self.dependent] = grid
        with np.errstate(all="ignore"):
            values = fn.evaluate(probe)
        exact = np.flatnonzero(values == 0.0)
        if exact.size:
            return float(grid[exact[0]])
        flips = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
        if not flips.size:
            raise RestrictionError(
                f"{self.manifold.name}: 在区间 {self.bracket} 内无法为 ξ={xi.tolist()} 括住依赖坐标 (点离开图坐标卡)"
            )
        i = flips[0]
        t = brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=4.0 * np.finfo(float).eps, maxiter=200)
        # Newton 抛光
        for _ in range(3):
            p = base.copy()
            p[self.dependent] = t
            slope = float(fn.gradient(p)[self.dependent])
            if slope == 0.0 or not np.isfinite(slope):
                break
            step = g(t) / slope
            if abs(g(t - step)) >= abs(g(t)):
                break
            t -= step
        return t

    def __call__(self, xi) -> np.ndarray:
        chart_pts = np.asarray(xi, dtype=float)
        if chart_pts.shape[-1] != len(self.chart):
            raise DimensionMismatchError(f"图坐标维数 {chart_pts.shape[-1]} 应为 {len(self.chart)}")
        box = self.manifold.domain_box[list(self.chart)]
        if np.any(chart_pts < box[:, 0]) or np.any(chart_pts > box[:, 1]):
            raise RestrictionError(f"{self.manifold.name}: 图坐标超出定义域盒")
        flat = chart_pts.reshape(-1, len(self.chart))
        out = np.empty((flat.shape[0], self.manifold.dim))
        out[:, list(self.chart)] = flat
        out[:, self.dependent] = [self._solve(row) for row in flat]
        return out.reshape(chart_pts.shape[:-1] + (self.manifold.dim,))


def chart_lift(M: GraphManifold, chart_coords: Sequence[int]) -> ChartLift:
    chart = tuple(int(c) for c in chart_coords)
    if len(chart) != M.dim - 1 or len(set(chart)) != len(chart) or not all(0 <= c < M.dim for c in chart):
        raise DimensionMismatchError(f"图坐标 {chart} 必须是 {M.dim} 个坐标中的 {M.dim - 1} 个不同下标")
    dependent = next(i for i in range(M.dim) if i not in chart)
    bracket = M.chart_brackets.get(dependent, tuple(M.domain_box[dependent]))
    if not np.all(np.isfinite(bracket)):
        raise RestrictionError(f"{M.name}: 依赖坐标 {dependent} 缺少有限的初始区间")
    return ChartLift(M, chart, dependent, (float(bracket[0]), float(bracket[1])))


def restrict_system(sys: SdeSystem, M: GraphManifold, chart_coords: Sequence[int]) -> SdeSystem:
    """降维系统: 图坐标分量的 F 与 B 在提升点处取值"""
    if M.dim != sys.dim:
        raise DimensionMismatchError(f"流形维数 {M.dim} 与系统维数 {sys.dim} 不一致")
    lift = chart_lift(M, chart_coords)
    chart = list(lift.chart)
    names = tuple(sys.variables[i] for i in chart)
    drift = CallableVectorField(
        len(chart), lambda xi: sys.drift.evaluate(lift(xi))[..., chart], f"{sys.name} drift on {M.name}"
    )
    diffusion = CallableMatrixField(
        len(chart),
        sys.noise_dim,
        lambda xi: sys.diffusion.evaluate(lift(xi))[..., chart, :],
        f"{sys.name} diffusion on {M.name}",
    )
    logger.info("📐 %s 限制到 %s, 图坐标 %s", sys.name, M.name, names)
    return SdeSystem(drift, diffusion, sys.calculus, f"{sys.name}|{M.name}", names)


# ==========================================
# 6. 逃逸诊断
# ==========================================
@dataclass(frozen=True)
class EscapeStatistics:
    levels: tuple[float, ...]
    times: np.ndarray = field(compare=False)
    quantiles: np.ndarray = field(compare=False)   # (R, len(levels))
    mean: np.ndarray = field(compare=False)
    alive: np.ndarray = field(compare=False)
    # 终端时刻存活轨道的 |G(X_T)|
    terminal: np.ndarray = field(compare=False)
    ensemble: int = 0
    h: float = 0.0

    @property
    def terminal_median(self) -> float:
        return float(np.median(self.terminal))

    @property
    def terminal_mean(self) -> float:
        return float(np.mean(self.terminal))

    @property
    def terminal_max(self) -> float:
        return float(np.max(self.terminal))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times, "alive": self.alive, "mean": self.mean})
        for k, level in enumerate(self.levels):
            frame[f"q{int(round(level * 100))}"] = self.quantiles[:, k]
        return frame

    def to_dict(self) -> dict:
        return {
            "ensemble": self.ensemble,
            "h": self.h,
            "terminal": {
                "median": self.terminal_median,
                "mean": self.terminal_mean,
                "max": self.terminal_max,
                "alive": int(self.alive[-1]),
            },
            "levels": list(self.levels),
            "series": self.to_frame().to_dict(orient="list"),
        }


def _default_record_every(steps: int, max_records: int = 100) -> int:
    for d in range(1, steps + 1):
        if steps % d == 0 and steps // d <= max_records:
            return d
    return steps


def escape_diagnostic(
    sys: SdeSystem,
    M: GraphManifold,
    x0,
    T: float,
    h: float,
    ensemble: int,
    seed: int,
    levels: Sequence[float] = (0.5, 0.9, 1.0),
    record_every: Optional[int] = None,
    threads: Optional[int] = None,
) -> EscapeStatistics:
    """从 M 上的 x0 出发, 统计 |G(X_t)| 的分位数; 离开定义域盒的轨道在该处停止"""
    settings = get_settings()
    start = np.asarray(x0, dtype=float)
    if start.shape != (sys.dim,):
        raise DimensionMismatchError(f"初值形状 {start.shape} 应为 ({sys.dim},)")
    if abs(float(M.value(start))) > settings.ON_MANIFOLD_TOL:
        raise DomainError(f"初值 {start.tolist()} 不在 {M.name} 上 (|G| = {abs(float(M.value(start))):.3g})")
    steps = step_count(T, h)
    stride = _default_record_every(steps) if record_every is None else record_every

    run = run_ensemble(
        sys, start, T, h, ensemble, seed, record_every=stride, stop_when=lambda x: ~M.contains(x), threads=threads
    )
    with np.errstate(all="ignore"):
        g = np.abs(M.function.evaluate(run.states))
    alive = np.sum(np.isfinite(g), axis=0)
    if alive[-1] == 0:
        raise EnsembleError(f"{sys.name}: 所有轨道都在 T={T} 之前离开 {M.name} 的定义域")
    quantiles = np.full((len(run.times), len(levels)), np.nan)
    mean = np.full(len(run.times), np.nan)
    for r in range(len(run.times)):
        column = g[:, r][np.isfinite(g[:, r])]
        if column.size:
            quantiles[r] = np.quantile(column, levels)
            mean[r] = column.mean()
    stats = EscapeStatistics(
        tuple(float(v) for v in levels),
        run.times,
        quantiles,
        mean,
        alive,
        g[:, -1][np.isfinite(g[:, -1])],
        ensemble,
        float(h),
    )
    logger.info("📉 %s 逃逸诊断 h=%g: 终端中位数 |G| = %.3g", sys.name, h, stats.terminal_median)
    return stats
