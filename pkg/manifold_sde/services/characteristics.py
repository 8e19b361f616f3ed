"""
特征线法 — 一阶线性 PDE  Σ a_i(x) u_{x_i} = c(x)

流程: 初始曲线 Γ → 非特征性检查 → 每个 s 网格点做 RK4 特征线 (向后 + 向前)
      → 积分曲面 (s, t) ↦ (x, u) → 反解得到 G(x) = u(x)
不变性方程 (c = 0, a 取某个切向向量) 即由此求解, 其余切向向量只报告残差。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from manifold_sde.config import get_settings
from manifold_sde.errors import (
    CharacteristicBlowUpError,
    DimensionMismatchError,
    GridError,
    NonCharacteristicError,
    SurfaceInversionError,
    ZeroLevelError,
)
from manifold_sde.services.fields import PolynomialScalarField, gradient_fd
from manifold_sde.services.invariance import GraphManifold, tangency_vectors
from manifold_sde.services.sde_core import SdeSystem, step_count

logger = logging.getLogger(__name__)

TSpan = Union[float, Sequence[float]]


# ==========================================
# 1. 类型
# ==========================================
@dataclass(frozen=True)
class CharacteristicField:
    a: object
    c: object

    def __post_init__(self):
        if self.a.dim != self.c.dim:
            raise DimensionMismatchError(f"系数场维数 {self.a.dim} 与右端项维数 {self.c.dim} 不一致")

    @property
    def dim(self) -> int:
        return self.a.dim

    def rhs(self, y: np.ndarray) -> np.ndarray:
        """(S, n+1) → (S, n+1): dx/dt = a(x), du/dt = c(x)"""
        x = y[..., : self.dim]
        return np.concatenate([self.a.evaluate(x), self.c.evaluate(x)[..., None]], axis=-1)


@dataclass(frozen=True)
class InitialCurve:
    """param_box: (n−1, 2); position: (P, n−1) → (P, n); value: (P, n−1) → (P,)"""

    param_box: np.ndarray = field(compare=False)
    position: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    value: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    label: str = "Γ"

    def __post_init__(self):
        box = np.asarray(self.param_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
            raise DimensionMismatchError(f"参数盒形状/端点非法: {box.tolist()}")
        object.__setattr__(self, "param_box", box)

    @property
    def param_dim(self) -> int:
        return self.param_box.shape[0]

    @property
    def dim(self) -> int:
        return self.param_dim + 1

    @classmethod
    def from_polynomials(
        cls,
        position: Sequence[PolynomialScalarField],
        value: PolynomialScalarField,
        param_box,
    ) -> "InitialCurve":
        """Γ 的各分量为参数 s 的多项式"""
        comps = tuple(position)
        box = np.asarray(param_box, dtype=float)
        k = box.shape[0]
        if len(comps) != k + 1:
            raise DimensionMismatchError(f"初始曲线需要 {k + 1} 个位置分量, 收到 {len(comps)}")
        if any(p.dim != k for p in comps) or value.dim != k:
            raise DimensionMismatchError(f"初始曲线多项式必须是 {k} 个参数的函数")
        names = ("s",) if k == 1 else tuple(f"s{i + 1}" for i in range(k))
        label = "(" + ", ".join(p.to_text(names) for p in comps) + "; " + value.to_text(names) + ")"
        return cls(
            box,
            lambda s: np.stack([p.evaluate(s) for p in comps], axis=-1),
            value.evaluate,
            label,
        )


@dataclass(frozen=True)
class CharacteristicCurve:
    times: np.ndarray = field(compare=False)
    points: np.ndarray = field(compare=False)
    values: np.ndarray = field(compare=False)


# ==========================================
# 2. RK4 特征线
# ==========================================
def _normalize_span(t_span: TSpan) -> tuple[float, float]:
    if np.isscalar(t_span):
        lo, hi = 0.0, float(t_span)
    else:
        lo, hi = (float(v) for v in t_span)
    if not (lo <= 0.0 <= hi) or hi <= lo:
        raise GridError(f"t_span 需满足 t_lo ≤ 0 ≤ t_hi 且区间非空, 收到 ({lo}, {hi})")
    return lo, hi


def _rk4(cf: CharacteristicField, y0: np.ndarray, h: float, steps: int) -> np.ndarray:
    """经典四阶 Runge–Kutta, 返回 (steps+1, S, n+1); h 可为负 (向后积分)"""
    out = np.empty((steps + 1,) + y0.shape)
    out[0] = y = y0
    with np.errstate(all="ignore"):
        for k in range(steps):
            k1 = cf.rhs(y)
            k2 = cf.rhs(y + 0.5 * h * k1)
            k3 = cf.rhs(y + 0.5 * h * k2)
            k4 = cf.rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[k + 1] = y
    return out


def _integrate_both_ways(cf: CharacteristicField, y0: np.ndarray, t_span: TSpan, h_char: float):
    if h_char <= 0:
        raise GridError(f"特征线步长必须为正: h_char={h_char}")
    lo, hi = _normalize_span(t_span)
    back = step_count(-lo, h_char, "t_lo") if lo < 0 else 0
    fwd = step_count(hi, h_char, "t_hi") if hi > 0 else 0
    pieces, times = [], []
    if back:
        backward = _rk4(cf, y0, -h_char, back)
        pieces.append(backward[:0:-1])
        times.append(-h_char * np.arange(back, 0, -1))
    forward = _rk4(cf, y0, h_char, fwd)
    pieces.append(forward)
    times.append(h_char * np.arange(fwd + 1))
    # (K, S, n+1) → (S, K, n+1)
    return np.concatenate(times), np.swapaxes(np.concatenate(pieces, axis=0), 0, 1)


def integrate_characteristic(cf: CharacteristicField, start, t_span: TSpan, h_char: float) -> CharacteristicCurve:
    x0, u0 = start
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (cf.dim,):
        raise DimensionMismatchError(f"起点形状 {x0.shape} 应为 ({cf.dim},)")
    y0 = np.concatenate([x0, [float(u0)]])[None, :]
    times, ys = _integrate_both_ways(cf, y0, t_span, h_char)
    curve = ys[0]
    if not np.all(np.isfinite(curve)):
        raise CharacteristicBlowUpError(f"特征线从 {x0.tolist()} 出发出现非有限状态")
    return CharacteristicCurve(times, curve[:, : cf.dim], curve[:, cf.dim])


# ==========================================
# 3. 非特征性检查
# ==========================================
@dataclass(frozen=True)
class NonCharacteristicReport:
    passed: bool
    min_angle: float
    threshold: float
    s_samples: np.ndarray = field(compare=False)
    angles: np.ndarray = field(compare=False)

    def to_dict(self) -> dict:
        worst = int(np.argmin(self.angles))
        return {
            "passed": self.passed,
            "min_angle": self.min_angle,
            "threshold": self.threshold,
            "samples": len(self.angles),
            "worst_s": self.s_samples[worst].tolist(),
        }


def _param_grid(box: np.ndarray, count: int) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    axes = tuple(np.linspace(lo, hi, count) for lo, hi in box)
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=-1)


def non_characteristic_check(
    cf: CharacteristicField,
    gamma: InitialCurve,
    s_samples: Union[int, np.ndarray] = 101,
    threshold: Optional[float] = None,
) -> NonCharacteristicReport:
    """
    在采样 s 处比较 (n+1) 维向量 V = (a(f(s)), c(f(s))) 与曲线切向 (f'(s), h'(s)):
    夹角 (V 与切空间之间) 小于阈值即判为特征性 (失败)
    """
    if gamma.dim != cf.dim:
        raise DimensionMismatchError(f"初始曲线维数 {gamma.dim} 与系数场维数 {cf.dim} 不一致")
    threshold = get_settings().ANGLE_THRESHOLD if threshold is None else float(threshold)
    if np.isscalar(s_samples):
        per_axis = max(2, int(round(int(s_samples) ** (1.0 / gamma.param_dim))))
        s = _param_grid(gamma.param_box, per_axis)[1]
    else:
        s = np.asarray(s_samples, dtype=float).reshape(-1, gamma.param_dim)

    delta = 1e-6
    x = gamma.position(s)
    v = np.concatenate([cf.a.evaluate(x), cf.c.evaluate(x)[:, None]], axis=-1)
    tangents = []
    for k in range(gamma.param_dim):
        step = np.zeros(gamma.param_dim)
        step[k] = delta
        dx = (gamma.position(s + step) - gamma.position(s - step)) / (2 * delta)
        du = (gamma.value(s + step) - gamma.value(s - step)) / (2 * delta)
        tangents.append(np.concatenate([dx, du[:, None]], axis=-1))
    tan = np.stack(tangents, axis=-1)  # (P, n+1, n−1)

    v_norm = np.linalg.norm(v, axis=-1)
    if np.any(v_norm == 0.0):
        bad = s[np.flatnonzero(v_norm == 0.0)[0]]
        raise NonCharacteristicError(f"特征向量在 s={bad.tolist()} 处为零")
    angles = np.empty(len(s))
    for i in range(len(s)):
        q, r = np.linalg.qr(tan[i])
        if np.min(np.abs(np.diag(r))) <= 1e-12:
            raise NonCharacteristicError(f"初始曲线在 s={s[i].tolist()} 处切向量退化")
        along = q.T @ v[i]
        across = v[i] - q @ along
        angles[i] = np.arctan2(np.linalg.norm(across), np.linalg.norm(along))

    min_angle = float(angles.min())
    passed = min_angle >= threshold
    if not passed:
        logger.warning("⚠️ 初始曲线近似特征: 最小夹角 %.3g < %.3g", min_angle, threshold)
    return NonCharacteristicReport(passed, min_angle, threshold, s, angles)


# ==========================================
# 4. 积分曲面
# ==========================================
@dataclass(frozen=True)
class IntegralSurface:
    """points: (S, K, n), values: (S, K); S = s 网格点数 (C 序展开), K = t 网格点数"""

    s_axes: tuple[np.ndarray, ...] = field(compare=False)
    t_grid: np.ndarray = field(compare=False)
    points: np.ndarray = field(compare=False)
    values: np.ndarray = field(compare=False)
    h_char: float = 0.0
    # True 表示该 s 的特征线发散, 已截断
    truncated: np.ndarray = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.points.shape[-1]

    @property
    def s_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.s_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.s_axes) + (len(self.t_grid),)

    @property
    def t_zero_index(self) -> int:
        return int(np.argmin(np.abs(self.t_grid)))

    def to_frame(self) -> pd.DataFrame:
        s_count, k = self.values.shape
        s_names = ["s"] if len(self.s_axes) == 1 else [f"s{i + 1}" for i in range(len(self.s_axes))]
        frame = pd.DataFrame(np.repeat(self.s_points, k, axis=0), columns=s_names)
        frame["t"] = np.tile(self.t_grid, s_count)
        flat = self.points.reshape(s_count * k, self.dim)
        for i in range(self.dim):
            frame[f"x{i + 1}"] = flat[:, i]
        frame["u"] = self.values.ravel()
        return frame

    # ---- 反解所需的插值结构 (惰性构建) ----
    @cached_property
    def _valid_rows(self) -> np.ndarray:
        """最长的连续未截断 s 段 (n=2), 高维时要求全部有效"""
        if self.truncated is None:
            ok = np.ones(self.values.shape[0], dtype=bool)
        else:
            ok = ~np.asarray(self.truncated, dtype=bool)
        if len(self.s_axes) > 1:
            return np.arange(len(ok)) if ok.all() else np.array([], dtype=int)
        best, run = (0, 0), None
        for i, flag in enumerate(list(ok) + [False]):
            if flag and run is None:
                run = i
            elif not flag and run is not None:
                if i - run > best[1] - best[0]:
                    best = (run, i)
                run = None
        return np.arange(*best)

    @cached_property
    def _maps(self):
        rows = self._valid_rows
        if len(self.s_axes) == 1:
            if len(rows) < 4:
                raise SurfaceInversionError("有效特征线不足 4 条, 无法构建三次样条")
            s_axis = self.s_axes[0][rows]
            splines = [
                RectBivariateSpline(s_axis, self.t_grid, self.points[rows, :, i], kx=3, ky=3)
                for i in range(self.dim)
            ]
            u_spline = RectBivariateSpline(s_axis, self.t_grid, self.values[rows], kx=3, ky=3)
            lo = np.array([s_axis[0], self.t_grid[0]])
            hi = np.array([s_axis[-1], self.t_grid[-1]])
            return "spline", splines, u_spline, lo, hi
        if not len(rows):
            raise SurfaceInversionError("曲面含截断特征线, 高维反解不可用")
        axes = self.s_axes + (self.t_grid,)
        shape = self.grid_shape
        x_interp = RegularGridInterpolator(
            axes, self.points.reshape(shape + (self.dim,)), bounds_error=False, fill_value=None
        )
        u_interp = RegularGridInterpolator(axes, self.values.reshape(shape), bounds_error=False, fill_value=None)
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
        return "linear", x_interp, u_interp, lo, hi

    @cached_property
    def _tree(self):
        rows = self._valid_rows
        nodes = self.points[rows].reshape(-1, self.dim)
        params = np.concatenate(
            [np.repeat(self.s_points[rows], len(self.t_grid), axis=0), np.tile(self.t_grid, len(rows))[:, None]],
            axis=-1,
        )
        if len(self.s_axes) == 1:
            grid = self.points[rows]
        else:
            grid = self.points.reshape(self.grid_shape + (self.dim,))
        spacing = 0.0
        for axis in range(grid.ndim - 1):
            if grid.shape[axis] > 1:
                spacing = max(spacing, float(np.max(np.linalg.norm(np.diff(grid, axis=axis), axis=-1))))
        return cKDTree(nodes), params, 2.0 * spacing

    def map_params(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(P, n) 参数 (s..., t) → (x: (P, n), u: (P,))"""
        kind, xmap, umap, _, _ = self._maps
        if kind == "spline":
            s, t = params[:, 0], params[:, 1]
            return np.stack([sp.ev(s, t) for sp in xmap], axis=-1), umap.ev(s, t)
        return xmap(params), umap(params)

    def _param_jacobian(self, params: np.ndarray) -> np.ndarray:
        kind, xmap, _, lo, hi = self._maps
        if kind == "spline":
            s, t = params[:, 0], params[:, 1]
            ds = np.stack([sp.ev(s, t, dx=1) for sp in xmap], axis=-1)
            dt = np.stack([sp.ev(s, t, dy=1) for sp in xmap], axis=-1)
            return np.stack([ds, dt], axis=-1)
        steps = 0.25 * np.array([np.diff(a[:2])[0] for a in self.s_axes + (self.t_grid,)])
        cols = []
        for k in range(params.shape[1]):
            e = np.zeros(params.shape[1])
            e[k] = steps[k]
            cols.append((xmap(params + e) - xmap(params - e)) / (2 * steps[k]))
        return np.stack(cols, axis=-1)

    def zero_level_points(self, count: int) -> np.ndarray:
        """沿 s 方向网格线 (t 取内部等距节点) 用 Brent 法求插值 u 的零点, 返回 x 坐标"""
        kind, _, _, lo, hi = self._maps
        k = len(self.t_grid)
        interior = np.arange(1, k - 1)
        picks = interior[np.linspace(0, len(interior) - 1, min(count, len(interior))).round().astype(int)]
        s_axis = self.s_axes[0][self._valid_rows] if len(self.s_axes) == 1 else self.s_axes[0]
        other = [a[len(a) // 2] for a in self.s_axes[1:]]
        found = []
        for j in picks:
            t = self.t_grid[j]

            def u_along(s: float) -> float:
                return float(self.map_params(np.array([[s, *other, t]]))[1][0])

            values = np.array([u_along(s) for s in s_axis])
            flips = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)
            if not flips.size:
                continue
            i = flips[0]
            if values[i] == 0.0:
                root = s_axis[i]
            elif values[i + 1] == 0.0:
                root = s_axis[i + 1]
            else:
                root = brentq(u_along, s_axis[i], s_axis[i + 1], xtol=1e-15, rtol=4.0 * np.finfo(float).eps)
            found.append(self.map_params(np.array([[root, *other, t]]))[0][0])
        if not found:
            raise ZeroLevelError("initial data produces no zero level set")
        return np.array(found)


def build_integral_surface(
    cf: CharacteristicField,
    gamma: InitialCurve,
    s_count: int,
    t_span: TSpan,
    h_char: float,
    threshold: Optional[float] = None,
) -> IntegralSurface:
    """每个 s 网格点积分一条特征线; 发散的特征线截断并标记"""
    if s_count < 2:
        raise GridError(f"s 网格点数至少为 2: {s_count}")
    report = non_characteristic_check(cf, gamma, threshold=threshold)
    if not report.passed:
        raise NonCharacteristicError(
            f"初始曲线 {gamma.label} 与特征向量夹角 {report.min_angle:.3g} 低于阈值 {report.threshold:.3g}"
        )
    axes, s = _param_grid(gamma.param_box, s_count)
    y0 = np.concatenate([gamma.position(s), gamma.value(s)[:, None]], axis=-1)
    times, ys = _integrate_both_ways(cf, y0, t_span, h_char)
    # t=0 切片严格等于 Γ
    ys[:, int(np.argmin(np.abs(times)))] = y0

    finite = np.all(np.isfinite(ys), axis=-1)
    truncated = ~np.all(finite, axis=1)
    if truncated.all():
        raise CharacteristicBlowUpError("所有特征线都出现非有限状态")
    if truncated.any():
        logger.warning("⚠️ %d/%d 条特征线发散, 已截断", int(truncated.sum()), len(truncated))
        ys = np.where(finite[..., None], ys, np.nan)
    logger.info("🧭 积分曲面: %d 条特征线 × %d 个 t 节点", len(s), len(times))
    return IntegralSurface(axes, times, ys[..., : cf.dim], ys[..., cf.dim], float(h_char), truncated)


# ==========================================
# 5. 曲面反解与零水平集
# ==========================================
def evaluate_surface(surface: IntegralSurface, x, max_iter: Optional[int] = None) -> np.ndarray:
    """最近网格节点作初值, Newton 反解 (s, t) ↦ x(s, t) = x, 返回插值 u"""
    max_iter = get_settings().NEWTON_MAX_ITER if max_iter is None else max_iter
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != surface.dim:
        raise DimensionMismatchError(f"点的维数 {pts.shape[-1]} 与曲面维数 {surface.dim} 不一致")
    flat = pts.reshape(-1, surface.dim)
    tree, node_params, footprint = surface._tree
    _, _, _, lo, hi = surface._maps
    dist, idx = tree.query(flat)
    outside = dist > footprint
    if np.any(outside):
        raise SurfaceInversionError(f"点 {flat[np.flatnonzero(outside)[0]].tolist()} 不在曲面覆盖范围内")

    params = node_params[idx].copy()
    scale = np.maximum(1.0, np.linalg.norm(flat, axis=-1))
    residual = np.full(len(flat), np.inf)
    active = np.ones(len(flat), dtype=bool)
    for _ in range(max_iter):
        mapped, _ = surface.map_params(params[active])
        diff = mapped - flat[active]
        residual[active] = np.linalg.norm(diff, axis=-1)
        still = residual[active] > 1e-14 * scale[active]
        active_idx = np.flatnonzero(active)
        active[active_idx[~still]] = False
        if not active.any():
            break
        jac = surface._param_jacobian(params[active])
        try:
            delta = np.linalg.solve(jac, -diff[still][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SurfaceInversionError("曲面参数化 Jacobian 奇异, Newton 无法继续") from exc
        params[active] = np.clip(params[active] + delta, lo, hi)
    mapped, u = surface.map_params(params)
    residual = np.linalg.norm(mapped - flat, axis=-1)
    if np.any(~(residual <= 1e-8)):
        worst = int(np.nanargmax(np.where(np.isfinite(residual), residual, np.inf)))
        raise SurfaceInversionError(
            f"Newton 在 {max_iter} 次迭代内未收敛: x={flat[worst].tolist()}, 残差 {residual[worst]:.3g}"
        )
    return u.reshape(pts.shape[:-1])


def zero_level_check(surface: IntegralSurface) -> bool:
    """max(u)·min(u) ≤ 0 (在曲面样本上)"""
    values = surface.values[np.isfinite(surface.values)]
    if not values.size:
        return False
    return bool(values.max() * values.min() <= 0.0)


@dataclass(frozen=True)
class SurfaceScalarField:
    """以积分曲面为支撑的 G(x); 梯度用中心差分"""

    surface: IntegralSurface = field(compare=False)
    fd_step: float = 1e-5
    name: str = "surface"

    @property
    def dim(self) -> int:
        return self.surface.dim

    def evaluate(self, x) -> np.ndarray:
        return evaluate_surface(self.surface, x)

    def gradient(self, x) -> np.ndarray:
        return gradient_fd(self, x, self.fd_step)

    def to_text(self, variables=None) -> str:
        return self.name


# ==========================================
# 6. 求解不变性 PDE
# ==========================================
@dataclass(frozen=True)
class ConsistencyReport:
    generator: str
    non_characteristic: NonCharacteristicReport
    zero_level: bool
    points: np.ndarray = field(compare=False)
    g_values: np.ndarray = field(compare=False)
    # 其余切向向量在零水平集点上的 max |V·∇G|
    residuals: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "non_characteristic": self.non_characteristic.to_dict(),
            "zero_level": self.zero_level,
            "max_residuals": {k: float(v) for k, v in self.residuals.items()},
            "n_points": len(self.points),
            "points": [{"x": p.tolist(), "g": float(g)} for p, g in zip(self.points, self.g_values)],
        }


def _generator_name(generator: Union[int, str], names: Sequence[str]) -> str:
    if isinstance(generator, str):
        key = generator
    else:
        key = "mu" if int(generator) == 0 else f"B{int(generator)}"
    if key not in names:
        raise DimensionMismatchError(f"切向向量 {generator!r} 不存在, 可选: {list(names)}")
    return key


def solve_invariance_pde(
    sys: SdeSystem,
    generator: Union[int, str],
    gamma: InitialCurve,
    s_count: int = 201,
    t_span: TSpan = 1.0,
    h_char: float = 1e-3,
    samples: int = 50,
    threshold: Optional[float] = None,
) -> tuple[GraphManifold, ConsistencyReport]:
    """以某个切向向量为系数 (c = 0) 解 PDE, 报告其余切向向量的残差"""
    vectors = tangency_vectors(sys)
    key = _generator_name(generator, list(vectors))
    cf = CharacteristicField(vectors[key], PolynomialScalarField.zero(sys.dim))
    report = non_characteristic_check(cf, gamma, threshold=threshold)
    if not report.passed:
        raise NonCharacteristicError(
            f"初始曲线 {gamma.label} 对 {key} 是特征性的 (最小夹角 {report.min_angle:.3g})"
        )
    surface = build_integral_surface(cf, gamma, s_count, t_span, h_char, threshold)
    if not zero_level_check(surface):
        raise ZeroLevelError("initial data produces no zero level set")

    fd_step = get_settings().FD_STEP
    g_field = SurfaceScalarField(surface, fd_step, f"surface[{key}]")
    valid = surface.points[surface._valid_rows].reshape(-1, sys.dim)
    box = np.stack([valid.min(axis=0), valid.max(axis=0)], axis=-1)
    manifold = GraphManifold(g_field, box, f"surface[{key}]")

    points = surface.zero_level_points(samples)
    g_values = g_field.evaluate(points)
    grad = g_field.gradient(points)
    residuals = {
        name: float(np.max(np.abs(np.sum(vec.evaluate(points) * grad, axis=-1))))
        for name, vec in vectors.items()
        if name != key
    }
    logger.info("✅ 以 %s 构造流形, 其余残差: %s", key, {k: f"{v:.3g}" for k, v in residuals.items()})
    return manifold, ConsistencyReport(key, report, True, points, g_values, residuals)
