"""
中心流形约化 — 线性部分 A 的谱分解、中心子空间上的约化 SDE、
Ito 公式能量率 (耗散性估计) 与长时统计比较 (KS 距离)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import sympy
from scipy.linalg import null_space, orth
from scipy.stats import ks_2samp

from manifold_sde.config import get_settings
from manifold_sde.errors import (
    CalculusMismatchError,
    DimensionMismatchError,
    EnsembleError,
    GridError,
    SpectralSplitError,
)
from manifold_sde.services.fields import (
    CallableMatrixField,
    CallableVectorField,
    PolynomialMatrixField,
    PolynomialVectorField,
    SummedField,
    TaperedField,
    sympy_matrix,
)
from manifold_sde.services.sde_core import Calculus, SdeSystem, convert_calculus, step_count
from manifold_sde.workers.ensemble_worker import run_ensemble

logger = logging.getLogger(__name__)

STRUCTURAL_STABILITY = "reduced system assumed structurally stable"


# ==========================================
# 1. 谱分解
# ==========================================
@dataclass(frozen=True)
class SpectralSplit:
    A: np.ndarray = field(compare=False)
    k: int = 0
    center_basis: np.ndarray = field(default=None, compare=False)       # n×k
    stable_basis: np.ndarray = field(default=None, compare=False)       # n×(n−k)
    center_projection: np.ndarray = field(default=None, compare=False)  # k×n
    tol_eig: float = 1e-9
    eigenvalues: np.ndarray = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def lift(self, xi) -> np.ndarray:
        """ξ ↦ E_c ξ (稳定坐标为零)"""
        return np.asarray(xi, dtype=float) @ self.center_basis.T

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.center_projection.T


def _clean_basis(basis: np.ndarray) -> np.ndarray:
    """1e-12 以内吸附到 0 / ±1, 并使每列首个非零元为正"""
    b = np.where(np.abs(basis) <= 1e-12, 0.0, basis)
    b = np.where(np.abs(np.abs(b) - 1.0) <= 1e-12, np.sign(b), b)
    for j in range(b.shape[1]):
        nz = np.flatnonzero(b[:, j])
        if nz.size and b[nz[0], j] < 0:
            b[:, j] = -b[:, j]
    return b


def spectral_split(A, tol_eig: Optional[float] = None) -> SpectralSplit:
    """中心部分 = ker A (要求零特征值半单), 其余特征值实部须 < −tol_eig"""
    tol = get_settings().TOL_EIG if tol_eig is None else float(tol_eig)
    if tol <= 0:
        raise SpectralSplitError(f"tol_eig 必须为正: {tol}")
    a = np.asarray(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"线性部分必须是方阵, 收到形状 {a.shape}")
    n = a.shape[0]
    eig = np.linalg.eigvals(a)

    if np.any(eig.real > tol):
        raise SpectralSplitError(
            f"unstable part present: 特征值 {eig[eig.real > tol].tolist()} 实部为正, 中心流形约化前提不成立"
        )
    on_axis = np.abs(eig.real) <= tol
    if np.any(on_axis & (np.abs(eig.imag) > tol)):
        raise SpectralSplitError(f"零实部特征值带非零虚部 {eig[on_axis].tolist()}, 中心子空间只取 ker A")
    k = int(np.sum(np.abs(eig) <= tol))

    smax = float(np.linalg.norm(a, 2))
    if smax == 0.0:
        center, stable = np.eye(n), np.zeros((n, 0))
    else:
        center = null_space(a, rcond=tol / smax)
        stable = orth(a, rcond=tol / smax)
    if center.shape[1] != k or center.shape[1] + stable.shape[1] != n:
        raise SpectralSplitError(f"零特征值亏损: 代数重数 {k}, 核维数 {center.shape[1]}")

    center = _clean_basis(center)
    stable = _clean_basis(stable)
    projection = np.linalg.inv(np.hstack([center, stable]))[:k]
    projection = np.where(np.abs(projection) <= 1e-12, 0.0, projection)

    if np.linalg.norm(a @ center) > tol:
        raise SpectralSplitError("中心基不在 ker A 内")
    if k and np.max(np.abs(projection @ center - np.eye(k))) > 1e-12:
        raise SpectralSplitError("中心投影与中心基不互逆")
    logger.info("🔬 谱分解: n=%d, 中心维数 k=%d", n, k)
    return SpectralSplit(a, k, center, stable, projection, tol, eig)


# ==========================================
# 2. 约化系统
# ==========================================
@dataclass(frozen=True)
class ReducedSystem:
    inner: SdeSystem
    split: SpectralSplit = field(compare=False)

    @property
    def dim(self) -> int:
        return self.inner.dim

    def lift(self, xi) -> np.ndarray:
        return self.split.lift(xi)

    def to_text(self) -> str:
        """如 "dy = (-2 - y^3) dt + y dW" (每个中心坐标一行)"""
        lines = []
        names = self.inner.variables
        noise_names = ["dW"] if self.inner.noise_dim == 1 else [f"dW{j + 1}" for j in range(self.inner.noise_dim)]
        for i, name in enumerate(names):
            if isinstance(self.inner.drift, PolynomialVectorField):
                comp = self.inner.drift.components[i]
                drift = "0" if comp.is_zero else f"({comp.to_text(names)})"
            else:
                text = self.inner.drift.to_text(names)
                drift = f"({text})" if len(names) == 1 else f"({text})[{i}]"
            line = f"d{name} = {drift} dt"
            if isinstance(self.inner.diffusion, PolynomialMatrixField):
                for j, entry in enumerate(self.inner.diffusion.entries[i]):
                    if entry.is_zero:
                        continue
                    text = entry.to_text(names)
                    if len(entry.terms) > 1 or text.startswith("-"):
                        text = f"({text})"
                    line += f" + {text} {noise_names[j]}"
            else:
                line += f" + {self.inner.diffusion.to_text(names)} dW"
            lines.append(line)
        return "\n".join(lines)


def _reduce_vector(drift, e: np.ndarray, p: np.ndarray):
    """ξ ↦ P·F(Eξ), 尽量保持解析形式"""
    k = e.shape[1]
    if isinstance(drift, PolynomialVectorField):
        return drift.restrict_linear(e, p).chop()
    if isinstance(drift, TaperedField):
        # E 列正交归一 → ‖Eξ‖ = ‖ξ‖, 截断权重不变
        return TaperedField(drift.base.restrict_linear(e, p).chop(), drift.inner_radius, drift.outer_radius)
    if isinstance(drift, SummedField):
        parts = [_reduce_vector(part, e, p) for part in drift.parts]
        # 约化后为零的多项式部分 (如线性项) 丢弃
        kept = [q for q in parts if not (isinstance(q, PolynomialVectorField) and all(c.is_zero for c in q.components))]
        parts = kept or parts[:1]
        return parts[0] if len(parts) == 1 else SummedField(tuple(parts))
    return CallableVectorField(k, lambda xi: drift.evaluate(np.asarray(xi) @ e.T) @ p.T, "reduced drift")


def _reduce_diffusion(diffusion, e: np.ndarray, p: np.ndarray):
    """ξ ↦ P·B(Eξ)·E (噪声只保留中心分量, 即 W_c)"""
    k = e.shape[1]
    if isinstance(diffusion, PolynomialMatrixField):
        lifted = sympy.Matrix([[entry.compose_linear(e).as_expr() for entry in row] for row in diffusion.entries])
        reduced = PolynomialMatrixField.from_matrix(k, sympy_matrix(p) * lifted * sympy_matrix(e))
        return PolynomialMatrixField(k, k, tuple(tuple(entry.chop() for entry in row) for row in reduced.entries))
    return CallableMatrixField(
        k, k, lambda xi: p @ diffusion.evaluate(np.asarray(xi) @ e.T) @ e, "reduced diffusion"
    )


def _reduced_names(sys: SdeSystem, e: np.ndarray) -> tuple[str, ...]:
    axes = []
    for j in range(e.shape[1]):
        col = e[:, j]
        nz = np.flatnonzero(col)
        if len(nz) == 1 and col[nz[0]] == 1.0:
            axes.append(sys.variables[nz[0]])
        else:
            return ("xi",) if e.shape[1] == 1 else tuple(f"xi{i + 1}" for i in range(e.shape[1]))
    return tuple(axes)


def _nonlinear_part(drift, a: np.ndarray):
    """drift − Ax"""
    linear = PolynomialVectorField.linear(a)
    if isinstance(drift, PolynomialVectorField):
        return drift - linear
    if isinstance(drift, SummedField):
        parts = list(drift.parts)
        for i, part in enumerate(parts):
            if isinstance(part, PolynomialVectorField):
                parts[i] = part - linear
                return SummedField(tuple(parts))
    return SummedField((drift, linear.scale(-1.0)))


def build_reduced_system(sys: SdeSystem, split: SpectralSplit) -> ReducedSystem:
    """约化漂移 ξ ↦ P_c F(E_c ξ), 约化扩散 ξ ↦ P_c B(E_c ξ) E_c; 演算标记继承自 sys"""
    if sys.dim != split.dim:
        raise DimensionMismatchError(f"系统维数 {sys.dim} 与谱分解维数 {split.dim} 不一致")
    if sys.linear_part is None:
        raise SpectralSplitError(f"{sys.name} 未提供线性部分 A")
    if not np.allclose(sys.linear_part, split.A, rtol=0.0, atol=split.tol_eig):
        raise SpectralSplitError(f"{sys.name} 的线性部分与谱分解的 A 不一致")
    if sys.noise_dim != sys.dim:
        raise DimensionMismatchError(f"噪声投影要求 m = n, 收到 m={sys.noise_dim}, n={sys.dim}")

    e, p = split.center_basis, split.center_projection
    drift = _reduce_vector(_nonlinear_part(sys.drift, split.A), e, p)
    diffusion = _reduce_diffusion(sys.diffusion, e, p)
    inner = SdeSystem(
        drift,
        diffusion,
        sys.calculus,
        f"{sys.name}-reduced",
        _reduced_names(sys, e),
        np.zeros((split.k, split.k)),
    )
    reduced = ReducedSystem(inner, split)
    logger.info("✅ 约化完成 (%s): %s", sys.calculus.value, reduced.to_text().replace("\n", "; "))
    return reduced


# ==========================================
# 3. 能量率与耗散性剖面
# ==========================================
def lyapunov_rate(sys: SdeSystem, x) -> np.ndarray:
    """⟨x, F(x)⟩ + ½ Trace(B(x)B(x)ᵀ), F 含线性部分"""
    if sys.calculus is not Calculus.ITO:
        raise CalculusMismatchError("能量率由 Ito 公式给出, 请先 convert_calculus 到 ito")
    pts = np.asarray(x, dtype=float)
    b = sys.diffusion.evaluate(pts)
    return np.sum(pts * sys.drift.evaluate(pts), axis=-1) + 0.5 * np.sum(b * b, axis=(-2, -1))


def dissipation_profile(
    sys: SdeSystem,
    x0,
    T: float,
    h: float,
    ensemble: int,
    seed: int,
    samples: int = 20,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """Monte Carlo: ½E‖X_t‖² 与 E[lyapunov_rate(X_t)] 的时间序列"""
    steps = step_count(T, h)
    if samples < 1 or steps % samples:
        raise GridError(f"采样次数 {samples} 必须整除步数 {steps}")
    ito = convert_calculus(sys, Calculus.ITO)
    run = run_ensemble(sys, x0, T, h, ensemble, seed, record_every=steps // samples, threads=threads)
    with np.errstate(all="ignore"):
        energy = 0.5 * np.sum(run.states**2, axis=-1)
        rate = lyapunov_rate(ito, run.states)
    alive = np.sum(np.isfinite(energy), axis=0)
    return pd.DataFrame(
        {
            "t": run.times,
            "alive": alive,
            "energy": np.nanmean(np.where(alive > 0, energy, 0.0), axis=0),
            "rate": np.nanmean(np.where(alive > 0, rate, 0.0), axis=0),
        }
    )


# ==========================================
# 4. 长时统计比较
# ==========================================
@dataclass(frozen=True)
class ComparisonResult:
    ks_distance: float
    per_coordinate_ks: tuple[float, ...]
    n_full: int
    n_reduced: int
    full_mean: tuple[float, ...]
    full_var: tuple[float, ...]
    reduced_mean: tuple[float, ...]
    reduced_var: tuple[float, ...]
    sample_times: tuple[float, ...]
    # 截断半径扮演小参数 ε 的角色
    truncation_radius: Optional[float] = None
    assumptions: tuple[str, ...] = (STRUCTURAL_STABILITY,)
    config: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "ks_distance": self.ks_distance,
            "per_coordinate_ks": list(self.per_coordinate_ks),
            "n_full": self.n_full,
            "n_reduced": self.n_reduced,
            "full": {"mean": list(self.full_mean), "var": list(self.full_var)},
            "reduced": {"mean": list(self.reduced_mean), "var": list(self.reduced_var)},
            "sample_times": list(self.sample_times),
            "truncation_radius": self.truncation_radius,
            "assumptions": list(self.assumptions),
            "config": dict(self.config),
        }


def _truncation_radius(drift) -> Optional[float]:
    if isinstance(drift, TaperedField):
        return drift.outer_radius
    if isinstance(drift, SummedField):
        radii = [r for r in (_truncation_radius(p) for p in drift.parts) if r is not None]
        return max(radii) if radii else None
    return None


def _pooled(states: np.ndarray, times: np.ndarray, burn_in: float) -> np.ndarray:
    picked = states[:, times > burn_in + 1e-12, :].reshape(-1, states.shape[-1])
    return picked[np.all(np.isfinite(picked), axis=1)]


def compare_long_time(
    full: SdeSystem,
    split: SpectralSplit,
    reduced: ReducedSystem,
    T: float,
    burn_in: float,
    h: float,
    ensemble: int,
    seed: int,
    x0_reduced: Optional[Sequence[float]] = None,
    samples: int = 10,
    threads: Optional[int] = None,
) -> ComparisonResult:
    """
    全系统 (随机流 0) 与约化系统 (随机流 1) 各模拟 ensemble 条轨道,
    在 burn_in 之后的 samples 个等距时刻汇集中心坐标, 计算两样本 KS 距离
    """
    if not (0.0 <= burn_in < T):
        raise GridError(f"需要 0 ≤ burn_in < T, 收到 burn_in={burn_in}, T={T}")
    if ensemble < 100:
        raise EnsembleError(f"系综规模过小 ({ensemble} < 100), KS 距离没有意义")
    if full.dim != split.dim or reduced.dim != split.k:
        raise DimensionMismatchError("全系统 / 约化系统维数与谱分解不一致")
    gap = (T - burn_in) / samples
    stride = step_count(gap, h, "(T - burn_in)/samples")
    if abs(round(burn_in / gap) * gap - burn_in) > 1e-9 * max(1.0, T):
        raise GridError(f"burn_in={burn_in} 不是采样间隔 {gap} 的整数倍")

    xi0 = np.zeros(split.k) if x0_reduced is None else np.asarray(x0_reduced, dtype=float)
    x0 = split.lift(xi0)
    full_run = run_ensemble(full, x0, T, h, ensemble, seed, stream=0, record_every=stride, threads=threads)
    reduced_run = run_ensemble(reduced.inner, xi0, T, h, ensemble, seed, stream=1, record_every=stride, threads=threads)

    full_center = _pooled(split.project(full_run.states), full_run.times, burn_in)
    reduced_center = _pooled(reduced_run.states, reduced_run.times, burn_in)
    if not len(full_center) or not len(reduced_center):
        raise EnsembleError("所有轨道都已发散, 无法比较长时统计")

    per_coord = tuple(
        float(ks_2samp(full_center[:, i], reduced_center[:, i]).statistic) for i in range(split.k)
    )
    times = tuple(float(t) for t in full_run.times[full_run.times > burn_in + 1e-12])
    result = ComparisonResult(
        ks_distance=max(per_coord),
        per_coordinate_ks=per_coord,
        n_full=len(full_center),
        n_reduced=len(reduced_center),
        full_mean=tuple(full_center.mean(axis=0).tolist()),
        full_var=tuple(full_center.var(axis=0, ddof=1).tolist()),
        reduced_mean=tuple(reduced_center.mean(axis=0).tolist()),
        reduced_var=tuple(reduced_center.var(axis=0, ddof=1).tolist()),
        sample_times=times,
        truncation_radius=_truncation_radius(full.drift),
        config={
            "full": full.name,
            "reduced": reduced.inner.name,
            "calculus": reduced.inner.calculus.value,
            "T": T,
            "burn_in": burn_in,
            "h": h,
            "ensemble": ensemble,
            "seed": seed,
        },
    )
    logger.info("📊 KS 距离 %s vs %s: %.4f", full.name, reduced.inner.name, result.ks_distance)
    return result
