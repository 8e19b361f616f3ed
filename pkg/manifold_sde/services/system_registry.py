"""
系统与流形注册表

按名称提供例 1 / 例 2 的系数 (Stratonovich、Ito、截断、约化形式) 以及
相关流形; 同时负责内联系统描述 (多项式项列表) 与 SdeSystem 之间的互转。
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from manifold_sde.config import get_settings
from manifold_sde.errors import ConfigError, NonPolynomialError
from manifold_sde.services.fields import (
    ClosedFormScalarField,
    PolynomialMatrixField,
    PolynomialScalarField,
    PolynomialVectorField,
    SummedField,
    truncate,
)
from manifold_sde.services.invariance import GraphManifold
from manifold_sde.services.sde_core import Calculus, SdeSystem

settings = get_settings()


@dataclass
class SystemRegistryEntry:
    name: str
    system: SdeSystem
    provenance: str
    manifold: Optional[str] = None
    # restrict_system 的默认图坐标
    chart: tuple[int, ...] = ()


def _poly(dim: int, coefficients: dict) -> PolynomialScalarField:
    return PolynomialScalarField.from_dict(dim, coefficients)


# ---- 例 1: (x, y), A = diag(−1, 0), B = diag(x, y) ----
EXAMPLE1_A = np.diag([-1.0, 0.0])


def _example1_nonlinear() -> PolynomialVectorField:
    """Ito 形式的非线性项 (xy² − x³, −2 + x²y − y³)"""
    return PolynomialVectorField(
        2,
        (
            _poly(2, {(1, 2): 1.0, (3, 0): -1.0}),
            _poly(2, {(0, 0): -2.0, (2, 1): 1.0, (0, 3): -1.0}),
        ),
    )


def _example1_diffusion() -> PolynomialMatrixField:
    return PolynomialMatrixField.diagonal([_poly(2, {(1, 0): 1.0}), _poly(2, {(0, 1): 1.0})])


def example1_ito() -> SdeSystem:
    drift = PolynomialVectorField.linear(EXAMPLE1_A) + _example1_nonlinear()
    return SdeSystem(drift, _example1_diffusion(), Calculus.ITO, "example1-ito", ("x", "y"), EXAMPLE1_A)


def example1_strat() -> SdeSystem:
    """Stratonovich 非线性项多出 −½(x, y)"""
    half = PolynomialVectorField(2, (_poly(2, {(1, 0): -0.5}), _poly(2, {(0, 1): -0.5})))
    drift = PolynomialVectorField.linear(EXAMPLE1_A) + _example1_nonlinear() + half
    return SdeSystem(drift, _example1_diffusion(), Calculus.STRATONOVICH, "example1-strat", ("x", "y"), EXAMPLE1_A)


def example1_truncated(inner_radius: Optional[float] = None, outer_radius: Optional[float] = None) -> SdeSystem:
    """Ax + taper(F), ‖x‖ ≥ r1 处只剩线性部分"""
    r0 = settings.TRUNCATION_INNER_RADIUS if inner_radius is None else inner_radius
    r1 = settings.TRUNCATION_OUTER_RADIUS if outer_radius is None else outer_radius
    drift = SummedField((PolynomialVectorField.linear(EXAMPLE1_A), truncate(_example1_nonlinear(), r0, r1)))
    return SdeSystem(drift, _example1_diffusion(), Calculus.ITO, "example1-truncated", ("x", "y"), EXAMPLE1_A)


def example1_reduced() -> SdeSystem:
    """dy = (−2 − y³) dt + y dW"""
    drift = PolynomialVectorField(1, (_poly(1, {(0,): -2.0, (3,): -1.0}),))
    diffusion = PolynomialMatrixField(1, 1, ((_poly(1, {(1,): 1.0}),),))
    return SdeSystem(drift, diffusion, Calculus.ITO, "example1-reduced", ("y",), np.zeros((1, 1)))


# ---- 例 2: 两列噪声相同 Bʲ = (x, x + y) ----
def _example2_diffusion() -> PolynomialMatrixField:
    column = PolynomialVectorField(2, (_poly(2, {(1, 0): 1.0}), _poly(2, {(1, 0): 1.0, (0, 1): 1.0})))
    return PolynomialMatrixField.from_columns([column, column])


def example2(tangent: bool = False) -> SdeSystem:
    """漂移 (x, 3x + 2y); tangent=True 时为 (2x, 3x + 2y), 使 μ = (x, x + y) 与 B¹ 重合"""
    x_coef = 2.0 if tangent else 1.0
    drift = PolynomialVectorField(
        2, (_poly(2, {(1, 0): x_coef}), _poly(2, {(1, 0): 3.0, (0, 1): 2.0}))
    )
    name = "example2-tangent" if tangent else "example2"
    return SdeSystem(drift, _example2_diffusion(), Calculus.ITO, name, ("x", "y"))


# ---- 流形 ----
def _log_graph_value(x: np.ndarray) -> np.ndarray:
    return x[..., 1] / x[..., 0] - np.log(x[..., 0])


def _log_graph_gradient(x: np.ndarray) -> np.ndarray:
    u, v = x[..., 0], x[..., 1]
    return np.stack([-v / u**2 - 1.0 / u, 1.0 / u], axis=-1)


MANIFOLD_REGISTRY: dict[str, GraphManifold] = {
    "example2-log": GraphManifold(
        ClosedFormScalarField(2, _log_graph_value, _log_graph_gradient, "y/x - ln(x)"),
        np.array([[0.05, 20.0], [-100.0, 100.0]]),
        "example2-log",
        {1: (-100.0, 100.0)},
    ),
    "unit-circle": GraphManifold(
        _poly(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0}),
        np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        "unit-circle",
        {1: (0.0, 2.0)},
    ),
    "x-axis": GraphManifold(
        _poly(2, {(0, 1): 1.0}),
        np.array([[-10.0, 10.0], [-10.0, 10.0]]),
        "x-axis",
        {1: (-10.0, 10.0)},
    ),
}


# ---- 系统注册表 ----
SYSTEM_REGISTRY: dict[str, SystemRegistryEntry] = {
    "example1-strat": SystemRegistryEntry(
        name="example1-strat",
        system=example1_strat(),
        provenance="Example 1, Stratonovich form: F = (xy^2 - x^3 - x/2, -2 + x^2 y - y^3 - y/2), B = diag(x, y)",
    ),
    "example1-ito": SystemRegistryEntry(
        name="example1-ito",
        system=example1_ito(),
        provenance="Example 1, equivalent Ito form: F = (xy^2 - x^3, -2 + x^2 y - y^3), B = diag(x, y)",
    ),
    "example1-truncated": SystemRegistryEntry(
        name="example1-truncated",
        system=example1_truncated(),
        provenance="Example 1 Ito form with the nonlinearity cut off outside a small ball (radius = epsilon)",
    ),
    "example1-reduced": SystemRegistryEntry(
        name="example1-reduced",
        system=example1_reduced(),
        provenance="Example 1, one-dimensional reduced system dy = (-2 - y^3) dt + y dW",
    ),
    "example2": SystemRegistryEntry(
        name="example2",
        system=example2(),
        provenance=(
            "Example 2: F = (x, 3x + 2y), B^1 = B^2 = (x, x + y); "
            "mu = (0, x + y) is not tangent to y/x - ln x = 0, only the diffusion residuals vanish"
        ),
        manifold="example2-log",
        chart=(0,),
    ),
    "example2-tangent": SystemRegistryEntry(
        name="example2-tangent",
        system=example2(tangent=True),
        provenance="Example 2 with drift (2x, 3x + 2y), so that mu = (x, x + y) = B^1",
        manifold="example2-log",
        chart=(0,),
    ),
}


def get_system(name: str) -> SystemRegistryEntry:
    try:
        return SYSTEM_REGISTRY[name]
    except KeyError:
        raise ConfigError(f"未知系统 {name!r}, 可选: {sorted(SYSTEM_REGISTRY)}") from None


def get_manifold(name: str) -> GraphManifold:
    try:
        return MANIFOLD_REGISTRY[name]
    except KeyError:
        raise ConfigError(f"未知流形 {name!r}, 可选: {sorted(MANIFOLD_REGISTRY)}") from None


# ==========================================
# 内联系统描述 <-> SdeSystem
# ==========================================
def serialize_system(sys: SdeSystem) -> dict:
    """多项式系统 → 内联描述 (parse 的逆)"""
    if not sys.is_polynomial:
        raise NonPolynomialError(f"{sys.name} 含非多项式系数, 无法序列化为内联描述")
    spec = {
        "name": sys.name,
        "dim": sys.dim,
        "noise_dim": sys.noise_dim,
        "calculus": sys.calculus.value,
        "variables": list(sys.variables),
        "drift": sys.drift.to_spec(),
        "diffusion": sys.diffusion.to_spec(),
    }
    if sys.linear_part is not None:
        spec["linear_part"] = sys.linear_part.tolist()
    return spec


def system_from_spec(spec: dict) -> SdeSystem:
    """内联描述 → SdeSystem; 指数长度错误时报出具体单项式"""
    dim, noise_dim = int(spec["dim"]), int(spec["noise_dim"])
    drift = PolynomialVectorField.from_spec(dim, spec["drift"])
    diffusion = PolynomialMatrixField.from_spec(dim, noise_dim, spec["diffusion"])
    linear = spec.get("linear_part")
    return SdeSystem(
        drift,
        diffusion,
        Calculus(spec["calculus"]),
        spec.get("name") or "inline",
        tuple(spec.get("variables") or ()),
        None if linear is None else np.asarray(linear, dtype=float),
    )
