"""
闭式系数场 — 多项式标量/向量/矩阵场, 精确求导与径向截断

所有求值均支持批量输入: x 形状为 (..., n)。
多项式由实数域上的 sympy.Poly 承载, 同类项合并、零系数剔除都交给 Poly,
因此两个多项式相等 ⇔ 系数逐项相等 (用于 Ito/Stratonovich 转换的精确比对)。
精确 Jacobian 走 Matrix.jacobian, 数值求值走 lambdify(..., "numpy")。
"""
from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np
import sympy

from manifold_sde.errors import DimensionMismatchError, NonPolynomialError


# ==========================================
# 0. 协议 (任何可求值的场)
# ==========================================
class VectorField(Protocol):
    dim: int

    def evaluate(self, x) -> np.ndarray: ...


class MatrixField(Protocol):
    dim: int
    noise_dim: int

    def evaluate(self, x) -> np.ndarray: ...


def _as_points(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != dim:
        raise DimensionMismatchError(f"点的维数 {arr.shape} 与场维数 {dim} 不一致")
    return arr


def default_variables(dim: int) -> tuple[str, ...]:
    if dim <= 3:
        return ("x", "y", "z")[:dim]
    return tuple(f"x{i + 1}" for i in range(dim))


@lru_cache(maxsize=None)
def generators(dim: int) -> tuple[sympy.Symbol, ...]:
    """R^dim 上多项式的内部生成元 x1..xn; 打印用的变量名另行指定"""
    return tuple(sympy.symbols(f"x1:{dim + 1}"))


def sympy_matrix(a: np.ndarray) -> sympy.Matrix:
    # 逐元素转 sympy.Float, 保留 double 的全部位
    return sympy.Matrix(a.shape[0], a.shape[1], [sympy.Float(float(v)) for v in a.ravel()])


def _canonical_key(exponents: Sequence[int]) -> tuple:
    # 升次; 同次内混合项在前, 再按指数字典序降序
    mixed = sum(1 for e in exponents if e)
    return (sum(exponents), -mixed, tuple(-e for e in exponents))


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


# ==========================================
# 1. 多项式标量场
# ==========================================
@dataclass(frozen=True)
class PolynomialScalarField:
    dim: int
    poly: Optional[sympy.Poly] = None

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("维数必须为正")
        gens = generators(self.dim)
        p = self.poly
        if p is None:
            p = sympy.Poly(0, *gens, domain=sympy.RR)
        elif not isinstance(p, sympy.Poly):
            p = sympy.Poly(p, *gens, domain=sympy.RR)
        if tuple(p.gens) != gens:
            raise DimensionMismatchError(f"多项式生成元 {p.gens} 与维数 {self.dim} 不一致")
        if p.get_domain() != sympy.RR:
            p = p.set_domain(sympy.RR)
        object.__setattr__(self, "poly", p)

    # ---- 构造 ----
    @classmethod
    def from_terms(cls, dim: int, pairs: Iterable[tuple[float, Sequence[int]]]) -> "PolynomialScalarField":
        """(系数, 指数) 序列 → 多项式; 重复指数由 sympy 合并"""
        gens = generators(dim)
        monomials = []
        for coefficient, exponents in pairs:
            exps = tuple(int(e) for e in exponents)
            if len(exps) != dim:
                raise DimensionMismatchError(
                    f"单项式 {float(coefficient)}*{list(exps)} 的指数长度 {len(exps)} 与维数 {dim} 不一致"
                )
            if any(e < 0 for e in exps):
                raise ValueError(f"指数必须非负: {exps}")
            if not math.isfinite(coefficient):
                raise ValueError(f"系数必须有限: {coefficient}")
            monomials.append(sympy.Float(float(coefficient)) * sympy.Mul(*(g**e for g, e in zip(gens, exps))))
        return cls(dim, sympy.Poly(sympy.Add(*monomials), *gens, domain=sympy.RR))

    @classmethod
    def from_dict(cls, dim: int, coefficients: Mapping[Sequence[int], float]) -> "PolynomialScalarField":
        """{指数元组: 系数} → 多项式"""
        return cls.from_terms(dim, ((c, e) for e, c in coefficients.items()))

    @classmethod
    def from_expr(cls, dim: int, expr) -> "PolynomialScalarField":
        return cls(dim, sympy.Poly(expr, *generators(dim), domain=sympy.RR))

    @classmethod
    def constant(cls, dim: int, value: float) -> "PolynomialScalarField":
        return cls.from_terms(dim, [(value, (0,) * dim)])

    @classmethod
    def variable(cls, dim: int, index: int, coefficient: float = 1.0) -> "PolynomialScalarField":
        return cls.from_expr(dim, sympy.Float(float(coefficient)) * generators(dim)[index])

    @classmethod
    def zero(cls, dim: int) -> "PolynomialScalarField":
        return cls(dim)

    # ---- 代数 ----
    def _coerce(self, other) -> "PolynomialScalarField":
        if isinstance(other, numbers.Real):
            return PolynomialScalarField.constant(self.dim, float(other))
        if other.dim != self.dim:
            raise DimensionMismatchError(f"多项式维数不一致: {self.dim} vs {other.dim}")
        return other

    def __add__(self, other):
        return PolynomialScalarField(self.dim, self.poly + self._coerce(other).poly)

    __radd__ = __add__

    def __neg__(self):
        return PolynomialScalarField(self.dim, -self.poly)

    def __sub__(self, other):
        return PolynomialScalarField(self.dim, self.poly - self._coerce(other).poly)

    def scale(self, factor: float) -> "PolynomialScalarField":
        return self * PolynomialScalarField.constant(self.dim, float(factor))

    def __mul__(self, other):
        return PolynomialScalarField(self.dim, self.poly * self._coerce(other).poly)

    __rmul__ = __mul__

    def __pow__(self, power: int) -> "PolynomialScalarField":
        return PolynomialScalarField(self.dim, self.poly ** int(power))

    @property
    def is_zero(self) -> bool:
        return self.poly.is_zero

    @property
    def degree(self) -> int:
        return 0 if self.is_zero else int(self.poly.total_degree())

    @cached_property
    def terms(self) -> tuple[tuple[float, tuple[int, ...]], ...]:
        """(系数, 指数) 按规范项序排列"""
        if self.is_zero:
            return ()
        pairs = [(float(c), tuple(int(e) for e in m)) for m, c in self.poly.terms(order="grlex") if c != 0]
        return tuple(sorted(pairs, key=lambda t: _canonical_key(t[1])))

    def chop(self, tol: float = 1e-13) -> "PolynomialScalarField":
        """剔除 |系数| ≤ tol 的项 (线性代换后消除舍入残留)"""
        return PolynomialScalarField.from_terms(self.dim, (t for t in self.terms if abs(t[0]) > tol))

    def derivative(self, k: int) -> "PolynomialScalarField":
        return PolynomialScalarField(self.dim, self.poly.diff(generators(self.dim)[k]))

    def as_expr(self) -> sympy.Expr:
        return self.poly.as_expr()

    def compose_linear(self, matrix) -> "PolynomialScalarField":
        """代换 x = M ξ, M 形状 (dim, k) → ξ 的 k 元多项式"""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != self.dim:
            raise DimensionMismatchError(f"代换矩阵形状 {m.shape} 与维数 {self.dim} 不一致")
        images = sympy_matrix(m) * sympy.Matrix(generators(m.shape[1]))
        # xreplace 一次性替换, 新旧生成元同名也不会串
        expr = self.as_expr().xreplace(dict(zip(generators(self.dim), images)))
        return PolynomialScalarField.from_expr(m.shape[1], expr)

    # ---- 求值 ----
    @cached_property
    def _evaluator(self) -> tuple[Callable, np.ndarray]:
        # lambdify 只生成单项式, 系数以 float 数组相乘, 避免打印浮点常数时丢位
        gens = generators(self.dim)
        monomials = [sympy.Mul(*(g**e for g, e in zip(gens, exps))) for _, exps in self.terms]
        return sympy.lambdify(gens, monomials, "numpy"), np.array([c for c, _ in self.terms])

    def evaluate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        value = np.zeros(pts.shape[:-1])
        if self.is_zero:
            return value
        fn, coefficients = self._evaluator
        for c, mono in zip(coefficients, fn(*np.moveaxis(pts, -1, 0))):
            value = value + c * np.asarray(mono, dtype=float)
        return value

    @cached_property
    def _gradient(self) -> tuple["PolynomialScalarField", ...]:
        return tuple(self.derivative(k) for k in range(self.dim))

    def gradient_fields(self) -> tuple["PolynomialScalarField", ...]:
        return self._gradient

    def gradient(self, x) -> np.ndarray:
        return np.stack([g.evaluate(x) for g in self._gradient], axis=-1)

    # ---- 文本 / 序列化 ----
    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        names = tuple(variables) if variables else default_variables(self.dim)
        if not self.terms:
            return "0"
        pieces = []
        for idx, (c, exps) in enumerate(self.terms):
            body = "*".join(f"{names[i]}^{e}" if e > 1 else names[i] for i, e in enumerate(exps) if e)
            mag = abs(c)
            if not body:
                text = _format_number(mag)
            elif mag == 1.0:
                text = body
            else:
                text = f"{_format_number(mag)}*{body}"
            if idx == 0:
                pieces.append(f"-{text}" if c < 0 else text)
            else:
                pieces.append(f" {'-' if c < 0 else '+'} {text}")
        return "".join(pieces)

    def to_spec(self) -> list[dict]:
        return [{"coefficient": c, "exponents": list(e)} for c, e in self.terms]

    @classmethod
    def from_spec(cls, dim: int, spec: Iterable[Mapping]) -> "PolynomialScalarField":
        return cls.from_terms(dim, ((item["coefficient"], item["exponents"]) for item in spec))


# ==========================================
# 2. 多项式向量场 / 矩阵场
# ==========================================
@dataclass(frozen=True)
class PolynomialVectorField:
    dim: int
    components: tuple[PolynomialScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.dim:
            raise DimensionMismatchError(f"分量个数 {len(comps)} 与维数 {self.dim} 不一致")
        for c in comps:
            if c.dim != self.dim:
                raise DimensionMismatchError("所有分量必须定义在同一 R^n 上")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_matrix(cls, dim: int, matrix: sympy.Matrix) -> "PolynomialVectorField":
        """dim×1 的 sympy 列矩阵 → 向量场"""
        return cls(dim, tuple(PolynomialScalarField.from_expr(dim, e) for e in matrix))

    @classmethod
    def linear(cls, matrix) -> "PolynomialVectorField":
        a = np.asarray(matrix, dtype=float)
        n = a.shape[0]
        return cls.from_matrix(n, sympy_matrix(a) * sympy.Matrix(generators(n)))

    @classmethod
    def zero(cls, dim: int) -> "PolynomialVectorField":
        return cls(dim, tuple(PolynomialScalarField.zero(dim) for _ in range(dim)))

    def as_matrix(self) -> sympy.Matrix:
        return sympy.Matrix([c.as_expr() for c in self.components])

    def __add__(self, other: "PolynomialVectorField") -> "PolynomialVectorField":
        if not isinstance(other, PolynomialVectorField) or other.dim != self.dim:
            return NotImplemented
        return PolynomialVectorField(self.dim, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "PolynomialVectorField") -> "PolynomialVectorField":
        if not isinstance(other, PolynomialVectorField) or other.dim != self.dim:
            return NotImplemented
        return PolynomialVectorField(self.dim, tuple(a - b for a, b in zip(self.components, other.components)))

    def scale(self, factor: float) -> "PolynomialVectorField":
        return PolynomialVectorField(self.dim, tuple(c.scale(factor) for c in self.components))

    def evaluate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        return np.stack([c.evaluate(pts) for c in self.components], axis=-1)

    @cached_property
    def _jacobian(self) -> tuple[tuple[PolynomialScalarField, ...], ...]:
        jac = self.as_matrix().jacobian(sympy.Matrix(generators(self.dim)))
        return tuple(
            tuple(PolynomialScalarField.from_expr(self.dim, jac[i, k]) for k in range(self.dim))
            for i in range(self.dim)
        )

    def jacobian_fields(self) -> tuple[tuple[PolynomialScalarField, ...], ...]:
        return self._jacobian

    def jacobian(self, x) -> np.ndarray:
        return jacobian_exact(self, x)

    def chop(self, tol: float = 1e-13) -> "PolynomialVectorField":
        return PolynomialVectorField(self.dim, tuple(c.chop(tol) for c in self.components))

    def restrict_linear(self, embedding, projection) -> "PolynomialVectorField":
        """ξ ↦ P·F(E ξ); E 形状 (dim, k), P 形状 (k, dim)"""
        e = np.asarray(embedding, dtype=float)
        p = np.asarray(projection, dtype=float)
        k = e.shape[1] if e.ndim == 2 else 0
        if p.shape != (k, self.dim):
            raise DimensionMismatchError(f"投影形状 {p.shape} 应为 {k}×{self.dim}")
        lifted = sympy.Matrix([c.compose_linear(e).as_expr() for c in self.components])
        return PolynomialVectorField.from_matrix(k, sympy_matrix(p) * lifted)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        return ", ".join(c.to_text(variables) for c in self.components)

    def to_spec(self) -> list[list[dict]]:
        return [c.to_spec() for c in self.components]

    @classmethod
    def from_spec(cls, dim: int, spec: Sequence[Sequence[Mapping]]) -> "PolynomialVectorField":
        return cls(dim, tuple(PolynomialScalarField.from_spec(dim, comp) for comp in spec))


@dataclass(frozen=True)
class PolynomialMatrixField:
    dim: int
    noise_dim: int
    entries: tuple[tuple[PolynomialScalarField, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        if len(rows) != self.dim or any(len(r) != self.noise_dim for r in rows):
            raise DimensionMismatchError(f"扩散矩阵形状必须为 {self.dim}×{self.noise_dim}")
        for r in rows:
            for e in r:
                if e.dim != self.dim:
                    raise DimensionMismatchError("扩散矩阵元素维数不一致")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def diagonal(cls, diagonal: Sequence[PolynomialScalarField]) -> "PolynomialMatrixField":
        n = len(diagonal)
        zero = PolynomialScalarField.zero(n)
        return cls(n, n, tuple(tuple(diagonal[i] if i == j else zero for j in range(n)) for i in range(n)))

    @classmethod
    def from_columns(cls, columns: Sequence[PolynomialVectorField]) -> "PolynomialMatrixField":
        n = columns[0].dim
        return cls(n, len(columns), tuple(tuple(col.components[i] for col in columns) for i in range(n)))

    @classmethod
    def from_matrix(cls, dim: int, matrix: sympy.Matrix) -> "PolynomialMatrixField":
        rows, cols = matrix.shape
        return cls(
            dim,
            cols,
            tuple(tuple(PolynomialScalarField.from_expr(dim, matrix[i, j]) for j in range(cols)) for i in range(rows)),
        )

    @classmethod
    def zero(cls, dim: int, noise_dim: int) -> "PolynomialMatrixField":
        zero = PolynomialScalarField.zero(dim)
        return cls(dim, noise_dim, tuple(tuple(zero for _ in range(noise_dim)) for _ in range(dim)))

    def as_matrix(self) -> sympy.Matrix:
        return sympy.Matrix([[e.as_expr() for e in row] for row in self.entries])

    def column(self, j: int) -> PolynomialVectorField:
        return PolynomialVectorField(self.dim, tuple(row[j] for row in self.entries))

    def columns(self) -> tuple[PolynomialVectorField, ...]:
        return tuple(self.column(j) for j in range(self.noise_dim))

    def evaluate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        rows = [np.stack([e.evaluate(pts) for e in row], axis=-1) for row in self.entries]
        return np.stack(rows, axis=-2)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        rows = ", ".join("[" + ", ".join(e.to_text(variables) for e in row) + "]" for row in self.entries)
        return f"[{rows}]"

    def to_spec(self) -> list[list[list[dict]]]:
        return [[e.to_spec() for e in row] for row in self.entries]

    @classmethod
    def from_spec(cls, dim: int, noise_dim: int, spec) -> "PolynomialMatrixField":
        return cls(
            dim,
            noise_dim,
            tuple(tuple(PolynomialScalarField.from_spec(dim, e) for e in row) for row in spec),
        )


# ==========================================
# 3. 精确 / 差分 Jacobian
# ==========================================
def jacobian_exact(field: PolynomialVectorField, x) -> np.ndarray:
    """(i,k) 元 = ∂F_i/∂x_k, 由 Matrix.jacobian 符号求导后逐元求值"""
    if not isinstance(field, PolynomialVectorField):
        raise NonPolynomialError(f"jacobian_exact 只接受多项式场, 收到 {type(field).__name__}")
    pts = _as_points(x, field.dim)
    rows = [np.stack([d.evaluate(pts) for d in row], axis=-1) for row in field.jacobian_fields()]
    return np.stack(rows, axis=-2)


def jacobian_fd(field: VectorField, x, delta: float = 1e-5) -> np.ndarray:
    """中心差分 Jacobian, 误差 O(delta²)"""
    if delta <= 0:
        raise ValueError(f"差分步长必须为正: {delta}")
    pts = _as_points(x, field.dim)
    cols = []
    for k in range(field.dim):
        step = np.zeros(field.dim)
        step[k] = delta
        cols.append((field.evaluate(pts + step) - field.evaluate(pts - step)) / (2.0 * delta))
    return np.stack(cols, axis=-1)


def gradient_fd(scalar, x, delta: float = 1e-5) -> np.ndarray:
    """标量场的中心差分梯度"""
    if delta <= 0:
        raise ValueError(f"差分步长必须为正: {delta}")
    pts = _as_points(x, scalar.dim)
    cols = []
    for k in range(scalar.dim):
        step = np.zeros(scalar.dim)
        step[k] = delta
        cols.append((scalar.evaluate(pts + step) - scalar.evaluate(pts - step)) / (2.0 * delta))
    return np.stack(cols, axis=-1)


# ==========================================
# 4. 径向截断与组合场
# ==========================================
def _smoothstep_weight(r: np.ndarray, r0: float, r1: float) -> tuple[np.ndarray, np.ndarray]:
    """返回 (w(r), w'(r)); r ≤ r0 时 w=1, r ≥ r1 时 w=0, 中间为三次 smoothstep (C¹)"""
    tau = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    w = 1.0 - tau * tau * (3.0 - 2.0 * tau)
    dw = -6.0 * tau * (1.0 - tau) / (r1 - r0)
    return w, dw


@dataclass(frozen=True)
class TaperedField:
    base: PolynomialVectorField
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not (0.0 < self.inner_radius < self.outer_radius):
            raise ValueError(f"截断半径需满足 0 < r0 < r1, 收到 r0={self.inner_radius}, r1={self.outer_radius}")

    @property
    def dim(self) -> int:
        return self.base.dim

    def weight(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        return _smoothstep_weight(np.linalg.norm(pts, axis=-1), self.inner_radius, self.outer_radius)[0]

    def evaluate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        w = self.weight(pts)
        out = self.base.evaluate(pts) * w[..., None]
        # r ≥ r1 处严格为零
        return np.where(w[..., None] > 0.0, out, 0.0)

    def jacobian(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        r = np.linalg.norm(pts, axis=-1)
        w, dw = _smoothstep_weight(r, self.inner_radius, self.outer_radius)
        safe_r = np.where(r > 0.0, r, 1.0)
        grad_w = (dw / safe_r)[..., None] * pts
        base_val = self.base.evaluate(pts)
        return w[..., None, None] * jacobian_exact(self.base, pts) + base_val[..., :, None] * grad_w[..., None, :]

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        return f"taper[{_format_number(self.inner_radius)}, {_format_number(self.outer_radius)}]({self.base.to_text(variables)})"


def truncate(field: PolynomialVectorField, r0: float, r1: float) -> TaperedField:
    """在 ‖x‖ ≤ r0 内保持原场, ‖x‖ ≥ r1 外为零, 中间 C¹ 光滑过渡"""
    if r0 <= 0 or r0 >= r1:
        raise ValueError(f"截断半径需满足 0 < r0 < r1, 收到 r0={r0}, r1={r1}")
    return TaperedField(field, float(r0), float(r1))


@dataclass(frozen=True)
class SummedField:
    parts: tuple

    def __post_init__(self):
        dims = {p.dim for p in self.parts}
        if len(dims) != 1:
            raise DimensionMismatchError(f"求和的场维数不一致: {sorted(dims)}")
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def evaluate(self, x) -> np.ndarray:
        total = self.parts[0].evaluate(x)
        for p in self.parts[1:]:
            total = total + p.evaluate(x)
        return total

    def jacobian(self, x) -> np.ndarray:
        return sum(p.jacobian(x) for p in self.parts)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        texts = [p.to_text(variables) if hasattr(p, "to_text") else "<field>" for p in self.parts]
        if len(texts) > 1 and all("," in t for t in texts):
            return " + ".join(f"({t})" for t in texts)
        return " + ".join(texts)


@dataclass(frozen=True)
class CallableVectorField:
    """任意可求值向量场 (如限制到流形上的系统); fn 接受 (..., dim) 批量输入"""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    label: str = "<callable>"

    def evaluate(self, x) -> np.ndarray:
        return np.asarray(self.fn(_as_points(x, self.dim)), dtype=float)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        return self.label


@dataclass(frozen=True)
class CallableMatrixField:
    dim: int
    noise_dim: int
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    label: str = "<callable>"

    def evaluate(self, x) -> np.ndarray:
        return np.asarray(self.fn(_as_points(x, self.dim)), dtype=float)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        return self.label


# ==========================================
# 5. 闭式标量场 (非多项式 G 的注册表类型)
# ==========================================
@dataclass(frozen=True)
class ClosedFormScalarField:
    dim: int
    value_fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    gradient_fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    name: str = "<closed-form>"

    def evaluate(self, x) -> np.ndarray:
        return np.asarray(self.value_fn(_as_points(x, self.dim)), dtype=float)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.gradient_fn(_as_points(x, self.dim)), dtype=float)

    def to_text(self, variables: Optional[Sequence[str]] = None) -> str:
        return self.name
