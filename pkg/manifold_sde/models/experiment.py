"""
实验配置 Schema — 所有子命令共用一个 JSON 配置文件, 未知键严格拒绝
"""
from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from manifold_sde.config import get_settings
from manifold_sde.services.sde_core import Calculus


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TermSpec(StrictModel):
    coefficient: float
    exponents: list[int]


class InlineSystem(StrictModel):
    """多项式系数的内联描述 (与 serialize_system 的输出同构)"""

    name: str = "inline"
    dim: int = Field(gt=0)
    noise_dim: int = Field(gt=0)
    calculus: Calculus
    variables: Optional[list[str]] = None
    drift: list[list[TermSpec]]
    diffusion: list[list[list[TermSpec]]]
    linear_part: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.drift) != self.dim:
            raise ValueError(f"drift 需要 {self.dim} 个分量, 收到 {len(self.drift)}")
        if len(self.diffusion) != self.dim or any(len(row) != self.noise_dim for row in self.diffusion):
            raise ValueError(f"diffusion 形状必须为 {self.dim}×{self.noise_dim}")
        terms = [t for comp in self.drift for t in comp]
        terms += [t for row in self.diffusion for entry in row for t in entry]
        for t in terms:
            if len(t.exponents) != self.dim:
                raise ValueError(
                    f"单项式 {t.coefficient}*{t.exponents} 的指数长度 {len(t.exponents)} 与维数 {self.dim} 不一致"
                )
        if self.linear_part is not None and (
            len(self.linear_part) != self.dim or any(len(r) != self.dim for r in self.linear_part)
        ):
            raise ValueError(f"linear_part 必须是 {self.dim}×{self.dim} 矩阵")
        return self


class InlineManifold(StrictModel):
    """多项式 G 与定义域盒"""

    name: str = "inline-manifold"
    dim: int = Field(gt=0)
    terms: list[TermSpec]
    box: list[list[float]]
    chart_brackets: dict[int, list[float]] = {}

    @model_validator(mode="after")
    def _check_terms(self):
        for t in self.terms:
            if len(t.exponents) != self.dim:
                raise ValueError(f"单项式 {t.coefficient}*{t.exponents} 的指数长度与维数 {self.dim} 不一致")
        if len(self.box) != self.dim or any(len(b) != 2 for b in self.box):
            raise ValueError(f"box 必须是 {self.dim} 个 [lo, hi] 区间")
        return self


class TruncationBlock(StrictModel):
    inner_radius: float = Field(gt=0)
    outer_radius: float = Field(gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.inner_radius >= self.outer_radius:
            raise ValueError("需要 inner_radius < outer_radius")
        return self


class InvarianceBlock(StrictModel):
    box: list[list[float]]
    count: int = Field(default=1000, gt=0)
    tol: Optional[float] = Field(default=None, gt=0)
    components: str = "all"

    @field_validator("components")
    @classmethod
    def _known_components(cls, v: str) -> str:
        if v not in ("all", "drift", "diffusion"):
            raise ValueError("components 必须是 all / drift / diffusion")
        return v


class CurveBlock(StrictModel):
    """Γ: 位置与取值都是参数 s 的多项式"""

    position: list[list[TermSpec]]
    value: list[TermSpec]
    param_box: list[list[float]]


class CharacteristicsBlock(StrictModel):
    generator: Union[int, str] = "B1"
    curve: CurveBlock
    s_count: int = Field(default=201, ge=4)
    t_span: Union[float, list[float]] = 1.0
    h_char: float = Field(default=1e-3, gt=0)
    samples: int = Field(default=50, gt=0)
    angle_threshold: Optional[float] = Field(default=None, gt=0)


class ReductionBlock(StrictModel):
    tol_eig: float = Field(default=1e-9, gt=0)
    compare: bool = False
    T: float = Field(default=20.0, gt=0)
    burn_in: float = Field(default=10.0, ge=0)
    ensemble: int = Field(default=10_000, gt=0)
    samples: int = Field(default=10, gt=0)
    x0_reduced: Optional[list[float]] = None
    # 与之比较的约化系统 (注册名或内联); 缺省为自动约化结果
    against: Optional[Union[str, InlineSystem]] = None


class EscapeBlock(StrictModel):
    levels: list[float] = [0.5, 0.9, 1.0]
    record_every: Optional[int] = Field(default=None, gt=0)


class IntegralBlock(StrictModel):
    T: float = Field(default=1.0, gt=0)
    steps: list[float] = [4e-3, 1e-3, 2.5e-4]
    paths: int = Field(default=1000, gt=1)


class EnergyBlock(StrictModel):
    samples: int = Field(default=20, gt=0)


class ExperimentConfig(StrictModel):
    system: Union[str, InlineSystem] = "example1-ito"
    # 运行时使用的演算; 与系统标记不同时显式转换 (convert 子命令中为目标演算)
    calculus: Optional[Calculus] = None
    x0: Optional[list[float]] = None
    T: Optional[float] = Field(default=None, gt=0)
    h: float = Field(default_factory=lambda: get_settings().DEFAULT_STEP, gt=0)
    seed: int = 0
    ensemble: int = Field(default=1, gt=0)
    record_every: Optional[int] = Field(default=None, gt=0)
    manifold: Optional[Union[str, InlineManifold]] = None
    chart: Optional[list[int]] = None
    truncation: Optional[TruncationBlock] = None
    invariance: Optional[InvarianceBlock] = None
    characteristics: Optional[CharacteristicsBlock] = None
    reduction: Optional[ReductionBlock] = None
    escape: Optional[EscapeBlock] = None
    integral: Optional[IntegralBlock] = None
    energy: Optional[EnergyBlock] = None
