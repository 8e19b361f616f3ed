"""
命令行入口 — 可复现实验驱动

用法:
    python -m manifold_sde <subcommand> --config configs/x.json --out results/ [--seed N] [--quiet]

子命令: simulate / convert / verify-invariance / characteristics / reduce /
        escape / integral-demo / energy
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from manifold_sde.config import get_settings
from manifold_sde.errors import ConfigError, ManifoldSdeError
from manifold_sde.models.experiment import (
    CharacteristicsBlock,
    EnergyBlock,
    EscapeBlock,
    ExperimentConfig,
    IntegralBlock,
    InvarianceBlock,
    ReductionBlock,
)
from manifold_sde.services import report_service
from manifold_sde.services.center_reduction import (
    ReducedSystem,
    build_reduced_system,
    compare_long_time,
    dissipation_profile,
    spectral_split,
)
from manifold_sde.services.characteristics import InitialCurve, solve_invariance_pde
from manifold_sde.services.fields import PolynomialScalarField, PolynomialVectorField
from manifold_sde.services.invariance import GraphManifold, escape_diagnostic, restrict_system, verify_invariance
from manifold_sde.services.sde_core import (
    Calculus,
    SdeSystem,
    convert_calculus,
    integral_convergence_table,
    simulate,
)
from manifold_sde.services.system_registry import (
    SystemRegistryEntry,
    example1_truncated,
    get_manifold,
    get_system,
    serialize_system,
    system_from_spec,
)
from manifold_sde.workers.ensemble_worker import run_ensemble

logger = logging.getLogger(__name__)


# ==========================================
# 1. 配置解析
# ==========================================
def parse_config(text: str) -> ExperimentConfig:
    """JSON 文本 → 校验后的配置; 语法错误给出行列, Schema 错误给出键路径"""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"配置 JSON 语法错误 (第 {exc.lineno} 行, 第 {exc.colno} 列): {exc.msg}") from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"配置校验失败: {problems}") from None


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"无法读取配置文件 {path}: {exc}") from None
    return parse_config(text)


# ==========================================
# 2. 名称解析
# ==========================================
def resolve_system(cfg: ExperimentConfig) -> tuple[SdeSystem, Optional[SystemRegistryEntry]]:
    """注册名或内联描述 → (系统, 注册项); 演算标记保持原样"""
    if isinstance(cfg.system, str):
        entry = get_system(cfg.system)
        system = entry.system
        if cfg.truncation is not None:
            if cfg.system != "example1-truncated":
                raise ConfigError("truncation 块只适用于 example1-truncated")
            system = example1_truncated(cfg.truncation.inner_radius, cfg.truncation.outer_radius)
        return system, entry
    if cfg.truncation is not None:
        raise ConfigError("truncation 块只适用于 example1-truncated")
    return system_from_spec(cfg.system.model_dump()), None


def _in_calculus(system: SdeSystem, target: Optional[Calculus]) -> SdeSystem:
    return system if target is None else convert_calculus(system, target)


def resolve_manifold(cfg: ExperimentConfig, entry: Optional[SystemRegistryEntry]) -> GraphManifold:
    spec = cfg.manifold if cfg.manifold is not None else (entry.manifold if entry else None)
    if spec is None:
        raise ConfigError("该子命令需要 manifold (注册名或内联多项式)")
    if isinstance(spec, str):
        return get_manifold(spec)
    poly = PolynomialScalarField.from_spec(spec.dim, [t.model_dump() for t in spec.terms])
    brackets = {int(k): (float(v[0]), float(v[1])) for k, v in spec.chart_brackets.items()}
    return GraphManifold.from_polynomial(poly, spec.box, spec.name, brackets)


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"该子命令需要配置项 {what}")
    return value


# ==========================================
# 3. 子命令
# ==========================================
class RunContext:
    def __init__(self, subcommand: str, cfg: ExperimentConfig, out_dir: Path):
        self.subcommand = subcommand
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.meta = report_service.provenance(subcommand, cfg.model_dump(mode="json"), cfg.seed)
        self.written: list[Path] = []

    def write_json(self, filename: str, payload: dict):
        text = report_service.export_json(payload, self.meta)
        self.written.append(report_service.write_artifact(self.out_dir, filename, text))

    def write_csv(self, filename: str, frame):
        text = report_service.export_csv(frame, self.meta)
        self.written.append(report_service.write_artifact(self.out_dir, filename, text))


def cmd_simulate(ctx: RunContext):
    cfg = ctx.cfg
    system, _ = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    x0 = _require(cfg.x0, "x0")
    T = _require(cfg.T, "T")
    if cfg.ensemble == 1:
        traj = simulate(system, x0, T, cfg.h, cfg.seed)
        ctx.write_csv("trajectory.csv", traj.to_frame())
        status = "存活" if traj.lifetime is None else f"寿命 {traj.lifetime:.6g}"
        print(f"simulate {system.name} ({system.calculus.value}): {len(traj.times)} 个状态, {status}")
    else:
        run = run_ensemble(system, x0, T, cfg.h, cfg.ensemble, cfg.seed, record_every=cfg.record_every)
        ctx.write_csv("ensemble.csv", run.to_frame())
        print(f"simulate {system.name} ({system.calculus.value}): {run.size} 条轨道, 存活 {int(run.survived.sum())}")


def cmd_convert(ctx: RunContext):
    cfg = ctx.cfg
    system, entry = resolve_system(cfg)
    if cfg.calculus is not None:
        target = cfg.calculus
    else:
        target = Calculus.ITO if system.calculus is Calculus.STRATONOVICH else Calculus.STRATONOVICH
    converted = convert_calculus(system, target)
    names = converted.variables
    lines = [f"system: {system.name} ({system.calculus.value} -> {target.value})"]
    drift = converted.drift
    if converted.linear_part is not None and isinstance(drift, PolynomialVectorField):
        linear = PolynomialVectorField.linear(converted.linear_part)
        lines.append(f"linear part: {linear.to_text(names)}")
        drift = drift - linear
    lines.append(f"drift: {drift.to_text(names)}")
    lines.append(f"diffusion: {converted.diffusion.to_text(names)}")
    print("\n".join(lines))
    payload = {"text": lines}
    if converted.is_polynomial:
        payload["system"] = serialize_system(converted)
    ctx.write_json("converted.json", payload)


def cmd_verify_invariance(ctx: RunContext):
    cfg = ctx.cfg
    system, entry = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    manifold = resolve_manifold(cfg, entry)
    block = cfg.invariance or InvarianceBlock(box=manifold.domain_box.tolist())
    report = verify_invariance(system, manifold, block.box, block.count, cfg.seed, block.tol, block.components)
    payload = {"system": system.name, "manifold": manifold.name, **report.to_dict()}
    chart = cfg.chart if cfg.chart is not None else (list(entry.chart) if entry is not None and entry.chart else None)
    if report.invariant and chart:
        # 不变时给出限制系统在前几个样本点 (图坐标) 处的系数
        restricted = restrict_system(system, manifold, chart)
        xi = report.points[: min(5, report.n_samples)][:, chart]
        payload["restricted"] = {
            "name": restricted.name,
            "chart": chart,
            "chart_points": xi,
            "drift": restricted.drift.evaluate(xi),
            "diffusion": restricted.diffusion.evaluate(xi),
        }
    ctx.write_json("invariance.json", payload)
    print(
        f"verify-invariance {system.name} on {manifold.name}: {report.verdict} "
        f"(max mu residual {report.max_mu_residual:.3e}, "
        f"max column residuals {[f'{v:.3e}' for v in report.max_column_residuals]})"
    )


def cmd_characteristics(ctx: RunContext):
    cfg = ctx.cfg
    system, entry = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    block: CharacteristicsBlock = _require(cfg.characteristics, "characteristics")
    k = len(block.curve.param_box)
    position = [PolynomialScalarField.from_spec(k, [t.model_dump() for t in comp]) for comp in block.curve.position]
    value = PolynomialScalarField.from_spec(k, [t.model_dump() for t in block.curve.value])
    gamma = InitialCurve.from_polynomials(position, value, block.curve.param_box)
    manifold, report = solve_invariance_pde(
        system, block.generator, gamma, block.s_count, block.t_span, block.h_char, block.samples, block.angle_threshold
    )
    ctx.write_csv("surface.csv", manifold.function.surface.to_frame())
    payload = {"system": system.name, "curve": gamma.label, **report.to_dict()}
    if cfg.manifold is not None or (entry is not None and entry.manifold):
        reference = resolve_manifold(cfg, entry)
        inside = reference.contains(report.points)
        if inside.any():
            gaps = np.abs(reference.function.evaluate(report.points[inside]))
            payload["reference"] = {"manifold": reference.name, "max_abs_g": float(gaps.max()), "checked": int(inside.sum())}
    ctx.write_json("consistency.json", payload)
    print(
        f"characteristics {system.name} via {report.generator}: {len(report.points)} 个零水平点, "
        f"其余残差 {', '.join(f'{k}={v:.3e}' for k, v in report.residuals.items())}"
    )


def _resolve_against(block: ReductionBlock) -> Optional[SdeSystem]:
    if block.against is None:
        return None
    if isinstance(block.against, str):
        return get_system(block.against).system
    return system_from_spec(block.against.model_dump())


def cmd_reduce(ctx: RunContext):
    cfg = ctx.cfg
    system, entry = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    block = cfg.reduction or ReductionBlock()
    if system.linear_part is None:
        raise ConfigError(f"{system.name} 没有线性部分 A, 无法做中心约化")
    split = spectral_split(system.linear_part, block.tol_eig)
    reduced = build_reduced_system(system, split)
    text = reduced.to_text()
    print(text)
    payload = {
        "system": system.name,
        "calculus": system.calculus.value,
        "split": {
            "k": split.k,
            "eigenvalues": {"real": split.eigenvalues.real, "imag": split.eigenvalues.imag},
            "center_basis": split.center_basis,
            "stable_basis": split.stable_basis,
            "center_projection": split.center_projection,
        },
        "reduced": text,
    }
    if reduced.inner.is_polynomial:
        payload["reduced_system"] = serialize_system(reduced.inner)
    ctx.write_json("reduced.json", payload)

    if block.compare:
        against = _resolve_against(block)
        target = reduced if against is None else ReducedSystem(against, split)
        result = compare_long_time(
            system, split, target, block.T, block.burn_in, cfg.h, block.ensemble, cfg.seed,
            block.x0_reduced, block.samples,
        )
        ctx.write_json("comparison.json", result.to_dict())
        print(f"ks_distance: {result.ks_distance:.4f} (n_full={result.n_full}, n_reduced={result.n_reduced})")


def cmd_escape(ctx: RunContext):
    cfg = ctx.cfg
    system, entry = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    manifold = resolve_manifold(cfg, entry)
    block = cfg.escape or EscapeBlock()
    stats = escape_diagnostic(
        system, manifold, _require(cfg.x0, "x0"), _require(cfg.T, "T"), cfg.h, cfg.ensemble, cfg.seed,
        block.levels, block.record_every,
    )
    ctx.write_json("escape.json", {"system": system.name, "manifold": manifold.name, **stats.to_dict()})
    ctx.write_csv("escape.csv", stats.to_frame())
    print(f"escape {system.name} h={cfg.h:g}: median |G(X_T)| = {stats.terminal_median:.4e}")


def cmd_integral_demo(ctx: RunContext):
    cfg = ctx.cfg
    block = cfg.integral or IntegralBlock()
    table = integral_convergence_table(block.T, block.steps, block.paths, cfg.seed)
    ctx.write_csv("integrals.csv", table)
    print(table.to_string(index=False))


def cmd_energy(ctx: RunContext):
    cfg = ctx.cfg
    system, _ = resolve_system(cfg)
    system = _in_calculus(system, cfg.calculus)
    block = cfg.energy or EnergyBlock()
    profile = dissipation_profile(
        system, _require(cfg.x0, "x0"), _require(cfg.T, "T"), cfg.h, cfg.ensemble, cfg.seed, block.samples
    )
    ctx.write_csv("energy.csv", profile)
    print(profile.to_string(index=False))


SUBCOMMANDS: dict[str, Callable[[RunContext], None]] = {
    "simulate": cmd_simulate,
    "convert": cmd_convert,
    "verify-invariance": cmd_verify_invariance,
    "characteristics": cmd_characteristics,
    "reduce": cmd_reduce,
    "escape": cmd_escape,
    "integral-demo": cmd_integral_demo,
    "energy": cmd_energy,
}


def run(subcommand: str, cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    """执行子命令, 返回写出的文件"""
    handler = SUBCOMMANDS.get(subcommand)
    if handler is None:
        raise ConfigError(f"未知子命令 {subcommand!r}, 可选: {list(SUBCOMMANDS)}")
    ctx = RunContext(subcommand, cfg, out_dir)
    logger.info("🚀 %s (seed=%d)", subcommand, cfg.seed)
    handler(ctx)
    for path in ctx.written:
        logger.info("📄 已写出 %s", path)
    return ctx.written


# ==========================================
# 4. main
# ==========================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold_sde", description="SDE 不变流形与中心约化实验工具")
    parser.add_argument("subcommand", choices=list(SUBCOMMANDS), help="要执行的实验")
    parser.add_argument("--config", default=None, help="JSON 实验配置文件")
    parser.add_argument("--out", default="results", help="输出目录")
    parser.add_argument("--seed", type=int, default=None, help="覆盖配置中的种子")
    parser.add_argument("--quiet", action="store_true", help="只输出警告与错误日志")
    return parser


def configure_logging(quiet: bool):
    level = logging.WARNING if quiet else getattr(logging, get_settings().LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        run(args.subcommand, cfg, Path(args.out))
    except ManifoldSdeError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
