"""
结果导出服务

  - JSON (报告: 不变性、一致性、逃逸统计、长时比较), 顶层带 provenance
  - CSV  (轨道、积分曲面、收敛表、能量剖面), 以 "# " 注释行开头回显配置与种子

输出不含时间戳, 同一配置与种子两次运行得到逐字节相同的文件。
"""
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from manifold_sde.config import get_settings


def provenance(subcommand: str, config: dict, seed: int) -> dict:
    settings = get_settings()
    return {
        "tool": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
    }


def _jsonable(value: Any) -> Any:
    """numpy 标量/数组 → 原生类型; NaN / inf → None"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def export_json(payload: dict, meta: dict) -> str:
    """导出为 JSON 格式"""
    body = {"provenance": _jsonable(meta), **_jsonable(payload)}
    return json.dumps(body, ensure_ascii=False, indent=2) + "\n"


def export_csv(frame: pd.DataFrame, meta: dict) -> str:
    """导出为 CSV 格式 (注释头 + 数据, 浮点数按 repr 精度写出)"""
    lines = [
        f"# {meta['tool']} {meta['version']} {meta['subcommand']}",
        f"# seed: {meta['seed']}",
        "# config: " + json.dumps(_jsonable(meta["config"]), ensure_ascii=False, sort_keys=True),
    ]
    body = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return "\n".join(lines) + "\n" + body


def write_artifact(out_dir: Path, filename: str, text: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / filename
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path
