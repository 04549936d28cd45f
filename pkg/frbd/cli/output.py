"""
结果输出

CSV 用 pandas 写出 (最短往返浮点表示, LF 换行), 报告为 `key = value` 文本。
所有文件先写 .tmp 再原子替换。
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import pandas as pd

from frbd.core.config import settings
from frbd.core.logging import cli_logger


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_value(value: Any) -> str:
    """报告中的值: 浮点取 repr (最短往返), 布尔小写"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def emit_csv(frame: pd.DataFrame, path: Path) -> Path:
    """写出 CSV; 同一输入重复运行得到逐字节相同的文件"""
    path.parent.mkdir(parents=True, exist_ok=True)
    # float_format=None 时 pandas 使用 repr, 即最短往返表示
    text = frame.to_csv(index=False, lineterminator="\n")
    _atomic_write(path, text)
    cli_logger.info("已写出 %s (%d 行)", path, len(frame))
    return path


def emit_report(report: Mapping[str, Any], path: Path) -> Path:
    """写出 key = value 报告, 按插入顺序"""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {format_value(value)}" for key, value in report.items()]
    _atomic_write(path, "\n".join(lines) + "\n")
    cli_logger.info("已写出 %s", path)
    return path


def write_metadata(
    out_dir: Path,
    command: str,
    seed: int,
    solver: Mapping[str, Any],
    config_sha256: Optional[str],
    config_path: Optional[str] = None,
) -> Path:
    """metadata.cfg: 配置哈希、版本、求解器设置、种子、命令"""
    meta = {
        "command": command,
        "version": settings.VERSION,
        "config_path": config_path or "",
        "config_hash": config_sha256 or "",
        "seed": seed,
    }
    meta.update({f"solver.{key}": value for key, value in solver.items()})
    return emit_report(meta, out_dir / "metadata.cfg")
