"""
运行配置解析

文件格式: 每行 `section.key = value`, 以 # 或 ; 开头的行为注释, 空行忽略。
所有语法错误与校验错误一次性收集, 以 ConfigValidationError 抛出。
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

from frbd.cli.schemas import COMMANDS, RunConfig
from frbd.core.exceptions import ConfigValidationError
from frbd.core.logging import cli_logger


def read_assignments(text: str) -> Tuple[Dict[str, Dict[str, str]], List[Tuple[str, str]]]:
    """把文本拆成 {section: {key: value}}, 同时返回语法错误列表"""
    sections: Dict[str, Dict[str, str]] = {}
    errors: List[Tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if "=" not in line:
            errors.append((f"line {lineno}", f"缺少 '=': {line!r}"))
            continue
        lhs, value = (part.strip() for part in line.split("=", 1))
        section, dot, key = lhs.partition(".")
        if not dot or not section or not key or "." in key:
            errors.append((f"line {lineno}", f"键必须形如 section.key: {lhs!r}"))
            continue
        bucket = sections.setdefault(section, {})
        if key in bucket:
            errors.append((lhs, f"重复赋值 (line {lineno})"))
            continue
        bucket[key] = value
    return sections, errors


def _format_loc(loc: Tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def build_run_config(
    sections: Dict[str, Dict[str, str]],
    command: Optional[str] = None,
    base_dir: Optional[Path] = None,
) -> RunConfig:
    """由分节字典构建 RunConfig; 命令行给出的 command 优先于 run.command"""
    data: Dict[str, object] = {name: dict(values) for name, values in sections.items()}
    chosen = command or sections.get("run", {}).get("command")
    if chosen is None:
        raise ConfigValidationError([("command", f"未指定命令, 可选: {', '.join(COMMANDS)}")])
    data["command"] = chosen
    try:
        return RunConfig.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as exc:
        errors = [(_format_loc(err["loc"]), err["msg"]) for err in exc.errors()]
        raise ConfigValidationError(errors) from None


def parse_config(path: str | Path, command: Optional[str] = None) -> RunConfig:
    """解析并校验配置文件

    Args:
        path: 配置文件路径
        command: 命令名, 为 None 时读取 run.command

    Raises:
        ConfigValidationError: 文件不可读、语法错误或任何字段校验失败
    """
    cfg_path = Path(path)
    try:
        text = cfg_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigValidationError([("config", f"无法读取配置文件 {cfg_path}: {exc}")]) from None

    sections, errors = read_assignments(text)
    try:
        cfg = build_run_config(sections, command, base_dir=cfg_path.parent)
    except ConfigValidationError as exc:
        errors.extend(exc.errors)
        cfg = None
    if errors:
        cli_logger.error("配置 %s 校验失败, 共 %d 处错误", cfg_path, len(errors))
        raise ConfigValidationError(errors)
    cli_logger.info("已加载配置 %s (命令: %s)", cfg_path, cfg.command)
    return cfg


def config_hash(path: str | Path) -> str:
    """配置文件内容的 sha256"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
