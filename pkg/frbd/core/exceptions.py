"""
异常定义

领域异常层次, 命令行入口按类型映射退出码
"""

from __future__ import annotations

from typing import List, Tuple


class FrBDError(Exception):
    """所有 frbd 异常的基类"""

    exit_code: int = 1


class ConfigValidationError(FrBDError):
    """配置校验失败, 携带全部错误 (键路径, 信息)"""

    exit_code = 1

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        lines = [f"{key}: {msg}" for key, msg in self.errors]
        super().__init__("配置校验失败:\n  " + "\n  ".join(lines))


class ModelDimensionError(FrBDError, ValueError):
    """状态维度与参数分支数不一致"""

    exit_code = 1


class NumericalFailure(FrBDError):
    """数值失败: 步长下溢、非有限状态、仿真发散"""

    exit_code = 2


class MissingChannelError(FrBDError, KeyError):
    """轨迹缺少所需通道"""

    exit_code = 2

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing channel"


class AuditFailure(FrBDError):
    """审计未通过 (无源性 / 有界性 / 耗散恒等式)"""

    exit_code = 3
