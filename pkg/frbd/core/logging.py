"""
日志配置模块

配置应用程序的日志系统，支持不同的日志级别和格式化
"""

import logging
import sys
from pathlib import Path

from frbd.core.config import settings


class ColoredFormatter(logging.Formatter):
    """彩色日志格式化器"""

    # ANSI颜色代码
    COLORS = {
        "DEBUG": "\033[36m",     # 青色
        "INFO": "\033[32m",      # 绿色
        "WARNING": "\033[33m",   # 黄色
        "ERROR": "\033[31m",     # 红色
        "CRITICAL": "\033[35m",  # 紫色
        "RESET": "\033[0m",      # 重置
    }

    def format(self, record: logging.LogRecord) -> str:
        # 只给副本着色, 文件处理器仍拿到原始级别名
        levelname = record.levelname
        if levelname in self.COLORS:
            record.levelname = f"{self.COLORS[levelname]}{levelname}{self.COLORS['RESET']}"
        try:
            return super().format(record)
        finally:
            record.levelname = levelname


# 专用日志器名称
SPECIALIZED_LOGGERS = ("solver", "audit", "experiments", "calibration", "cli")


def setup_logging(level: str | None = None, log_to_file: bool | None = None) -> None:
    """设置日志配置

    Args:
        level: 日志级别, None 时使用 settings.LOG_LEVEL (settings.DEBUG 为真时取 DEBUG)
        log_to_file: 是否写入日志文件, None 时使用 settings.LOG_TO_FILE
    """
    level_name = (level or ("DEBUG" if settings.DEBUG else settings.LOG_LEVEL)).upper()
    to_file = settings.LOG_TO_FILE if log_to_file is None else log_to_file

    # 根日志配置
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level_name, logging.INFO))

    # 清除现有处理器
    root_logger.handlers.clear()

    # 控制台处理器 (彩色输出, 走 stderr 以免污染 CSV 管道)
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, level_name, logging.INFO))
    console_formatter = ColoredFormatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    console_handler.setFormatter(console_formatter)
    root_logger.addHandler(console_handler)

    if to_file:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(exist_ok=True)

        file_formatter = logging.Formatter(
            fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s:%(lineno)d | %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )

        # 文件处理器 (应用日志)
        file_handler = logging.FileHandler(log_dir / "frbd.log", mode="a", encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)

        # 错误日志处理器
        error_handler = logging.FileHandler(log_dir / "error.log", mode="a", encoding="utf-8")
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(file_formatter)
        root_logger.addHandler(error_handler)

    # 专用日志器沿用根级别
    for name in SPECIALIZED_LOGGERS:
        logging.getLogger(name).setLevel(logging.NOTSET)


# 预定义的日志器
solver_logger = logging.getLogger("solver")
audit_logger = logging.getLogger("audit")
experiments_logger = logging.getLogger("experiments")
calibration_logger = logging.getLogger("calibration")
cli_logger = logging.getLogger("cli")
