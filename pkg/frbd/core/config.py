"""
应用配置设置

进程级配置 (日志、输出目录、默认步长、随机种子、并行度)，支持环境变量和 .env 文件。
单次运行的配置 (模型/求解器/实验参数) 见 frbd.cli.schemas。
"""

from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """应用配置类"""

    # 基本设置
    PROJECT_NAME: str = "frbd"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "FrBD 粘弹性摩擦模型仿真、无源性审计与机械臂跟踪控制"

    # 环境设置
    DEBUG: bool = Field(default=False)

    # 日志设置
    LOG_LEVEL: str = Field(default="INFO")
    LOG_DIR: str = Field(default="logs")
    LOG_TO_FILE: bool = Field(default=False)

    # 输出设置
    OUTPUT_DIR: str = Field(default="outputs")

    # 数值设置
    DEFAULT_DT: float = Field(default=1e-5, gt=0.0)
    DEFAULT_SEED: int = Field(default=42)

    # 性能设置 (频率扫描 / 雅可比列的进程数, 1 表示顺序执行)
    MAX_WORKERS: int = Field(default=1, ge=1)

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        return str(v).upper()

    model_config = SettingsConfigDict(
        env_prefix="FRBD_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


# 创建全局设置实例
settings = Settings()


def get_output_path(out_dir: str | None = None) -> Path:
    """获取输出目录路径 (不存在时创建)"""
    path = Path(out_dir) if out_dir else Path(settings.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path
