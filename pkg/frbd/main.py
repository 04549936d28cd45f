"""
FrBD 命令行入口

用法: frbd <command> --config PATH [--out DIR] [--seed N]
退出码: 0 成功, 1 配置错误, 2 数值失败, 3 审计未通过
"""

import sys
from typing import Optional

import click
from rich.console import Console
from rich.table import Table

from frbd.cli.commands import CommandResult, exit_code_for, run
from frbd.cli.config_parser import config_hash, parse_config
from frbd.cli.schemas import COMMANDS
from frbd.core.config import settings
from frbd.core.exceptions import ConfigValidationError, FrBDError
from frbd.core.logging import cli_logger, setup_logging

console = Console(stderr=True)


def print_summary(result: CommandResult) -> None:
    """用 rich 表格打印运行摘要"""
    table = Table(title=f"frbd {result.command}", show_header=True, header_style="bold cyan")
    table.add_column("项目")
    table.add_column("值", overflow="fold")
    for key, value in result.summary.items():
        table.add_row(str(key), f"{value:.6g}" if isinstance(value, float) else str(value))
    if result.audit is not None:
        table.add_row("审计", "✅ 通过" if result.audit.passed else "❌ 未通过")
    table.add_row("输出目录", str(result.out_dir))
    table.add_row("文件数", str(len(result.files)))
    console.print(table)


def execute(command: str, config: str, out: Optional[str], seed: Optional[int]) -> int:
    """解析配置并执行, 返回退出码"""
    try:
        cfg = parse_config(config, command)
    except ConfigValidationError as exc:
        console.print("[bold red]❌ 配置校验失败[/bold red]")
        for key, msg in exc.errors:
            console.print(f"   - {key}: {msg}")
        return exc.exit_code

    try:
        result = run(cfg, out_dir=out, seed=seed, config_sha256=config_hash(config), config_path=str(config))
    except FrBDError as exc:
        code = exit_code_for(exc)
        cli_logger.error("命令 %s 失败 (退出码 %d): %s", command, code, exc)
        console.print(f"[bold red]❌ {exc}[/bold red]")
        return code
    except (FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        cli_logger.exception("命令 %s 数值异常", command)
        console.print(f"[bold red]❌ 数值异常: {exc}[/bold red]")
        return exit_code_for(exc)

    print_summary(result)
    return 0


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("command", type=click.Choice(COMMANDS))
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="运行配置文件")
@click.option("--out", "out", default=None, type=click.Path(file_okay=False), help="输出目录")
@click.option("--seed", "seed", default=None, type=int, help="随机种子")
@click.option("--log-level", default=None, help="日志级别, 默认取 FRBD_LOG_LEVEL")
@click.version_option(settings.VERSION, prog_name=settings.PROJECT_NAME)
def cli(command: str, config: str, out: Optional[str], seed: Optional[int], log_level: Optional[str]) -> None:
    """FrBD 粘弹性摩擦模型: 仿真、迟滞实验、跟踪控制、参数辨识与审计"""
    setup_logging(level=log_level)
    sys.exit(execute(command, config, out, seed))


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
