"""
命令实现

每个命令读取已校验的 RunConfig, 运行对应服务, 写出固定列的 CSV 与审计报告。
退出码: 0 成功, 1 配置错误, 2 数值失败, 3 审计未通过。
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from frbd.cli.output import emit_csv, emit_report, write_metadata
from frbd.cli.schemas import RunConfig
from frbd.core.config import get_output_path, settings
from frbd.core.exceptions import AuditFailure, FrBDError, MissingChannelError
from frbd.core.logging import cli_logger
from frbd.models.friction import eval_mu
from frbd.models.viscoelastic import FrBDModel, rhs, steady_state
from frbd.services.arm_control import audit_tracking, run_tracking
from frbd.services.calibration import FitProblem, fit, fitted_model, load_trace, noisy_trace, simulate_trace
from frbd.services.experiments import (
    LagConfig,
    PreSlidingConfig,
    cycle_drift,
    lag_orientation_sweep,
    run_frictional_lag,
    run_presliding,
)
from frbd.services.integrator import (
    Trajectory,
    boundedness_audit,
    dissipation_identity_audit,
    passivity_check,
    simulate_model,
)


DISSIPATION_TOL = 1e-6
TRAJECTORY_COLUMNS = ("t", "v", "f", "pf", "V", "W_in")


class AuditReport(BaseModel):
    """审计报告; 未运行的检查保持 None"""

    model_config = ConfigDict(extra="forbid")

    passivity_margin: Optional[float] = None
    passivity_tolerance: Optional[float] = None
    passivity_pass: Optional[bool] = None
    boundedness_sup_V: Optional[float] = None
    boundedness_ratio: Optional[float] = None
    boundedness_pass: Optional[bool] = None
    dissipation_max_relerr: Optional[float] = None
    dissipation_pass: Optional[bool] = None
    tracking_pass: Optional[bool] = None
    details: Dict[str, object] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        flags = (self.passivity_pass, self.boundedness_pass, self.dissipation_pass, self.tracking_pass)
        return all(flag is not False for flag in flags)

    def as_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {"passed": self.passed}
        for name, value in self.model_dump(exclude={"details"}).items():
            if value is not None:
                out[name] = value
        out.update(self.details)
        return out


class CommandResult(BaseModel):
    """命令执行结果摘要, 供入口打印"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    command: str
    out_dir: Path
    files: List[Path] = Field(default_factory=list)
    audit: Optional[AuditReport] = None
    summary: Dict[str, object] = Field(default_factory=dict)


def state_columns(m: FrBDModel) -> List[str]:
    return ["z"] + [f"b{i}" for i in range(1, m.n + 1)]


# ==================== 各命令 ====================


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> CommandResult:
    m = cfg.friction_model()
    u = cfg.input.build()
    x0 = None
    if cfg.simulate.initial == "steady_state":
        v0 = cfg.simulate.v0 if cfg.simulate.v0 is not None else u(cfg.solver.t0)
        x0 = steady_state(m, v0)[1]
    elif cfg.simulate.initial == "given":
        x0 = np.asarray(cfg.simulate.x0, dtype=float)
    traj = simulate_model(m, u, cfg.solver, x0)

    columns = list(cfg.output.channels) or ["t", "v", *state_columns(m), "f", "pf", "V", "W_in"]
    files = [emit_csv(traj.to_frame(columns), out_dir / "trajectory.csv")]

    margin, tol, ok = passivity_check(traj)
    v_bound = cfg.simulate.v_bound or float(np.max(np.abs(traj.channel("v"))))
    bounded = boundedness_audit(traj, v_bound)
    relerr = dissipation_identity_audit(m, traj)
    report = AuditReport(
        passivity_margin=margin,
        passivity_tolerance=tol,
        passivity_pass=ok,
        boundedness_sup_V=bounded.sup_V,
        boundedness_ratio=bounded.ratio,
        boundedness_pass=bounded.bounded,
        dissipation_max_relerr=relerr,
        dissipation_pass=relerr <= DISSIPATION_TOL,
        details={"samples": len(traj), "max_step": traj.max_step, "final_pf": float(traj.channel("pf")[-1])},
    )
    files.append(emit_report(report.as_dict(), out_dir / "audit_report.cfg"))
    return CommandResult(command="simulate", out_dir=out_dir, files=files, audit=report,
                         summary={"samples": len(traj), "passivity_margin": margin})


def cmd_presliding(cfg: RunConfig, out_dir: Path) -> CommandResult:
    sec = cfg.presliding
    exp = PreSlidingConfig(
        model=cfg.friction_model(), solver=cfg.solver, mass=sec.mass,
        force_ratio=sec.force_ratio, freqs=sec.freqs, cycles=sec.cycles,
    )
    results = run_presliding(exp)
    files: List[Path] = []
    details: Dict[str, object] = {}
    margins, tols, passes = [], [], []
    for freq, traj in results.items():
        name = f"presliding_{freq:g}Hz"
        files.append(emit_csv(traj.to_frame(("t", "x", "v", "f", "pf", "V", "W_in")), out_dir / f"{name}.csv"))
        margin, tol, ok = passivity_check(traj)
        margins.append(margin)
        tols.append(tol)
        passes.append(ok)
        drift, span = cycle_drift(traj, freq)
        details[f"{name}.max_abs_x"] = float(np.max(np.abs(traj.channel("x"))))
        ratio = drift / span if span > 0.0 else 0.0
        details[f"{name}.drift_ratio"] = ratio
        details[f"{name}.loop_closed"] = ratio <= sec.drift_tol
    report = AuditReport(
        passivity_margin=min(margins), passivity_tolerance=max(tols), passivity_pass=all(passes),
        details=details,
    )
    files.append(emit_report(report.as_dict(), out_dir / "audit_report.cfg"))
    return CommandResult(command="presliding", out_dir=out_dir, files=files, audit=report,
                         summary={"freqs": list(results)})


def cmd_lag(cfg: RunConfig, out_dir: Path) -> CommandResult:
    sec = cfg.lag
    exp = LagConfig(
        model=cfg.friction_model(), solver=cfg.solver, v_bias=sec.v_bias,
        v_amp=sec.v_amp, freqs=sec.freqs, cycles=sec.cycles,
    )
    results = run_frictional_lag(exp)
    files: List[Path] = []
    rows = []
    margins, tols, passes = [], [], []
    for freq, res in results.items():
        files.append(emit_csv(res.trajectory.to_frame(TRAJECTORY_COLUMNS), out_dir / f"lag_{freq:g}Hz.csv"))
        margin, tol, ok = passivity_check(res.trajectory)
        margins.append(margin)
        tols.append(tol)
        passes.append(ok)
        rows.append({
            "freq": freq,
            "area": abs(res.metrics.area),
            "peak_force": res.metrics.peak_force,
            "width_at_mid": res.metrics.width_at_mid,
        })
    files.append(emit_csv(pd.DataFrame(rows, columns=["freq", "area", "peak_force", "width_at_mid"]),
                          out_dir / "lag_metrics.csv"))
    if sec.v_s_sweep:
        points = lag_orientation_sweep(exp, sec.v_s_sweep, sec.sweep_freq)
        sweep = pd.DataFrame(
            [{"v_s": pt.v_s, "area": pt.area, "peak_force": pt.peak_force, "orientation": pt.orientation}
             for pt in points],
            columns=["v_s", "area", "peak_force", "orientation"],
        )
        files.append(emit_csv(sweep, out_dir / "lag_vs_sweep.csv"))
    report = AuditReport(passivity_margin=min(margins), passivity_tolerance=max(tols), passivity_pass=all(passes))
    files.append(emit_report(report.as_dict(), out_dir / "audit_report.cfg"))
    return CommandResult(command="lag", out_dir=out_dir, files=files, audit=report,
                         summary={row["freq"]: row["area"] for row in rows})


def cmd_arm(cfg: RunConfig, out_dir: Path) -> CommandResult:
    sec = cfg.arm
    plant = sec.build_plant(cfg.friction_model())
    traj = run_tracking(
        plant, sec.build_reference(), sec.build_gains(), cfg.solver, sec.horizon,
        ic=sec.build_initial(), track_error_system=sec.track_error_system,
    )
    columns = list(cfg.output.channels) or [
        "t", "q", "q_ref", "q_tilde", "s", "F", "F_hat", "F_tilde", "int_s2", "V_obs", "int_F_tilde_s",
    ]
    files = [emit_csv(traj.to_frame(columns), out_dir / "arm.csv")]
    audit = audit_tracking(traj, error_bound=sec.error_bound)
    report = AuditReport(
        tracking_pass=audit.passed,
        details={
            "final_window_max_error": audit.final_window_max_error,
            "int_s2_total": audit.int_s2_total,
            "int_s2_trailing_fraction": audit.int_s2_trailing_fraction,
            "observer_passivity_margin": audit.observer_passivity_margin,
        },
    )
    files.append(emit_report(report.as_dict(), out_dir / "audit_report.cfg"))
    return CommandResult(command="arm", out_dir=out_dir, files=files, audit=report,
                         summary={"final_window_max_error": audit.final_window_max_error})


def cmd_calibrate(cfg: RunConfig, out_dir: Path, seed: int) -> CommandResult:
    sec = cfg.calibrate
    t, v, pf = load_trace(sec.data)
    if sec.noise > 0.0:
        pf = noisy_trace(pf, sec.noise, seed)
    problem = FitProblem(
        t=t, v=v, pf=pf, model=cfg.friction_model(), free_params=sec.free,
        bounds=dict(sec.bounds), solver=cfg.solver, x0_policy=sec.x0_policy,
    )
    result = fit(problem, initial=dict(sec.initial))
    if np.isfinite(result.rmse):
        pf_fit = simulate_trace(fitted_model(problem, result), t, v, cfg.solver, sec.x0_policy)
    else:
        pf_fit = np.full_like(pf, np.nan)

    report: Dict[str, object] = {
        "rmse": result.rmse,
        "iterations": result.iterations,
        "converged": result.converged,
        "reason": result.reason,
        "ill_conditioned": result.ill_conditioned,
    }
    report.update({f"param.{k}": val for k, val in result.params.items()})
    report.update({f"covariance.{k}": val for k, val in result.covariance_proxy.items()})
    files = [
        emit_report(report, out_dir / "fit_report.cfg"),
        emit_csv(pd.DataFrame({"t": t, "v": v, "pf_data": pf, "pf_fit": pf_fit}), out_dir / "fit_trace.csv"),
    ]
    return CommandResult(command="calibrate", out_dir=out_dir, files=files,
                         summary={"rmse": result.rmse, "converged": result.converged, **result.params})


def cmd_steady_sweep(cfg: RunConfig, out_dir: Path) -> CommandResult:
    m = cfg.friction_model()
    cols = state_columns(m)
    rows = []
    worst = 0.0
    for v in cfg.sweep.velocities():
        f, x = steady_state(m, float(v))
        worst = max(worst, float(np.max(np.abs(rhs(m, x, float(v))))))
        row = {"v": float(v), "mu": float(eval_mu(m.law, float(v))), "f": f, "pf": m.p * f}
        row.update(dict(zip(cols, (float(xi) for xi in x))))
        rows.append(row)
    files = [emit_csv(pd.DataFrame(rows, columns=["v", "mu", "f", "pf", *cols]), out_dir / "steady_sweep.csv")]
    report = AuditReport(details={"points": len(rows), "fixed_point_max_residual": worst})
    files.append(emit_report(report.as_dict(), out_dir / "audit_report.cfg"))
    return CommandResult(command="steady-sweep", out_dir=out_dir, files=files, audit=report,
                         summary={"points": len(rows), "fixed_point_max_residual": worst})


def load_trajectory(path: Path, m: Optional[FrBDModel] = None) -> Trajectory:
    """读取轨迹 CSV; 缺 P_in 时由 pf·v 补出, 有模型时取 z, b1..bn 为状态"""
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("t", "v", "pf", "V", "W_in") if c not in df.columns]
    if missing:
        raise MissingChannelError(f"{path} 缺少列: {missing}")
    t = df["t"].to_numpy(dtype=float)
    cols = state_columns(m) if m is not None else ["z"]
    if all(c in df.columns for c in cols):
        states = df[cols].to_numpy(dtype=float)
    else:
        states = np.zeros((len(t), 0))
    channels = {c: df[c].to_numpy(dtype=float) for c in df.columns if c != "t"}
    if "P_in" not in channels:
        channels["P_in"] = channels["pf"] * channels["v"]
    return Trajectory(t=t, states=states, channels=channels)


def cmd_audit(cfg: RunConfig, out_dir: Path) -> CommandResult:
    sec = cfg.audit
    m = cfg.model.build() if cfg.model is not None else None
    traj = load_trajectory(sec.trajectory, m)
    margin, tol, ok = passivity_check(traj, sec.c)
    v_bound = sec.v_bound or float(np.max(np.abs(traj.channel("v"))))
    bounded = boundedness_audit(traj, v_bound, sec.rtol)
    report = AuditReport(
        passivity_margin=margin,
        passivity_tolerance=tol,
        passivity_pass=ok,
        boundedness_sup_V=bounded.sup_V,
        boundedness_ratio=bounded.ratio,
        boundedness_pass=bounded.bounded and bounded.input_within_bound,
        details={"samples": len(traj), "trajectory": str(sec.trajectory)},
    )
    if m is not None and traj.states.shape[1] == m.dim:
        relerr = dissipation_identity_audit(m, traj)
        report.dissipation_max_relerr = relerr
        report.dissipation_pass = relerr <= sec.dissipation_tol
    files = [emit_report(report.as_dict(), out_dir / "audit_report.cfg")]
    return CommandResult(command="audit", out_dir=out_dir, files=files, audit=report,
                         summary={"passivity_margin": margin, "passed": report.passed})


# ==================== 分发 ====================


def run(cfg: RunConfig, out_dir: Optional[str] = None, seed: Optional[int] = None,
        config_sha256: Optional[str] = None, config_path: Optional[str] = None) -> CommandResult:
    """执行命令并写出 metadata.cfg; 审计未通过时在写完全部文件后抛 AuditFailure"""
    out = get_output_path(out_dir or cfg.output.dir)
    run_seed = seed if seed is not None else (cfg.run.seed if cfg.run.seed is not None else settings.DEFAULT_SEED)
    np.random.seed(run_seed)
    cli_logger.info("执行命令 %s, 输出目录 %s, 种子 %d", cfg.command, out, run_seed)

    handlers: Dict[str, Callable[[], CommandResult]] = {
        "simulate": lambda: cmd_simulate(cfg, out),
        "presliding": lambda: cmd_presliding(cfg, out),
        "lag": lambda: cmd_lag(cfg, out),
        "arm": lambda: cmd_arm(cfg, out),
        "calibrate": lambda: cmd_calibrate(cfg, out, run_seed),
        "steady-sweep": lambda: cmd_steady_sweep(cfg, out),
        "audit": lambda: cmd_audit(cfg, out),
    }
    result = handlers[cfg.command]()
    result.files.append(write_metadata(
        out, cfg.command, run_seed, cfg.solver.model_dump(), config_sha256, config_path,
    ))
    if result.audit is not None and not result.audit.passed:
        raise AuditFailure(f"{cfg.command} 审计未通过, 详见 {out / 'audit_report.cfg'}")
    return result


def exit_code_for(exc: BaseException) -> int:
    """异常类型到退出码的映射"""
    if isinstance(exc, FrBDError):
        return exc.exit_code
    if isinstance(exc, (FloatingPointError, OverflowError, ZeroDivisionError)):
        return 2
    return 1
