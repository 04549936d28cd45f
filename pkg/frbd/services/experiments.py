"""
迟滞实验

预滑移位移迟滞 (单位质量块 + 正弦外力) 与摩擦滞后 (单向速度激励),
以及迟滞回线的面积 / 峰值 / 中点宽度指标。
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from frbd.core.config import settings
from frbd.core.logging import experiments_logger
from frbd.models.friction import ConstantLaw, StribeckLaw
from frbd.models.viscoelastic import FrBDModel, compile_force, compile_rhs
from frbd.services.integrator import (
    SinusoidSignal,
    SolverConfig,
    Trajectory,
    add_model_channels,
    integrate,
    simulate_model,
)


T = TypeVar("T")
R = TypeVar("R")


class PreSlidingConfig(BaseModel):
    """预滑移实验配置"""

    model_config = ConfigDict(frozen=True)

    model: FrBDModel
    solver: SolverConfig = Field(default_factory=SolverConfig)
    mass: float = Field(default=1.0, gt=0.0)
    force_ratio: float = Field(default=0.9, gt=0.0, lt=1.0)
    freqs: Tuple[float, ...] = (1.0, 5.0, 10.0)
    cycles: int = Field(default=5, ge=4)

    @field_validator("freqs")
    @classmethod
    def check_freqs(cls, freqs: Tuple[float, ...]) -> Tuple[float, ...]:
        if not freqs or any(f <= 0.0 for f in freqs):
            raise ValueError("freqs 必须非空且全部为正")
        return freqs


class LagConfig(BaseModel):
    """摩擦滞后实验配置"""

    model_config = ConfigDict(frozen=True)

    model: FrBDModel
    solver: SolverConfig = Field(default_factory=SolverConfig)
    v_bias: float = 0.02
    v_amp: float = Field(default=2e-4, ge=0.0)
    freqs: Tuple[float, ...] = (25.0, 50.0, 100.0)
    cycles: int = Field(default=5, ge=4)

    @field_validator("freqs")
    @classmethod
    def check_freqs(cls, freqs: Tuple[float, ...]) -> Tuple[float, ...]:
        if not freqs or any(f <= 0.0 for f in freqs):
            raise ValueError("freqs 必须非空且全部为正")
        return freqs

    @model_validator(mode="after")
    def check_unidirectional(self) -> "LagConfig":
        if not self.v_bias > self.v_amp:
            raise ValueError("需要 v_bias > v_amp 以保证单向运动")
        return self


@dataclass(frozen=True)
class LoopMetrics:
    """迟滞回线指标"""

    area: float
    peak_force: float
    width_at_mid: float


@dataclass
class LagResult:
    """单一频率的滞后实验结果"""

    freq: float
    trajectory: Trajectory
    metrics: LoopMetrics


def breakaway_force(m: FrBDModel) -> float:
    """脱离力 p·μ_s (常数律时为 p·μ)"""
    if isinstance(m.law, ConstantLaw):
        return m.p * m.law.mu_value
    return m.p * m.law.mu_max


def loop_area(loop: Sequence[Tuple[float, float]] | np.ndarray) -> float:
    """鞋带公式计算闭合回线的有向面积 (逆时针为正)"""
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("回线至少需要 3 个点")
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def width_at_mid(x: np.ndarray, y: np.ndarray) -> float:
    """回线在横坐标中点处的纵向厚度"""
    x_mid = 0.5 * (float(np.min(x)) + float(np.max(x)))
    xs = np.append(x, x[0])
    ys = np.append(y, y[0])
    crossings: List[float] = []
    for i in range(len(xs) - 1):
        a, b = xs[i] - x_mid, xs[i + 1] - x_mid
        if a == 0.0:
            crossings.append(float(ys[i]))
        elif a * b < 0.0:
            w = a / (a - b)
            crossings.append(float(ys[i] + w * (ys[i + 1] - ys[i])))
    if len(crossings) < 2:
        return 0.0
    return max(crossings) - min(crossings)


def final_cycle(traj: Trajectory, freq: float) -> Trajectory:
    """截取最后一个完整周期"""
    return traj.window(float(traj.t[-1]) - 1.0 / freq)


def loop_metrics(x: np.ndarray, y: np.ndarray) -> LoopMetrics:
    if np.ptp(x) == 0.0:
        return LoopMetrics(area=0.0, peak_force=float(np.max(y)), width_at_mid=0.0)
    return LoopMetrics(
        area=loop_area(np.column_stack([x, y])),
        peak_force=float(np.max(y)),
        width_at_mid=width_at_mid(x, y),
    )


def cycle_drift(traj: Trajectory, freq: float, channel: str = "x") -> Tuple[float, float]:
    """最后两个周期之间的净漂移与最后一周期的回线宽度"""
    t_end = float(traj.t[-1])
    period = 1.0 / freq
    x = traj.channel(channel)
    x_prev = float(np.interp(t_end - period, traj.t, x))
    drift = abs(float(x[-1]) - x_prev)
    span = np.ptp(final_cycle(traj, freq).channel(channel))
    return drift, float(span)


def map_frequencies(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> List[R]:
    """按频率分发任务, workers > 1 时使用进程池"""
    n = settings.MAX_WORKERS if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


# ==================== 预滑移 ====================


def _presliding_one(args: Tuple[PreSlidingConfig, float]) -> Trajectory:
    cfg, freq = args
    m = cfg.model
    amplitude = cfg.force_ratio * breakaway_force(m)
    omega = 2.0 * math.pi * freq
    fric_rhs = compile_rhs(m)
    force = compile_force(m)
    p, mass = m.p, cfg.mass

    # 状态: [x, ẋ, z, b₁ … bₙ]
    def closed_rhs(t: float, y: np.ndarray, u_t: float) -> np.ndarray:
        v = y[1]
        fx = y[2:]
        out = np.empty_like(y)
        out[0] = v
        out[1] = (u_t - p * force(fx)) / mass
        out[2:] = fric_rhs(fx, v)
        return out

    solver = cfg.solver.with_span(0.0, cfg.cycles / freq)

    def u(t: float) -> float:
        return amplitude * math.sin(omega * t)

    traj = integrate(closed_rhs, np.zeros(2 + m.dim), u, solver)

    x = traj.states[:, 0]
    v = traj.states[:, 1]
    fric = Trajectory(t=traj.t, states=traj.states[:, 2:], meta=dict(traj.meta))
    add_model_channels(m, fric, v)
    fric.channels["x"] = x
    fric.channels["U"] = np.array([u(t) for t in traj.t])
    experiments_logger.info("预滑移 %.3g Hz: max|x|=%.3e m, max|ẋ|=%.3e m/s", freq, np.max(np.abs(x)), np.max(np.abs(v)))
    return fric


def run_presliding(cfg: PreSlidingConfig, workers: int | None = None) -> Dict[float, Trajectory]:
    """预滑移位移实验: m·ẍ = U(t) − p·f, 零初值, 每个频率一条轨迹

    轨迹通道: x, v, f, pf, V, P_in, W_in, U。
    """
    experiments_logger.info("预滑移实验: 频率 %s, 外力幅值 %.4g N", list(cfg.freqs), cfg.force_ratio * breakaway_force(cfg.model))
    results = map_frequencies(_presliding_one, [(cfg, f) for f in cfg.freqs], workers)
    return dict(zip(cfg.freqs, results))


# ==================== 摩擦滞后 ====================


def _lag_one(args: Tuple[LagConfig, float]) -> LagResult:
    cfg, freq = args
    u = SinusoidSignal(bias=cfg.v_bias, amplitude=cfg.v_amp, freq=freq)
    traj = simulate_model(cfg.model, u, cfg.solver.with_span(0.0, cfg.cycles / freq))
    last = final_cycle(traj, freq)
    metrics = loop_metrics(last.channel("v"), last.channel("pf"))
    experiments_logger.info(
        "摩擦滞后 %.3g Hz: 面积=%.4e, 峰值=%.5f N, 中点宽度=%.4e N",
        freq, abs(metrics.area), metrics.peak_force, metrics.width_at_mid,
    )
    return LagResult(freq=freq, trajectory=traj, metrics=metrics)


def run_frictional_lag(cfg: LagConfig, workers: int | None = None) -> Dict[float, LagResult]:
    """摩擦滞后实验: v(t) = v_bias + v_amp·sin(2πωt) 直接作为模型输入, 零初值"""
    experiments_logger.info("摩擦滞后实验: 频率 %s, v_bias=%g, v_amp=%g", list(cfg.freqs), cfg.v_bias, cfg.v_amp)
    results = map_frequencies(_lag_one, [(cfg, f) for f in cfg.freqs], workers)
    return dict(zip(cfg.freqs, results))


# ==================== 回线方向 ====================


@dataclass
class OrientationPoint:
    """单个 v_S 下末周期 (v, pf) 回线的有向面积"""

    v_s: float
    area: float
    peak_force: float

    @property
    def orientation(self) -> str:
        # 面积按逆时针为正; 常规摩擦滞后回线为顺时针
        if self.area < 0.0:
            return "conventional"
        return "inverted" if self.area > 0.0 else "degenerate"


def _orientation_one(args: Tuple[LagConfig, float, float]) -> OrientationPoint:
    cfg, freq, v_s = args
    model = cfg.model.model_copy(update={"law": cfg.model.law.model_copy(update={"v_s": v_s})})
    result = _lag_one((cfg.model_copy(update={"model": model}), freq))
    return OrientationPoint(v_s=v_s, area=result.metrics.area, peak_force=result.metrics.peak_force)


def lag_orientation_sweep(
    cfg: LagConfig,
    v_s_values: Sequence[float],
    freq: float | None = None,
    workers: int | None = None,
) -> List[OrientationPoint]:
    """扫描 Stribeck 速度 v_S, 在单一频率下记录滞后回线的有向面积

    小幅振荡下回线方向由稳态力曲线 h(v) = v·μ(v)/|v|_ε 在 v_bias 处的斜率决定:
    斜率为负时回线顺时针 (常规), 为正时逆时针。ε = 0 时 h = μ, 下降段上总是常规回线;
    ε > 0 且 v_S 远大于 v_bias 时 μ 近乎平坦, 正则化项主导, 回线反向。

    Raises:
        ValueError: 摩擦律不是 Stribeck 律, 或 v_S 非正
    """
    if not isinstance(cfg.model.law, StribeckLaw):
        raise ValueError("v_S 扫描需要 Stribeck 摩擦律")
    if not v_s_values or any(v <= 0.0 for v in v_s_values):
        raise ValueError("v_S 取值必须非空且全部为正")
    f = cfg.freqs[0] if freq is None else freq
    experiments_logger.info("回线方向扫描: %.3g Hz, v_S = %s", f, list(v_s_values))
    points = map_frequencies(_orientation_one, [(cfg, f, float(v)) for v in v_s_values], workers)
    for pt in points:
        experiments_logger.info("  v_S=%.4g: 有向面积=%.4e (%s)", pt.v_s, pt.area, pt.orientation)
    return points
