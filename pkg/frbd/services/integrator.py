"""
常微分方程积分服务

定步长 RK4 与自适应 Runge-Kutta-Fehlberg 4(5) 积分器、输入信号、
轨迹记录, 以及基于轨迹的无源性 / 有界性审计。
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Annotated, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from frbd.core.config import settings
from frbd.core.exceptions import MissingChannelError, NumericalFailure
from frbd.core.logging import audit_logger, solver_logger
from frbd.models.viscoelastic import (
    FrBDModel,
    as_vector,
    compile_rhs,
    dissipation_rate,
    force_series,
    rhs as state_rhs,
    storage_gradient,
    storage_series,
)

RhsFn = Callable[[float, np.ndarray, float], np.ndarray]
ObserverFn = Callable[[float, np.ndarray, float], float]

# 自适应步长控制常数
SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0


class SolverConfig(BaseModel):
    """求解器配置"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["rk4", "rk45"] = "rk4"
    dt: float = Field(default_factory=lambda: settings.DEFAULT_DT, gt=0.0)
    rtol: float = Field(default=1e-6, gt=0.0)
    atol: float = Field(default=1e-9, gt=0.0)
    dt_min: float = Field(default=1e-12, gt=0.0)
    dt_max: float = Field(default=1e-2, gt=0.0)
    t0: float = 0.0
    t1: float = 1.0
    max_steps: int = Field(default=20_000_000, gt=0)

    @model_validator(mode="after")
    def check_span(self) -> "SolverConfig":
        if not self.t1 > self.t0:
            raise ValueError(f"需要 t1 > t0, 实际 t0={self.t0}, t1={self.t1}")
        if self.dt_min > self.dt_max:
            raise ValueError("需要 dt_min ≤ dt_max")
        return self

    def with_span(self, t0: float, t1: float) -> "SolverConfig":
        return self.model_copy(update={"t0": t0, "t1": t1})


# ==================== 输入信号 ====================


class ConstantSignal(BaseModel):
    """常值输入"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant"] = "constant"
    value: float = 0.0

    def __call__(self, t: float) -> float:
        return self.value


class SinusoidSignal(BaseModel):
    """正弦输入 bias + amplitude·sin(2π·freq·t + phase)"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sinusoid"] = "sinusoid"
    bias: float = 0.0
    amplitude: float = 0.0
    freq: float = Field(default=1.0, ge=0.0)
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        return self.bias + self.amplitude * math.sin(2.0 * math.pi * self.freq * t + self.phase)


class SampledSignal(BaseModel):
    """采样输入, 线性插值, 两端截断"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sampled"] = "sampled"
    times: Tuple[float, ...]
    values: Tuple[float, ...]

    @model_validator(mode="after")
    def check_samples(self) -> "SampledSignal":
        if len(self.times) != len(self.values) or len(self.times) < 1:
            raise ValueError("times 与 values 长度必须相同且非空")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("采样时间必须严格递增")
        return self

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))


class CompositeSignal(BaseModel):
    """多个信号之和"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["composite"] = "composite"
    parts: Tuple["InputSignal", ...]

    @field_validator("parts")
    @classmethod
    def check_parts(cls, parts: Tuple["InputSignal", ...]) -> Tuple["InputSignal", ...]:
        if not parts:
            raise ValueError("组合信号至少需要一个分量")
        return parts

    def __call__(self, t: float) -> float:
        return sum(part(t) for part in self.parts)


InputSignal = Annotated[
    Union[ConstantSignal, SinusoidSignal, SampledSignal, CompositeSignal],
    Field(discriminator="kind"),
]
CompositeSignal.model_rebuild()


# ==================== 轨迹 ====================


@dataclass
class Trajectory:
    """积分轨迹: 时间、状态与标量通道"""

    t: np.ndarray
    states: np.ndarray
    channels: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise MissingChannelError(f"轨迹缺少通道 '{name}', 可用通道: {sorted(self.channels)}")
        return self.channels[name]

    @property
    def f(self) -> np.ndarray:
        return self.channel("f")

    @property
    def V(self) -> np.ndarray:
        return self.channel("V")

    @property
    def W_in(self) -> np.ndarray:
        return self.channel("W_in")

    @property
    def max_step(self) -> float:
        return float(np.max(np.diff(self.t))) if len(self) > 1 else 0.0

    def to_frame(self, columns: Sequence[str]) -> pd.DataFrame:
        """按列名组装 DataFrame ("t" 与状态列名 z, b1..bn 也可用)"""
        data: Dict[str, np.ndarray] = {}
        for name in columns:
            if name == "t":
                data[name] = self.t
            elif name == "z":
                data[name] = self.states[:, 0]
            elif name.startswith("b") and name[1:].isdigit() and name not in self.channels:
                idx = int(name[1:])
                if idx < 1 or idx >= self.states.shape[1]:
                    raise MissingChannelError(f"状态列 '{name}' 超出维度 {self.states.shape[1]}")
                data[name] = self.states[:, idx]
            else:
                data[name] = self.channel(name)
        return pd.DataFrame(data, columns=list(columns))

    def resample(self, t_new: np.ndarray) -> "Trajectory":
        """在已接受步之间线性插值"""
        t_new = np.asarray(t_new, dtype=float)
        states = np.column_stack([np.interp(t_new, self.t, col) for col in self.states.T])
        channels = {k: np.interp(t_new, self.t, v) for k, v in self.channels.items()}
        return Trajectory(t=t_new, states=states, channels=channels, meta=dict(self.meta))

    def window(self, t_start: float) -> "Trajectory":
        """截取 t ≥ t_start 的部分"""
        mask = self.t >= t_start - 1e-12 * max(1.0, abs(t_start))
        return Trajectory(
            t=self.t[mask],
            states=self.states[mask],
            channels={k: v[mask] for k, v in self.channels.items()},
            meta=dict(self.meta),
        )


def cumulative_trapezoid(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """累积梯形积分, 首项为 0"""
    out = np.zeros_like(t, dtype=float)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


# ==================== 积分器 ====================


def _check_finite(t: float, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"t={t:.6g} 处状态出现非有限值: {x}")


def _rk4_step(rhs: RhsFn, u: Callable[[float], float], t: float, x: np.ndarray, h: float) -> np.ndarray:
    th = t + 0.5 * h
    uh = u(th)
    k1 = rhs(t, x, u(t))
    k2 = rhs(th, x + 0.5 * h * k1, uh)
    k3 = rhs(th, x + 0.5 * h * k2, uh)
    k4 = rhs(t + h, x + h * k3, u(t + h))
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_rk4(rhs: RhsFn, x0: np.ndarray, u: Callable[[float], float], cfg: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    span = cfg.t1 - cfg.t0
    n_steps = max(1, int(math.ceil(span / cfg.dt - 1e-9)))
    if n_steps > cfg.max_steps:
        raise NumericalFailure(f"步数 {n_steps} 超过上限 {cfg.max_steps}")
    h = span / n_steps
    ts = cfg.t0 + h * np.arange(n_steps + 1)
    ts[-1] = cfg.t1
    xs = np.empty((n_steps + 1, x0.shape[0]))
    xs[0] = x0
    x = x0
    for i in range(n_steps):
        x = _rk4_step(rhs, u, ts[i], x, ts[i + 1] - ts[i])
        _check_finite(ts[i + 1], x)
        xs[i + 1] = x
    return ts, xs


# Runge-Kutta-Fehlberg 系数
_C = (0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0)
_A = (
    (),
    (1.0 / 4.0,),
    (3.0 / 32.0, 9.0 / 32.0),
    (1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0),
    (439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0),
    (-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0),
)
_B4 = np.array((25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0))
_B5 = np.array((16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0))
_E = _B5 - _B4


def _rkf45_step(rhs: RhsFn, u: Callable[[float], float], t: float, x: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    ks = np.empty((6, x.shape[0]))
    for i in range(6):
        xi = x.copy()
        for j, a in enumerate(_A[i]):
            xi += h * a * ks[j]
        ti = t + _C[i] * h
        ks[i] = rhs(ti, xi, u(ti))
    x_new = x + h * (_B5 @ ks)
    err = h * (_E @ ks)
    return x_new, err


def _integrate_rk45(rhs: RhsFn, x0: np.ndarray, u: Callable[[float], float], cfg: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    t = cfg.t0
    x = x0.copy()
    h = min(cfg.dt, cfg.dt_max, cfg.t1 - cfg.t0)
    ts: List[float] = [t]
    xs: List[np.ndarray] = [x.copy()]
    rejected = 0
    while t < cfg.t1:
        if len(ts) > cfg.max_steps:
            raise NumericalFailure(f"步数超过上限 {cfg.max_steps} (t={t:.6g})")
        last = t + h >= cfg.t1
        step = cfg.t1 - t if last else h
        x_new, err_vec = _rkf45_step(rhs, u, t, x, step)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = float(np.max(np.abs(err_vec) / scale)) if np.all(np.isfinite(x_new)) else math.inf
        if err <= 1.0:
            t = cfg.t1 if last else t + step
            x = x_new
            ts.append(t)
            xs.append(x.copy())
        else:
            rejected += 1
        if math.isfinite(err):
            fac = FAC_MAX if err == 0.0 else min(FAC_MAX, max(FAC_MIN, SAFETY * (1.0 / err) ** 0.2))
        else:
            fac = FAC_MIN
        h = min(cfg.dt_max, step * fac)
        if t < cfg.t1 and h < cfg.dt_min and h < cfg.t1 - t:
            raise NumericalFailure(
                f"步长下溢: dt={h:.3e} < dt_min={cfg.dt_min:.3e} (t={t:.6g}, err={err:.3e}, state={x})"
            )
    solver_logger.debug("RK45 完成: %d 步接受, %d 步拒绝", len(ts) - 1, rejected)
    return np.asarray(ts), np.vstack(xs)


def integrate(
    rhs: RhsFn,
    x0: np.ndarray,
    u: Optional[Callable[[float], float]],
    cfg: SolverConfig,
    observers: Optional[Mapping[str, ObserverFn]] = None,
    power: Optional[ObserverFn] = None,
) -> Trajectory:
    """积分 ẋ = rhs(t, x, u(t))

    Args:
        rhs: 导数函数 rhs(t, x, u_t)
        x0: 初始状态
        u: 输入信号, None 时按 0 处理
        cfg: 求解器配置
        observers: 输出通道 name → fn(t, x, u_t), 在每个记录点上求值
        power: 供给功率函数; 给出时记录 P_in 与其累积梯形积分 W_in

    Returns:
        Trajectory
    """
    x0 = np.asarray(x0, dtype=float).copy()
    _check_finite(cfg.t0, x0)
    u_fn: Callable[[float], float] = u if u is not None else (lambda t: 0.0)
    if cfg.method == "rk4":
        ts, xs = _integrate_rk4(rhs, x0, u_fn, cfg)
    else:
        ts, xs = _integrate_rk45(rhs, x0, u_fn, cfg)

    channels: Dict[str, np.ndarray] = {}
    us = np.array([u_fn(t) for t in ts]) if (observers or power) else None
    for name, fn in (observers or {}).items():
        channels[name] = np.array([fn(t, x, ut) for t, x, ut in zip(ts, xs, us)])
    if power is not None:
        p_in = np.array([power(t, x, ut) for t, x, ut in zip(ts, xs, us)])
        channels["P_in"] = p_in
        channels["W_in"] = cumulative_trapezoid(p_in, ts)
    solver_logger.debug("积分完成: method=%s, 样本数=%d, t=[%g, %g]", cfg.method, len(ts), cfg.t0, cfg.t1)
    return Trajectory(t=ts, states=xs, channels=channels, meta={"max_step": float(np.max(np.diff(ts)))})


def simulate_model(
    m: FrBDModel,
    u: Callable[[float], float],
    cfg: SolverConfig,
    x0: Optional[np.ndarray] = None,
) -> Trajectory:
    """以速度 v(t) 驱动摩擦模型, 记录 v, f, pf, V, P_in, W_in 通道"""
    x_init = np.zeros(m.dim) if x0 is None else as_vector(m, x0)
    model_rhs = compile_rhs(m)
    traj = integrate(lambda t, x, ut: model_rhs(x, ut), x_init, u, cfg)
    add_model_channels(m, traj, np.array([u(t) for t in traj.t]))
    return traj


def add_model_channels(m: FrBDModel, traj: Trajectory, v: np.ndarray) -> Trajectory:
    """按状态序列批量补全 v, f, pf, V, P_in, W_in 通道"""
    f = force_series(m, traj.states)
    pf = m.p * f
    p_in = pf * v
    traj.channels.update({
        "v": v,
        "f": f,
        "pf": pf,
        "V": storage_series(m, traj.states),
        "P_in": p_in,
        "W_in": cumulative_trapezoid(p_in, traj.t),
    })
    return traj


# ==================== 审计 ====================


def passivity_audit(traj: Trajectory) -> float:
    """无源性裕度 min_k (W_in[k] − (V[k] − V[0]))"""
    V = traj.channel("V")
    W = traj.channel("W_in")
    margin = float(np.min(W - (V - V[0])))
    audit_logger.debug("无源性裕度: %.6e", margin)
    return margin


def passivity_tolerance(traj: Trajectory, c: float = 1.0) -> float:
    """求积容差 tol_num = c·dt²·T·max|pfv|, 另加舍入下限"""
    p_in = traj.channel("P_in")
    T = float(traj.t[-1] - traj.t[0])
    dt = traj.max_step
    quad = c * dt * dt * T * float(np.max(np.abs(p_in))) if len(p_in) else 0.0
    scale = max(float(np.max(np.abs(traj.channel("W_in")))), float(np.max(np.abs(traj.channel("V")))))
    return quad + 1e-12 * scale


def passivity_check(traj: Trajectory, c: float = 1.0) -> Tuple[float, float, bool]:
    """(裕度, 容差, 是否通过)"""
    margin = passivity_audit(traj)
    tol = passivity_tolerance(traj, c)
    if -tol <= margin < 0.0:
        audit_logger.warning("无源性裕度 %.3e 为负, 仍在求积容差 %.3e 之内", margin, tol)
    return margin, tol, margin >= -tol


def certify_passivity(traj: Trajectory, c: float = 1.0) -> bool:
    return passivity_check(traj, c)[2]


@dataclass(frozen=True)
class BoundednessReport:
    """有界性审计结果"""

    sup_V: float
    V0: float
    attractor_bound: float
    ratio: float
    finite: bool
    input_within_bound: bool
    bounded: bool


def boundedness_audit(traj: Trajectory, v_bound: float, rtol: float = 1e-4) -> BoundednessReport:
    """有界性审计: sup V ≤ max(V(0), B)·(1 + rtol), B 为后半段 V 的最大值

    零初值下若前半段的暂态峰值高于后半段吸引子, 审计不通过。
    """
    V = traj.channel("V")
    finite = bool(np.all(np.isfinite(traj.states)) and np.all(np.isfinite(V)))
    t_mid = traj.t[0] + 0.5 * (traj.t[-1] - traj.t[0])
    tail = V[traj.t >= t_mid]
    B = float(np.max(tail)) if len(tail) else float(V[-1])
    sup_V = float(np.max(V))
    ref = max(float(V[0]), B)
    ratio = sup_V / ref if ref > 0.0 else (0.0 if sup_V <= 0.0 else math.inf)
    input_ok = True
    if "v" in traj.channels:
        input_ok = bool(np.max(np.abs(traj.channels["v"])) <= v_bound * (1.0 + 1e-12))
    bounded = finite and ratio <= 1.0 + rtol
    report = BoundednessReport(
        sup_V=sup_V, V0=float(V[0]), attractor_bound=B, ratio=ratio,
        finite=finite, input_within_bound=input_ok, bounded=bounded,
    )
    audit_logger.debug("有界性审计: %s", report)
    return report


def dissipation_identity_audit(m: FrBDModel, traj: Trajectory, max_samples: int = 2000) -> float:
    """沿轨迹比较闭式 V̇ 与链式法则 ∇V·rhs, 返回最大相对误差

    样本过多时等间隔抽取 max_samples 个点。
    """
    v = traj.channel("v")
    idx = np.unique(np.linspace(0, len(traj) - 1, min(len(traj), max_samples)).astype(int))
    closed = np.array([dissipation_rate(m, traj.states[k], v[k]) for k in idx])
    chain = np.array([float(storage_gradient(m, traj.states[k]) @ state_rhs(m, traj.states[k], v[k])) for k in idx])
    scale = max(float(np.max(np.abs(traj.channels.get("P_in", closed)))), 1e-300)
    den = np.maximum(np.maximum(np.abs(closed), np.abs(chain)), 1e-8 * scale)
    relerr = float(np.max(np.abs(closed - chain) / den))
    audit_logger.debug("耗散恒等式最大相对误差: %.3e", relerr)
    return relerr
