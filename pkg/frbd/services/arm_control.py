"""
单自由度机械臂跟踪控制

带 FrBD 关节摩擦的摆杆对象、利用无源性的跟踪控制律与摩擦力观测器:

    U = −k₁s + F̂ + m(q)(q̈_ref − λq̃̇) + c(q, q̇)(q̇_ref − λq̃) + g(q)

观测器是对象摩擦模型的副本, 在 ż̂ 中注入 −k₂s。
观测误差 (z̃, f̃) 满足 ż̃ = −(|q̇|_ε/μ(q̇))·f̃ + k₂s,
其存储函数 V_obs = (r/k₂)·V(z̃, f̃) 给出 ∫F̃s dτ ≥ −V_obs(0)。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from frbd.core.exceptions import ModelDimensionError, NumericalFailure
from frbd.core.logging import experiments_logger
from frbd.models.friction import Regularization, SLSCanonical, StribeckLaw, canonical_sls_to_gm
from frbd.models.viscoelastic import (
    FrBDModel,
    compile_force,
    compile_rhs,
    force_series,
    rhs,
    storage_series,
)
from frbd.services.integrator import SolverConfig, Trajectory, integrate


def default_joint_friction() -> FrBDModel:
    """关节摩擦默认值: 标准线性固体基准参数 (GM), p = 100 N, ε = 1e-6"""
    return FrBDModel(
        rheology=canonical_sls_to_gm(SLSCanonical(sigma0=1e4, sigma1=64.5, gamma1=1e-3)),
        law=StribeckLaw(mu_d=1.0, mu_s=1.5, v_s=0.01, delta=2.0),
        reg=Regularization(epsilon=1e-6),
        p=100.0,
    )


class ArmPlant(BaseModel):
    """摆杆对象: m(q) = J, c(q, q̇) = c₀·cos(q)·q̇, g(q) = m_p·g₀·l·sin(q)"""

    model_config = ConfigDict(frozen=True)

    inertia: float = Field(default=1.0, gt=0.0)
    mass: float = Field(default=1.0, ge=0.0)
    length: float = Field(default=0.5, ge=0.0)
    g0: float = 9.81
    coriolis_c0: float = 0.0
    r: float = Field(default=0.05, gt=0.0)
    friction: FrBDModel = Field(default_factory=default_joint_friction)

    @property
    def p(self) -> float:
        return self.friction.p

    def m(self, q: float) -> float:
        return self.inertia

    def c(self, q: float, qd: float) -> float:
        return self.coriolis_c0 * math.cos(q) * qd

    def g(self, q: float) -> float:
        return self.mass * self.g0 * self.length * math.sin(q)


class ControllerGains(BaseModel):
    """控制器与观测器增益"""

    model_config = ConfigDict(frozen=True)

    lam: float = Field(default=5.0, gt=0.0)
    k1: float = Field(default=10.0, gt=0.0)
    k2: float = Field(default=100.0, gt=0.0)


class ConstantReference(BaseModel):
    """常值参考"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant"] = "constant"
    value: float = 0.0

    def __call__(self, t: float) -> Tuple[float, float, float]:
        return self.value, 0.0, 0.0


class SinusoidReference(BaseModel):
    """正弦参考 q_ref = offset + A·sin(2πft + φ)"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sinusoid"] = "sinusoid"
    offset: float = 0.0
    amplitude: float = 0.2
    freq: float = Field(default=0.2, ge=0.0)
    phase: float = 0.0

    def __call__(self, t: float) -> Tuple[float, float, float]:
        w = 2.0 * math.pi * self.freq
        arg = w * t + self.phase
        s, c = math.sin(arg), math.cos(arg)
        return self.offset + self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s


class QuinticReference(BaseModel):
    """分段五次多项式参考, 途经点处速度与加速度为零"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["quintic"] = "quintic"
    times: Tuple[float, ...]
    points: Tuple[float, ...]

    @model_validator(mode="after")
    def check_knots(self) -> "QuinticReference":
        if len(self.times) != len(self.points) or len(self.times) < 2:
            raise ValueError("times 与 points 长度必须相同且至少为 2")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("途经时间必须严格递增")
        return self

    def __call__(self, t: float) -> Tuple[float, float, float]:
        ts, ps = self.times, self.points
        if t <= ts[0]:
            return ps[0], 0.0, 0.0
        if t >= ts[-1]:
            return ps[-1], 0.0, 0.0
        i = int(np.searchsorted(ts, t, side="right")) - 1
        T = ts[i + 1] - ts[i]
        tau = (t - ts[i]) / T
        dq = ps[i + 1] - ps[i]
        h = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
        hd = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / T
        hdd = (60 * tau - 180 * tau**2 + 120 * tau**3) / (T * T)
        return ps[i] + dq * h, dq * hd, dq * hdd


ReferenceSignal = Annotated[
    Union[ConstantReference, SinusoidReference, QuinticReference],
    Field(discriminator="kind"),
]


class ArmInitialConditions(BaseModel):
    """闭环初值, None 表示从参考信号或零状态取值"""

    model_config = ConfigDict(frozen=True)

    q0: Optional[float] = None
    qd0: Optional[float] = None
    z0: Optional[Tuple[float, ...]] = None
    z_hat0: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class ClosedLoopState:
    """闭环状态: 关节位置/速度、对象摩擦状态、观测器状态"""

    q: float
    qd: float
    plant: np.ndarray
    observer: np.ndarray

    def __post_init__(self) -> None:
        if self.plant.shape != self.observer.shape:
            raise ModelDimensionError("对象与观测器的摩擦状态维度不一致")

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.q, self.qd], self.plant, self.observer))

    @classmethod
    def from_vector(cls, y: np.ndarray, dim: int) -> "ClosedLoopState":
        return cls(q=float(y[0]), qd=float(y[1]), plant=y[2:2 + dim], observer=y[2 + dim:2 + 2 * dim])


def tracking_vars(state: ClosedLoopState, ref: ReferenceSignal, t: float, gains: ControllerGains) -> Tuple[float, float]:
    """跟踪误差 q̃ = q − q_ref 与滑模变量 s = q̃̇ + λq̃"""
    q_ref, qd_ref, _ = ref(t)
    q_tilde = state.q - q_ref
    return q_tilde, (state.qd - qd_ref) + gains.lam * q_tilde


def control_law(
    state: ClosedLoopState,
    ref: ReferenceSignal,
    t: float,
    gains: ControllerGains,
    plant: ArmPlant,
    F_hat: float,
) -> float:
    """控制力矩 U"""
    q_ref, qd_ref, qdd_ref = ref(t)
    q, qd = state.q, state.qd
    q_tilde = q - q_ref
    qd_tilde = qd - qd_ref
    s = qd_tilde + gains.lam * q_tilde
    return (
        -gains.k1 * s
        + F_hat
        + plant.m(q) * (qdd_ref - gains.lam * qd_tilde)
        + plant.c(q, qd) * (qd_ref - gains.lam * q_tilde)
        + plant.g(q)
    )


def joint_acceleration(state: ClosedLoopState, plant: ArmPlant, U: float) -> float:
    """对象动力学 m(q)q̈ + c(q, q̇)q̇ + g(q) + F = U, F = r·p·f"""
    F = plant.r * plant.p * float(force_series(plant.friction, state.plant)[0])
    return (U - plant.c(state.q, state.qd) * state.qd - plant.g(state.q) - F) / plant.m(state.q)


def observer_rhs(obs: np.ndarray, qd: float, s: float, gains: ControllerGains, model: FrBDModel) -> np.ndarray:
    """观测器状态方程: 对象摩擦模型 + ż̂ 中注入 −k₂s"""
    return rhs(model, obs, qd, drive=qd - gains.k2 * s)


def error_rhs(err: np.ndarray, qd: float, s: float, gains: ControllerGains, model: FrBDModel) -> np.ndarray:
    """观测误差系统: ż̃ = −(|q̇|_ε/μ(q̇))·f̃ + k₂s, 分支方程与对象相同"""
    return rhs(model, err, qd, drive=gains.k2 * s)


def observer_storage(plant: ArmPlant, gains: ControllerGains, err: np.ndarray) -> np.ndarray:
    """观测误差存储函数 V_obs = (r/k₂)·V(z̃, f̃)"""
    return (plant.r / gains.k2) * storage_series(plant.friction, err)


def initial_state(plant: ArmPlant, ref: ReferenceSignal, ic: ArmInitialConditions) -> ClosedLoopState:
    dim = plant.friction.dim
    q_ref0, qd_ref0, _ = ref(0.0)

    def _vec(values: Optional[Tuple[float, ...]], name: str) -> np.ndarray:
        if values is None:
            return np.zeros(dim)
        if len(values) != dim:
            raise ModelDimensionError(f"{name} 维度 {len(values)} 与摩擦状态维度 {dim} 不一致")
        return np.asarray(values, dtype=float)

    return ClosedLoopState(
        q=q_ref0 if ic.q0 is None else ic.q0,
        qd=qd_ref0 if ic.qd0 is None else ic.qd0,
        plant=_vec(ic.z0, "z0"),
        observer=_vec(ic.z_hat0, "z_hat0"),
    )


def run_tracking(
    plant: ArmPlant,
    ref: ReferenceSignal,
    gains: ControllerGains,
    solver: SolverConfig,
    horizon: float,
    ic: Optional[ArmInitialConditions] = None,
    track_error_system: bool = False,
) -> Trajectory:
    """闭环跟踪仿真

    Args:
        plant: 机械臂对象
        ref: 参考轨迹
        gains: 控制器与观测器增益
        solver: 求解器配置 (时间区间由 horizon 覆盖)
        horizon: 仿真时长 (s)
        ic: 初值
        track_error_system: 是否把观测误差系统作为附加状态一同积分

    Returns:
        通道 q, qd, q_ref, q_tilde, s, F, F_hat, F_tilde, U, int_s2, V_obs, int_F_tilde_s 的轨迹;
        track_error_system 时另有 z_tilde_sys 及各分支 e1..en 通道
    """
    model = plant.friction
    dim = model.dim
    x0 = initial_state(plant, ref, ic or ArmInitialConditions())
    y0 = x0.to_vector()
    # 附加状态: ∫s² 与 ∫F̃s, 由积分器按同一容差求积
    y0 = np.concatenate((y0, [0.0, 0.0]))
    if track_error_system:
        y0 = np.concatenate((y0, x0.plant - x0.observer))
    n_main = 2 + 2 * dim

    fric_rhs = compile_rhs(model)
    force = compile_force(model)
    rp = plant.r * plant.p
    lam, k1, k2 = gains.lam, gains.k1, gains.k2

    # 状态: [q, q̇, 对象摩擦, 观测器, ∫s², ∫F̃s, (误差系统)]
    def closed_rhs(t: float, y: np.ndarray, _u: float) -> np.ndarray:
        q, qd = y[0], y[1]
        xp = y[2:2 + dim]
        xo = y[2 + dim:2 + 2 * dim]
        q_ref, qd_ref, qdd_ref = ref(t)
        q_tilde = q - q_ref
        qd_tilde = qd - qd_ref
        s = qd_tilde + lam * q_tilde
        F = rp * force(xp)
        F_hat = rp * force(xo)
        cq = plant.c(q, qd)
        U = (
            -k1 * s + F_hat
            + plant.m(q) * (qdd_ref - lam * qd_tilde)
            + cq * (qd_ref - lam * q_tilde)
            + plant.g(q)
        )
        out = np.empty_like(y)
        out[0] = qd
        out[1] = (U - cq * qd - plant.g(q) - F) / plant.m(q)
        out[2:2 + dim] = fric_rhs(xp, qd)
        out[2 + dim:n_main] = fric_rhs(xo, qd, qd - k2 * s)
        out[n_main] = s * s
        out[n_main + 1] = (F - F_hat) * s
        if track_error_system:
            out[n_main + 2:] = fric_rhs(y[n_main + 2:], qd, k2 * s)
        return out

    cfg = solver.with_span(0.0, horizon)
    try:
        traj = integrate(closed_rhs, y0, None, cfg)
    except NumericalFailure as exc:
        raise NumericalFailure(
            f"闭环仿真失败 (λ={lam}, k₁={k1}, k₂={k2}, r={plant.r}, p={plant.p}): {exc}"
        ) from exc

    ys = traj.states
    t = traj.t
    refs = np.array([ref(ti) for ti in t])
    q, qd = ys[:, 0], ys[:, 1]
    xp = ys[:, 2:2 + dim]
    xo = ys[:, 2 + dim:2 + 2 * dim]
    q_tilde = q - refs[:, 0]
    s = (qd - refs[:, 1]) + lam * q_tilde
    F = rp * force_series(model, xp)
    F_hat = rp * force_series(model, xo)
    F_tilde = F - F_hat
    err = xp - xo
    cq = np.array([plant.c(a, b) for a, b in zip(q, qd)])
    gq = np.array([plant.g(a) for a in q])
    mq = np.array([plant.m(a) for a in q])
    U = -k1 * s + F_hat + mq * (refs[:, 2] - lam * (qd - refs[:, 1])) + cq * (refs[:, 1] - lam * q_tilde) + gq

    traj.channels.update({
        "q": q,
        "qd": qd,
        "q_ref": refs[:, 0],
        "q_tilde": q_tilde,
        "s": s,
        "F": F,
        "F_hat": F_hat,
        "F_tilde": F_tilde,
        "U": U,
        "int_s2": ys[:, n_main],
        "V_obs": observer_storage(plant, gains, err),
        "int_F_tilde_s": ys[:, n_main + 1],
        "z_tilde": err[:, 0],
    })
    if track_error_system:
        e = ys[:, n_main + 2:]
        traj.channels["z_tilde_sys"] = e[:, 0]
        for i in range(1, dim):
            traj.channels[f"b_tilde{i}"] = err[:, i]
            traj.channels[f"e{i}"] = e[:, i]
    experiments_logger.info(
        "机械臂跟踪完成: %d 个样本, |q̃(T)|=%.3e rad, ∫s²=%.4e",
        len(t), abs(q_tilde[-1]), traj.channels["int_s2"][-1],
    )
    return traj


@dataclass(frozen=True)
class ArmAudit:
    """闭环审计: 末段跟踪误差、∫s² 饱和度、观测误差无源性裕度"""

    final_window_max_error: float
    int_s2_total: float
    int_s2_trailing_fraction: float
    observer_passivity_margin: float
    passed: bool


def audit_tracking(
    traj: Trajectory,
    error_bound: float = 1e-3,
    window: float = 0.25,
    trailing: float = 0.1,
    saturation: float = 0.01,
) -> ArmAudit:
    """检查末段 |q̃| < error_bound, ∫s² 末尾 trailing 比例时间内增量 < saturation, 以及 ∫F̃s ≥ −V_obs(0)"""
    t = traj.t
    T0, T1 = float(t[0]), float(t[-1])
    q_tilde = traj.channel("q_tilde")
    late = q_tilde[t >= T1 - window * (T1 - T0)]
    max_err = float(np.max(np.abs(late)))

    int_s2 = traj.channel("int_s2")
    total = float(int_s2[-1])
    before = float(np.interp(T1 - trailing * (T1 - T0), t, int_s2))
    frac = (total - before) / total if total > 0.0 else 0.0

    V_obs0 = float(traj.channel("V_obs")[0])
    margin = float(np.min(traj.channel("int_F_tilde_s") + V_obs0))
    tol = 1e-6 * max(V_obs0, float(np.max(np.abs(traj.channel("int_F_tilde_s")))), 1e-300)
    passed = max_err < error_bound and frac < saturation and margin >= -tol
    return ArmAudit(
        final_window_max_error=max_err,
        int_s2_total=total,
        int_s2_trailing_fraction=frac,
        observer_passivity_margin=margin,
        passed=passed,
    )
