"""
FrBD 粘弹性摩擦模型

FrBD_{n+1}-GM 与 FrBD_{n+1}-GKV 两种形式的状态方程、输出、稳态解、
存储函数 (Lyapunov 函数) 与耗散率。

状态向量布局固定为 [z, b₁ … bₙ]:
GM 中 bᵢ 为分支力 fᵢ, GKV 中 bᵢ 为分支变形 zᵢ。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from frbd.core.exceptions import ModelDimensionError
from frbd.models.friction import (
    FrictionLaw,
    GKVParams,
    GMParams,
    Regularization,
    eval_mu,
    reg_abs,
    sgn_eps,
)

Rheology = Union[GMParams, GKVParams]


class FrBDModel(BaseModel):
    """完整的 FrBD 摩擦模型: 流变元件 + 摩擦系数律 + 正则化 + 法向力"""

    model_config = ConfigDict(frozen=True)

    rheology: Rheology
    law: FrictionLaw
    reg: Regularization = Field(default_factory=Regularization)
    p: float = Field(default=1.0, gt=0.0)

    @property
    def n(self) -> int:
        return self.rheology.n

    @property
    def dim(self) -> int:
        return self.rheology.n + 1

    @property
    def is_gm(self) -> bool:
        return isinstance(self.rheology, GMParams)


@dataclass(frozen=True)
class GMState:
    """GM 状态: 鬃毛变形 z 与分支力 f_i"""

    z: float
    f_branch: Tuple[float, ...] = ()

    def to_vector(self) -> np.ndarray:
        return np.array((self.z, *self.f_branch), dtype=float)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "GMState":
        return cls(z=float(x[0]), f_branch=tuple(float(b) for b in x[1:]))


@dataclass(frozen=True)
class GKVState:
    """GKV 状态: 鬃毛变形 z 与分支变形 z_i"""

    z: float
    z_branch: Tuple[float, ...] = ()

    @property
    def z0(self) -> float:
        return self.z - sum(self.z_branch)

    def to_vector(self) -> np.ndarray:
        return np.array((self.z, *self.z_branch), dtype=float)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "GKVState":
        return cls(z=float(x[0]), z_branch=tuple(float(b) for b in x[1:]))


StateLike = Union[GMState, GKVState, np.ndarray]


def as_vector(m: FrBDModel, s: StateLike) -> np.ndarray:
    """把状态转换为 [z, b₁ … bₙ] 向量并检查维度"""
    if isinstance(s, GMState):
        if not m.is_gm:
            raise ModelDimensionError("GM 状态不能用于 GKV 模型")
        x = s.to_vector()
    elif isinstance(s, GKVState):
        if m.is_gm:
            raise ModelDimensionError("GKV 状态不能用于 GM 模型")
        x = s.to_vector()
    else:
        x = np.asarray(s, dtype=float)
    if x.ndim != 1 or x.shape[0] != m.dim:
        raise ModelDimensionError(f"状态维度 {x.shape} 与模型维度 {m.dim} 不一致")
    return x


def bristle_gain(m: FrBDModel, v: float) -> float:
    """鬃毛速率律中的增益 |v|_ε / μ(v)"""
    return reg_abs(m.reg, v) / eval_mu(m.law, v)


# 内部核函数: a 为 |v|_ε/μ(v), drive 为 ż 中的加性驱动项
def _gm_core(k0: float, k: np.ndarray, inv_tau: np.ndarray,
             x: np.ndarray, a: float, drive: float) -> np.ndarray:
    fb = x[1:]
    f = k0 * x[0] + fb.sum()
    zdot = -a * f + drive
    out = np.empty_like(x)
    out[0] = zdot
    # 级联: 分支力导数使用刚算出的 ż
    out[1:] = -fb * inv_tau + k * zdot
    return out


def _gkv_core(k0: float, k: np.ndarray, inv_c: np.ndarray,
              x: np.ndarray, a: float, drive: float) -> np.ndarray:
    zb = x[1:]
    z0 = x[0] - zb.sum()
    out = np.empty_like(x)
    out[0] = -a * k0 * z0 + drive
    out[1:] = (-k * zb + k0 * z0) * inv_c
    return out


def compile_rhs(m: FrBDModel) -> Callable[[np.ndarray, float, Optional[float]], np.ndarray]:
    """预取参数数组, 返回热循环用的 rhs(x, v, drive=None)

    drive 缺省为 v; 观测器传入 q̇ − k₂s, 误差系统传入 k₂s。
    """
    rh = m.rheology
    k0 = rh.k0
    k = rh.k_arr
    law, reg = m.law, m.reg
    if m.is_gm:
        inv = rh.inv_tau
        core = _gm_core
    else:
        inv = rh.inv_c
        core = _gkv_core

    def rhs(x: np.ndarray, v: float, drive: Optional[float] = None) -> np.ndarray:
        a = reg_abs(reg, v) / law.mu(v)
        return core(k0, k, inv, x, a, v if drive is None else drive)

    return rhs


def compile_force(m: FrBDModel) -> Callable[[np.ndarray], float]:
    """返回无量纲摩擦力 f(x) 的快速求值函数"""
    k0 = m.rheology.k0
    if m.is_gm:
        return lambda x: k0 * x[0] + float(x[1:].sum())
    return lambda x: k0 * (x[0] - float(x[1:].sum()))


def rhs_gm(m: FrBDModel, s: StateLike, v: float) -> np.ndarray:
    """FrBD_{n+1}-GM 状态方程

    ż = −(|v|_ε/μ(v))(k̄₀z + Σfᵢ) + v
    ḟᵢ = −fᵢ/τᵢ + k̄ᵢż
    """
    if not m.is_gm:
        raise ModelDimensionError("rhs_gm 需要 GM 模型")
    return rhs(m, s, v)


def rhs_gkv(m: FrBDModel, s: StateLike, v: float) -> np.ndarray:
    """FrBD_{n+1}-GKV 状态方程

    ż = −(|v|_ε/μ(v))k̄₀(z − Σzᵢ) + v
    żᵢ = −(k̄ᵢ/c̄ᵢ)zᵢ + (k̄₀/c̄ᵢ)(z − Σzᵢ)
    """
    if m.is_gm:
        raise ModelDimensionError("rhs_gkv 需要 GKV 模型")
    return rhs(m, s, v)


def rhs(m: FrBDModel, s: StateLike, v: float, drive: Optional[float] = None) -> np.ndarray:
    """按流变类型分派的状态方程

    Args:
        m: 摩擦模型
        s: 状态
        v: 相对速度, 用于 |v|_ε/μ(v)
        drive: ż 中的加性驱动项, 缺省为 v

    Returns:
        与状态同布局的导数向量
    """
    x = as_vector(m, s)
    a = bristle_gain(m, v)
    d = v if drive is None else drive
    rh = m.rheology
    if m.is_gm:
        return _gm_core(rh.k0, rh.k_arr, rh.inv_tau, x, a, d)
    return _gkv_core(rh.k0, rh.k_arr, rh.inv_c, x, a, d)


def output_force(m: FrBDModel, s: StateLike) -> float:
    """无量纲摩擦力: GM 为 k̄₀z + Σfᵢ, GKV 为 k̄₀(z − Σzᵢ)"""
    x = as_vector(m, s)
    if m.is_gm:
        return float(m.rheology.k0 * x[0] + x[1:].sum())
    return float(m.rheology.k0 * (x[0] - x[1:].sum()))


def output_pf(m: FrBDModel, s: StateLike) -> float:
    """有量纲摩擦力 p·f"""
    return m.p * output_force(m, s)


def steady_state(m: FrBDModel, v: float) -> Tuple[float, np.ndarray]:
    """恒速 v 下的稳态

    f = sgn_ε(v)μ(v);
    GM: z = f/k̄₀, fᵢ = 0;
    GKV: z = Σ_{i=0..n} f/k̄ᵢ, zᵢ = f/k̄ᵢ。
    """
    f = sgn_eps(m.reg, v) * eval_mu(m.law, v)
    rh = m.rheology
    x = np.zeros(m.dim)
    if m.is_gm:
        x[0] = f / rh.k0
    else:
        x[1:] = f / rh.k_arr
        x[0] = f / rh.k0 + x[1:].sum()
    return float(f), x


def storage(m: FrBDModel, s: StateLike) -> float:
    """存储函数

    GM: V = ½pk̄₀z² + ½Σ(p/k̄ᵢ)fᵢ²
    GKV: V = ½pk̄₀z₀² + ½Σpk̄ᵢzᵢ², z₀ = z − Σzᵢ
    """
    x = as_vector(m, s)
    rh = m.rheology
    p = m.p
    b = x[1:]
    if m.is_gm:
        return float(0.5 * p * rh.k0 * x[0] ** 2 + 0.5 * p * np.sum(b * b / rh.k_arr))
    z0 = x[0] - b.sum()
    return float(0.5 * p * rh.k0 * z0 ** 2 + 0.5 * p * np.sum(rh.k_arr * b * b))


def storage_gradient(m: FrBDModel, s: StateLike) -> np.ndarray:
    """存储函数对状态的梯度 ∇V"""
    x = as_vector(m, s)
    rh = m.rheology
    p = m.p
    b = x[1:]
    grad = np.empty_like(x)
    if m.is_gm:
        grad[0] = p * rh.k0 * x[0]
        grad[1:] = p * b / rh.k_arr
    else:
        z0 = x[0] - b.sum()
        grad[0] = p * rh.k0 * z0
        grad[1:] = -p * rh.k0 * z0 + p * rh.k_arr * b
    return grad


def dissipation_rate(m: FrBDModel, s: StateLike, v: float) -> float:
    """沿状态方程的 V̇ 闭式

    GM: V̇ = pfv − p|v|_ε f²/μ(v) − Σ p fᵢ²/(τᵢk̄ᵢ)
    GKV: V̇ = pfv − p|v|_ε f²/μ(v) − Σ (p/c̄ᵢ)(k̄ᵢzᵢ − k̄₀z₀)²
    """
    x = as_vector(m, s)
    rh = m.rheology
    p = m.p
    f = output_force(m, x)
    b = x[1:]
    value = p * f * v - p * bristle_gain(m, v) * f * f
    if m.is_gm:
        value -= p * float(np.sum(b * b * rh.inv_tau / rh.k_arr))
    else:
        z0 = x[0] - b.sum()
        value -= p * float(np.sum(rh.inv_c * (rh.k_arr * b - rh.k0 * z0) ** 2))
    return float(value)


def supplied_power(m: FrBDModel, s: StateLike, v: float) -> float:
    """供给功率 p·f·v"""
    return m.p * output_force(m, s) * v


def gm_state_to_gkv(gm: FrBDModel, s: StateLike, gkv: FrBDModel) -> np.ndarray:
    """n=1 时把 GM 状态换算为等价 GKV 模型的状态

    保持 z 与 f 相同: z' = z, z₁' = z − f/k̄₀'。零状态映射到零状态。
    """
    if gm.n != 1 or gkv.n != 1 or not gm.is_gm or gkv.is_gm:
        raise ModelDimensionError("状态换算只支持 n=1 的 GM → GKV")
    x = as_vector(gm, s)
    f = output_force(gm, x)
    return np.array([x[0], x[0] - f / gkv.rheology.k0])


def gkv_state_to_gm(gkv: FrBDModel, s: StateLike, gm: FrBDModel) -> np.ndarray:
    """n=1 时把 GKV 状态换算为等价 GM 模型的状态: z' = z, f₁' = f − k̄₀'z"""
    if gm.n != 1 or gkv.n != 1 or not gm.is_gm or gkv.is_gm:
        raise ModelDimensionError("状态换算只支持 n=1 的 GKV → GM")
    x = as_vector(gkv, s)
    f = output_force(gkv, x)
    return np.array([x[0], f - gm.rheology.k0 * x[0]])


def force_series(m: FrBDModel, xs: np.ndarray) -> np.ndarray:
    """对状态序列 (N, n+1) 批量计算 f"""
    xs = np.atleast_2d(xs)
    if m.is_gm:
        return m.rheology.k0 * xs[:, 0] + xs[:, 1:].sum(axis=1)
    return m.rheology.k0 * (xs[:, 0] - xs[:, 1:].sum(axis=1))


def storage_series(m: FrBDModel, xs: np.ndarray) -> np.ndarray:
    """对状态序列 (N, n+1) 批量计算 V"""
    xs = np.atleast_2d(xs)
    rh = m.rheology
    b = xs[:, 1:]
    if m.is_gm:
        return 0.5 * m.p * (rh.k0 * xs[:, 0] ** 2 + (b * b / rh.k_arr).sum(axis=1))
    z0 = xs[:, 0] - b.sum(axis=1)
    return 0.5 * m.p * (rh.k0 * z0 ** 2 + (rh.k_arr * b * b).sum(axis=1))
