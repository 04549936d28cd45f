"""
摩擦系数律与标准线性固体参数换算

Stribeck / 常数摩擦系数律、绝对值与符号函数的正则化、
以及 n=1 (标准线性固体) 时 GM / GKV 参数与规范系数 (σ₀, σ₁, γ₁) 之间的换算。
所有类型构造后不可变, 所有函数为纯函数。
"""

from __future__ import annotations

import math
from typing import Annotated, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from frbd.core.exceptions import ModelDimensionError

# exp(-x) 在 x > 745 时下溢为 0
_LOG_EXP_CUTOFF = math.log(745.0)


class StribeckLaw(BaseModel):
    """指数型 Stribeck 摩擦系数律 μ = μ_d + (μ_s − μ_d)·exp(−(|v|/v_S)^δ)"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["stribeck"] = "stribeck"
    mu_d: float = Field(gt=0.0)
    mu_s: float = Field(gt=0.0)
    v_s: float = Field(ge=0.0)
    delta: float = Field(ge=0.0)

    @model_validator(mode="after")
    def check_static_above_dynamic(self) -> "StribeckLaw":
        if self.mu_s < self.mu_d:
            raise ValueError("mu_s 必须不小于 mu_d")
        return self

    @property
    def mu_min(self) -> float:
        return self.mu_d

    @property
    def mu_max(self) -> float:
        return self.mu_s

    def mu(self, v: float) -> float:
        av = abs(v)
        # v_S = 0 或 δ = 0 时取极限: 静止处 μ_s, 其余处 μ_d
        if self.v_s == 0.0 or self.delta == 0.0 or av == 0.0:
            return self.mu_s if av == 0.0 else self.mu_d
        # 指数在对数域计算, (|v|/v_S)^δ 超出浮点范围时 exp 项已为 0
        log_x = self.delta * (math.log(av) - math.log(self.v_s))
        if log_x > _LOG_EXP_CUTOFF:
            return self.mu_d
        return self.mu_d + (self.mu_s - self.mu_d) * math.exp(-math.exp(log_x))

    def mu_array(self, v: np.ndarray) -> np.ndarray:
        av = np.abs(np.asarray(v, dtype=float))
        if self.v_s == 0.0 or self.delta == 0.0:
            return np.where(av == 0.0, self.mu_s, self.mu_d)
        with np.errstate(divide="ignore"):
            log_x = self.delta * (np.log(av) - math.log(self.v_s))
        decay = np.exp(-np.exp(np.minimum(log_x, _LOG_EXP_CUTOFF)))
        decay = np.where(log_x > _LOG_EXP_CUTOFF, 0.0, decay)
        return self.mu_d + (self.mu_s - self.mu_d) * decay


class ConstantLaw(BaseModel):
    """常数摩擦系数"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: Literal["constant"] = "constant"
    mu_value: float = Field(gt=0.0, alias="mu")

    @property
    def mu_min(self) -> float:
        return self.mu_value

    @property
    def mu_max(self) -> float:
        return self.mu_value

    def mu(self, v: float) -> float:
        return self.mu_value

    def mu_array(self, v: np.ndarray) -> np.ndarray:
        return np.full(np.shape(v), self.mu_value, dtype=float)


FrictionLaw = Annotated[Union[StribeckLaw, ConstantLaw], Field(discriminator="kind")]


class Regularization(BaseModel):
    """绝对值正则化 |y|_ε"""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(default=0.0, ge=0.0)
    form: Literal["smooth_sqrt", "exact"] = "smooth_sqrt"


def eval_mu(law: FrictionLaw, v_s: float | np.ndarray) -> float | np.ndarray:
    """计算摩擦系数 μ(v_s), 支持标量与数组"""
    if isinstance(v_s, np.ndarray):
        return law.mu_array(v_s)
    return law.mu(float(v_s))


def reg_abs(reg: Regularization, y: float | np.ndarray) -> float | np.ndarray:
    """正则化绝对值: SmoothSqrt 为 sqrt(y² + ε), Exact 为 |y|"""
    if isinstance(y, np.ndarray):
        if reg.form == "exact" or reg.epsilon == 0.0:
            return np.abs(y)
        return np.sqrt(y * y + reg.epsilon)
    if reg.form == "exact" or reg.epsilon == 0.0:
        return abs(y)
    return math.sqrt(y * y + reg.epsilon)


def sgn_eps(reg: Regularization, v: float | np.ndarray) -> float | np.ndarray:
    """正则化符号函数 v / |v|_ε, 分母为零时取 0"""
    den = reg_abs(reg, v)
    if isinstance(v, np.ndarray):
        out = np.zeros_like(v, dtype=float)
        np.divide(v, den, out=out, where=den > 0.0)
        return out
    return v / den if den > 0.0 else 0.0


class GMParams(BaseModel):
    """广义 Maxwell 元件参数: 主弹簧 k0 与 n 条 (k_i, τ_i) 分支"""

    model_config = ConfigDict(frozen=True)

    k0: float = Field(gt=0.0)
    k: Tuple[float, ...] = ()
    tau: Tuple[float, ...] = ()

    @field_validator("k", "tau")
    @classmethod
    def check_positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not (x > 0.0) for x in values):
            raise ValueError("分支参数必须全部为正")
        return values

    @model_validator(mode="after")
    def check_lengths(self) -> "GMParams":
        if len(self.k) != len(self.tau):
            raise ValueError(f"k 与 tau 长度不一致: {len(self.k)} != {len(self.tau)}")
        return self

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def k_arr(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    @property
    def inv_tau(self) -> np.ndarray:
        return 1.0 / np.asarray(self.tau, dtype=float)


class GKVParams(BaseModel):
    """广义 Kelvin-Voigt 元件参数: 主弹簧 k0 与 n 条 (k_i, c_i) 分支"""

    model_config = ConfigDict(frozen=True)

    k0: float = Field(gt=0.0)
    k: Tuple[float, ...] = ()
    c: Tuple[float, ...] = ()

    @field_validator("k", "c")
    @classmethod
    def check_positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not (x > 0.0) for x in values):
            raise ValueError("分支参数必须全部为正")
        return values

    @model_validator(mode="after")
    def check_lengths(self) -> "GKVParams":
        if len(self.k) != len(self.c):
            raise ValueError(f"k 与 c 长度不一致: {len(self.k)} != {len(self.c)}")
        return self

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def k_arr(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    @property
    def inv_c(self) -> np.ndarray:
        return 1.0 / np.asarray(self.c, dtype=float)


class SLSCanonical(BaseModel):
    """n=1 微分本构 f + γ₁ḟ = σ₀z + σ₁ż 的规范系数"""

    model_config = ConfigDict(frozen=True)

    sigma0: float = Field(gt=0.0)
    sigma1: float = Field(gt=0.0)
    gamma1: float = Field(gt=0.0)

    @model_validator(mode="after")
    def check_realizable(self) -> "SLSCanonical":
        if not self.sigma1 > self.gamma1 * self.sigma0:
            raise ValueError("需要 sigma1 > gamma1·sigma0 才能得到正的分支参数")
        return self


def _require_sls(n: int) -> None:
    if n != 1:
        raise ModelDimensionError(f"标准线性固体换算只支持 n=1, 实际 n={n}")


def gm_to_canonical_sls(p: GMParams) -> SLSCanonical:
    """GM(n=1) → 规范系数

    由 f = k̄₀z + f₁ 与 ḟ₁ = −f₁/τ₁ + k̄₁ż 消去 f₁:
    f + τ₁ḟ = k̄₀z + τ₁(k̄₀ + k̄₁)ż, 因此 σ₀ = k̄₀, σ₁ = τ₁(k̄₀+k̄₁), γ₁ = τ₁。
    """
    _require_sls(p.n)
    k1, tau1 = p.k[0], p.tau[0]
    return SLSCanonical(sigma0=p.k0, sigma1=tau1 * (p.k0 + k1), gamma1=tau1)


def gkv_to_canonical_sls(p: GKVParams) -> SLSCanonical:
    """GKV(n=1) → 规范系数

    由 f = k̄₀(z − z₁) 与 c̄₁ż₁ = −k̄₁z₁ + f 消去 z₁:
    (k̄₀+k̄₁)f + c̄₁ḟ = k̄₀k̄₁z + k̄₀c̄₁ż。
    """
    _require_sls(p.n)
    k1, c1 = p.k[0], p.c[0]
    total = p.k0 + k1
    return SLSCanonical(
        sigma0=p.k0 * k1 / total,
        sigma1=p.k0 * c1 / total,
        gamma1=c1 / total,
    )


def canonical_sls_to_gm(c: SLSCanonical) -> GMParams:
    """规范系数 → GM(n=1)"""
    k0 = c.sigma0
    k1 = c.sigma1 / c.gamma1 - c.sigma0
    if not (k0 > 0.0 and k1 > 0.0):
        raise ValueError(f"换算得到非正刚度: k0={k0}, k1={k1}")
    return GMParams(k0=k0, k=(k1,), tau=(c.gamma1,))


def canonical_sls_to_gm_stated(c: SLSCanonical) -> GMParams:
    """按 "σ₀ = k̄₁" 的字面对应换算 (k̄₁ = σ₀, k̄₀ = σ₁/γ₁ − σ₀, τ₁ = γ₁)

    瞬时刚度 k̄₀+k̄₁ 与 canonical_sls_to_gm 相同, 静刚度取 σ₁/γ₁ − σ₀。
    其正向换算不再复现 c, 仅用于对照实验。
    """
    k1 = c.sigma0
    k0 = c.sigma1 / c.gamma1 - c.sigma0
    if not (k0 > 0.0 and k1 > 0.0):
        raise ValueError(f"换算得到非正刚度: k0={k0}, k1={k1}")
    return GMParams(k0=k0, k=(k1,), tau=(c.gamma1,))


def canonical_sls_to_gkv(c: SLSCanonical) -> GKVParams:
    """规范系数 → GKV(n=1)"""
    k0 = c.sigma1 / c.gamma1
    den = k0 - c.sigma0
    if not den > 0.0:
        raise ValueError("需要 sigma1/gamma1 > sigma0")
    k1 = c.sigma0 * k0 / den
    c1 = c.gamma1 * (k0 + k1)
    if not (k0 > 0.0 and k1 > 0.0 and c1 > 0.0):
        raise ValueError(f"换算得到非正参数: k0={k0}, k1={k1}, c1={c1}")
    return GKVParams(k0=k0, k=(k1,), c=(c1,))
