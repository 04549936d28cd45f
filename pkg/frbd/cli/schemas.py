"""
运行配置模式

配置文件中每个 `section.key` 对应下面一个分节模型的字段。
所有分节 extra="forbid": 未知键即错误。
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from frbd.models.friction import (
    ConstantLaw,
    GKVParams,
    GMParams,
    Regularization,
    SLSCanonical,
    StribeckLaw,
    canonical_sls_to_gkv,
    canonical_sls_to_gm,
    canonical_sls_to_gm_stated,
)
from frbd.models.viscoelastic import FrBDModel
from frbd.services.arm_control import (
    ArmInitialConditions,
    ArmPlant,
    ConstantReference,
    ControllerGains,
    QuinticReference,
    SinusoidReference,
)
from frbd.services.integrator import (
    CompositeSignal,
    ConstantSignal,
    SampledSignal,
    SinusoidSignal,
    SolverConfig,
)

COMMANDS = ("simulate", "presliding", "lag", "arm", "calibrate", "steady-sweep", "audit")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        return tuple(p for p in parts if p)
    return value


def _split_pairs(value: Any) -> Any:
    """解析 "name:a:b, name2:c:d" 或 "name:a, ..." 形式"""
    if not isinstance(value, str):
        return value
    out: Dict[str, Any] = {}
    for item in _split_list(value):
        name, *nums = [s.strip() for s in item.split(":")]
        if not name or not nums:
            raise ValueError(f"无法解析 '{item}', 期望 name:value 或 name:lo:hi")
        out[name] = tuple(nums) if len(nums) > 1 else nums[0]
    return out


FloatList = Annotated[Tuple[float, ...], BeforeValidator(_split_list)]
StrList = Annotated[Tuple[str, ...], BeforeValidator(_split_list)]
BoundsMap = Annotated[Dict[str, Tuple[float, float]], BeforeValidator(_split_pairs)]
ValueMap = Annotated[Dict[str, float], BeforeValidator(_split_pairs)]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _resolve_existing(value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    if value is None:
        return None
    base = (info.context or {}).get("base_dir") if info.context else None
    path = value if value.is_absolute() or base is None else Path(base) / value
    if not path.exists():
        raise ValueError(f"文件不存在: {path}")
    return path


# ==================== 模型分节 ====================


class ModelSection(Section):
    """model.*: 流变类型、参数、摩擦律、正则化、法向力"""

    rheology: Literal["gm", "gkv", "canonical"] = "gm"
    k0: Optional[float] = Field(default=None, gt=0.0)
    k: FloatList = ()
    tau: FloatList = ()
    c: FloatList = ()
    sigma0: Optional[float] = Field(default=None, gt=0.0)
    sigma1: Optional[float] = Field(default=None, gt=0.0)
    gamma1: Optional[float] = Field(default=None, gt=0.0)
    target: Literal["gm", "gkv"] = "gm"
    assignment: Literal["derived", "stated"] = "derived"
    law: Literal["stribeck", "constant"] = "stribeck"
    mu_d: Optional[float] = Field(default=None, gt=0.0)
    mu_s: Optional[float] = Field(default=None, gt=0.0)
    v_s: Optional[float] = Field(default=None, ge=0.0)
    delta: Optional[float] = Field(default=None, ge=0.0)
    mu: Optional[float] = Field(default=None, gt=0.0)
    epsilon: float = Field(default=0.0, ge=0.0)
    regularization: Literal["smooth_sqrt", "exact"] = "smooth_sqrt"
    p: float = Field(default=1.0, gt=0.0)

    @field_validator("k", "tau", "c")
    @classmethod
    def check_positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not (x > 0.0) for x in values):
            raise ValueError("所有分支参数必须为正")
        return values

    @model_validator(mode="after")
    def check_buildable(self) -> "ModelSection":
        try:
            self.build()
        except ValidationError as exc:
            raise ValueError("; ".join(e["msg"] for e in exc.errors())) from None
        return self

    def build_rheology(self) -> GMParams | GKVParams:
        if self.rheology == "canonical":
            if None in (self.sigma0, self.sigma1, self.gamma1):
                raise ValueError("canonical 需要 sigma0, sigma1, gamma1")
            canon = SLSCanonical(sigma0=self.sigma0, sigma1=self.sigma1, gamma1=self.gamma1)
            if self.target == "gkv":
                return canonical_sls_to_gkv(canon)
            if self.assignment == "stated":
                return canonical_sls_to_gm_stated(canon)
            return canonical_sls_to_gm(canon)
        if self.k0 is None:
            raise ValueError(f"{self.rheology} 需要 k0")
        if self.rheology == "gm":
            return GMParams(k0=self.k0, k=self.k, tau=self.tau)
        return GKVParams(k0=self.k0, k=self.k, c=self.c)

    def build_law(self) -> StribeckLaw | ConstantLaw:
        if self.law == "constant":
            if self.mu is None:
                raise ValueError("constant 摩擦律需要 mu")
            return ConstantLaw(mu=self.mu)
        missing = [n for n in ("mu_d", "mu_s", "v_s", "delta") if getattr(self, n) is None]
        if missing:
            raise ValueError(f"stribeck 摩擦律缺少: {missing}")
        return StribeckLaw(mu_d=self.mu_d, mu_s=self.mu_s, v_s=self.v_s, delta=self.delta)

    def build(self) -> FrBDModel:
        return FrBDModel(
            rheology=self.build_rheology(),
            law=self.build_law(),
            reg=Regularization(epsilon=self.epsilon, form=self.regularization),
            p=self.p,
        )


# ==================== 命令分节 ====================


class InputSection(Section):
    """input.*: simulate 命令的速度输入"""

    kind: Literal["constant", "sinusoid", "multisine", "sampled"] = "constant"
    value: float = 0.0
    bias: float = 0.0
    amplitude: float = 0.0
    freq: float = Field(default=1.0, ge=0.0)
    phase: float = 0.0
    amplitudes: FloatList = ()
    freqs: FloatList = ()
    phases: FloatList = ()
    file: Optional[Path] = None

    @field_validator("file")
    @classmethod
    def check_file(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        return _resolve_existing(value, info)

    @model_validator(mode="after")
    def check_kind(self) -> "InputSection":
        if self.kind == "sampled" and self.file is None:
            raise ValueError("sampled 输入需要 input.file")
        if self.kind == "multisine":
            if not self.amplitudes or len(self.amplitudes) != len(self.freqs):
                raise ValueError("multisine 需要等长的 amplitudes 与 freqs")
            if self.phases and len(self.phases) != len(self.freqs):
                raise ValueError("phases 长度必须与 freqs 相同")
        return self

    def build(self) -> ConstantSignal | SinusoidSignal | SampledSignal | CompositeSignal:
        if self.kind == "constant":
            return ConstantSignal(value=self.value)
        if self.kind == "sinusoid":
            return SinusoidSignal(bias=self.bias, amplitude=self.amplitude, freq=self.freq, phase=self.phase)
        if self.kind == "multisine":
            phases = self.phases or (0.0,) * len(self.freqs)
            parts = [ConstantSignal(value=self.bias)] + [
                SinusoidSignal(amplitude=a, freq=f, phase=ph)
                for a, f, ph in zip(self.amplitudes, self.freqs, phases)
            ]
            return CompositeSignal(parts=tuple(parts))

        df = pd.read_csv(self.file, float_precision="round_trip")
        return SampledSignal(times=tuple(df["t"].to_numpy(float)), values=tuple(df["v"].to_numpy(float)))


class SimulateSection(Section):
    """simulate.*"""

    initial: Literal["zero", "steady_state", "given"] = "zero"
    v0: Optional[float] = None
    x0: Optional[FloatList] = None
    v_bound: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def check_x0(self) -> "SimulateSection":
        if self.initial == "given" and not self.x0:
            raise ValueError("simulate.initial = given 需要 simulate.x0")
        return self


class PreSlidingSection(Section):
    """presliding.*"""

    mass: float = Field(default=1.0, gt=0.0)
    force_ratio: float = Field(default=0.9, gt=0.0, lt=1.0)
    freqs: FloatList = (1.0, 5.0, 10.0)
    cycles: int = Field(default=5, ge=4)
    drift_tol: float = Field(default=0.01, gt=0.0)


class LagSection(Section):
    """lag.*"""

    v_bias: float = 0.02
    v_amp: float = Field(default=2e-4, ge=0.0)
    freqs: FloatList = (25.0, 50.0, 100.0)
    cycles: int = Field(default=5, ge=4)
    v_s_sweep: FloatList = ()
    sweep_freq: Optional[float] = Field(default=None, gt=0.0)


class ArmSection(Section):
    """arm.*: 摆杆对象、增益、参考、初值"""

    inertia: float = Field(default=1.0, gt=0.0)
    mass: float = Field(default=1.0, ge=0.0)
    length: float = Field(default=0.5, ge=0.0)
    g0: float = 9.81
    coriolis_c0: float = 0.0
    r: float = Field(default=0.05, gt=0.0)
    lam: float = Field(default=5.0, gt=0.0)
    k1: float = Field(default=10.0, gt=0.0)
    k2: float = Field(default=100.0, gt=0.0)
    reference: Literal["constant", "sinusoid", "quintic"] = "sinusoid"
    ref_value: float = 0.0
    ref_offset: float = 0.0
    ref_amplitude: float = 0.2
    ref_freq: float = Field(default=0.2, ge=0.0)
    ref_phase: float = 0.0
    ref_times: FloatList = ()
    ref_points: FloatList = ()
    horizon: float = Field(default=20.0, gt=0.0)
    q0: Optional[float] = None
    qd0: Optional[float] = None
    z0: Optional[FloatList] = None
    z_hat0: Optional[FloatList] = None
    error_bound: float = Field(default=1e-3, gt=0.0)
    track_error_system: bool = False

    def build_plant(self, friction: FrBDModel) -> ArmPlant:
        return ArmPlant(
            inertia=self.inertia, mass=self.mass, length=self.length, g0=self.g0,
            coriolis_c0=self.coriolis_c0, r=self.r, friction=friction,
        )

    def build_gains(self) -> ControllerGains:
        return ControllerGains(lam=self.lam, k1=self.k1, k2=self.k2)

    def build_reference(self) -> ConstantReference | SinusoidReference | QuinticReference:
        if self.reference == "constant":
            return ConstantReference(value=self.ref_value)
        if self.reference == "sinusoid":
            return SinusoidReference(
                offset=self.ref_offset, amplitude=self.ref_amplitude, freq=self.ref_freq, phase=self.ref_phase
            )
        return QuinticReference(times=self.ref_times, points=self.ref_points)

    def build_initial(self) -> ArmInitialConditions:
        return ArmInitialConditions(q0=self.q0, qd0=self.qd0, z0=self.z0, z_hat0=self.z_hat0)

    @model_validator(mode="after")
    def check_reference(self) -> "ArmSection":
        try:
            self.build_reference()
        except ValidationError as exc:
            raise ValueError("; ".join(e["msg"] for e in exc.errors())) from None
        return self


class CalibrateSection(Section):
    """calibrate.*"""

    data: Path
    free: StrList = ("k0", "k1", "tau1")
    bounds: BoundsMap = Field(default_factory=dict)
    initial: ValueMap = Field(default_factory=dict)
    x0_policy: Literal["zero", "steady_state"] = "steady_state"
    noise: float = Field(default=0.0, ge=0.0)

    @field_validator("data")
    @classmethod
    def check_data(cls, value: Path, info: ValidationInfo) -> Path:
        return _resolve_existing(value, info)


class SweepSection(Section):
    """sweep.*: 稳态扫描速度网格"""

    v_min: float = Field(default=1e-4, gt=0.0)
    v_max: float = Field(default=1.0, gt=0.0)
    points: int = Field(default=41, ge=2)
    spacing: Literal["linear", "log"] = "log"
    symmetric: bool = True

    @model_validator(mode="after")
    def check_range(self) -> "SweepSection":
        if self.v_max <= self.v_min:
            raise ValueError("需要 v_max > v_min")
        return self

    def velocities(self) -> np.ndarray:
        if self.spacing == "log":
            pos = np.geomspace(self.v_min, self.v_max, self.points)
        else:
            pos = np.linspace(self.v_min, self.v_max, self.points)
        if not self.symmetric:
            return pos
        return np.concatenate((-pos[::-1], [0.0], pos))


class AuditSection(Section):
    """audit.*: 对已有轨迹文件的离线审计"""

    trajectory: Path
    v_bound: Optional[float] = Field(default=None, gt=0.0)
    c: float = Field(default=1.0, gt=0.0)
    rtol: float = Field(default=1e-4, ge=0.0, lt=1.0)
    dissipation_tol: float = Field(default=1e-6, gt=0.0)

    @field_validator("trajectory")
    @classmethod
    def check_trajectory(cls, value: Path, info: ValidationInfo) -> Path:
        return _resolve_existing(value, info)


class OutputSection(Section):
    """output.*"""

    dir: Optional[str] = None
    channels: StrList = ()


class RunSection(Section):
    """run.*"""

    command: Optional[Literal["simulate", "presliding", "lag", "arm", "calibrate", "steady-sweep", "audit"]] = None
    seed: Optional[int] = None
    label: str = ""


class RunConfig(BaseModel):
    """完整运行配置"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Literal["simulate", "presliding", "lag", "arm", "calibrate", "steady-sweep", "audit"]
    model: Optional[ModelSection] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    input: InputSection = Field(default_factory=InputSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    presliding: PreSlidingSection = Field(default_factory=PreSlidingSection)
    lag: LagSection = Field(default_factory=LagSection)
    arm: ArmSection = Field(default_factory=ArmSection)
    calibrate: Optional[CalibrateSection] = None
    sweep: SweepSection = Field(default_factory=SweepSection)
    audit: Optional[AuditSection] = None
    output: OutputSection = Field(default_factory=OutputSection)
    run: RunSection = Field(default_factory=RunSection)

    @model_validator(mode="after")
    def check_command_sections(self) -> "RunConfig":
        if self.command != "audit" and self.model is None:
            raise ValueError(f"命令 {self.command} 需要 model 分节")
        if self.command == "calibrate" and self.calibrate is None:
            raise ValueError("calibrate 命令需要 calibrate.data")
        if self.command == "audit" and self.audit is None:
            raise ValueError("audit 命令需要 audit.trajectory")
        if self.command == "lag" and not self.lag.v_bias > self.lag.v_amp:
            raise ValueError("lag: 需要 v_bias > v_amp 以保证单向运动")
        sweeps_v_s = self.command == "lag" and bool(self.lag.v_s_sweep)
        if sweeps_v_s and self.model is not None and self.model.law != "stribeck":
            raise ValueError("lag.v_s_sweep 需要 model.law = stribeck")
        if self.command == "simulate" and self.model is not None and self.simulate.x0 is not None:
            dim = self.model.build().dim
            if len(self.simulate.x0) != dim:
                raise ValueError(f"simulate.x0 维度 {len(self.simulate.x0)} 与摩擦状态维度 {dim} 不一致")
        if self.command == "arm" and self.model is not None:
            dim = self.model.build().dim
            for name in ("z0", "z_hat0"):
                values = getattr(self.arm, name)
                if values is not None and len(values) != dim:
                    raise ValueError(f"arm.{name} 维度 {len(values)} 与摩擦状态维度 {dim} 不一致")
        return self

    def friction_model(self) -> FrBDModel:
        if self.model is None:
            raise ValueError("配置缺少 model 分节")
        return self.model.build()

    def section_keys(self) -> List[str]:
        return [name for name in type(self).model_fields if name != "command"]
