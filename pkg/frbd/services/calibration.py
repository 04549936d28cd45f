"""
参数辨识

以单次打靶 (整条轨迹一次积分) 的非线性最小二乘拟合 FrBD 模型参数:
有界 Levenberg-Marquardt, 正参数在对数空间中迭代, 中心差分雅可比。
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from frbd.core.config import settings
from frbd.core.exceptions import FrBDError, MissingChannelError, NumericalFailure
from frbd.core.logging import calibration_logger
from frbd.models.friction import ConstantLaw, GMParams, GKVParams, StribeckLaw
from frbd.models.viscoelastic import FrBDModel, compile_rhs, force_series, steady_state
from frbd.services.integrator import SolverConfig, integrate


X0Policy = Literal["zero", "steady_state"]

# 终止条件
GTOL = 1e-8
XTOL = 1e-10
FTOL = 1e-14
MAX_ITER = 200
FD_STEP = 1e-6
LAMBDA_INIT = 1e-3
LAMBDA_MAX = 1e16
COND_LIMIT = 1e10


# ==================== 参数命名 ====================


def parameter_names(m: FrBDModel) -> List[str]:
    """模型可辨识参数名: k0, k1..kn, tau1..taun 或 c1..cn, 以及摩擦律参数"""
    n = m.n
    names = ["k0"] + [f"k{i}" for i in range(1, n + 1)]
    names += [f"tau{i}" for i in range(1, n + 1)] if m.is_gm else [f"c{i}" for i in range(1, n + 1)]
    if isinstance(m.law, StribeckLaw):
        names += ["mu_d", "mu_s", "v_s", "delta"]
    else:
        names += ["mu"]
    return names


def get_params(m: FrBDModel) -> Dict[str, float]:
    rh = m.rheology
    out: Dict[str, float] = {"k0": rh.k0}
    for i, k in enumerate(rh.k, start=1):
        out[f"k{i}"] = k
    branch = rh.tau if m.is_gm else rh.c
    prefix = "tau" if m.is_gm else "c"
    for i, b in enumerate(branch, start=1):
        out[f"{prefix}{i}"] = b
    law = m.law
    if isinstance(law, StribeckLaw):
        out.update(mu_d=law.mu_d, mu_s=law.mu_s, v_s=law.v_s, delta=law.delta)
    else:
        out["mu"] = law.mu_value
    return out


def with_params(m: FrBDModel, values: Mapping[str, float]) -> FrBDModel:
    """返回替换了指定参数的新模型 (经过完整校验)"""
    unknown = set(values) - set(parameter_names(m))
    if unknown:
        raise KeyError(f"未知参数: {sorted(unknown)}")
    cur = get_params(m)
    cur.update({k: float(v) for k, v in values.items()})
    n = m.n
    ks = tuple(cur[f"k{i}"] for i in range(1, n + 1))
    if m.is_gm:
        rheology = GMParams(k0=cur["k0"], k=ks, tau=tuple(cur[f"tau{i}"] for i in range(1, n + 1)))
    else:
        rheology = GKVParams(k0=cur["k0"], k=ks, c=tuple(cur[f"c{i}"] for i in range(1, n + 1)))
    if isinstance(m.law, StribeckLaw):
        law = StribeckLaw(mu_d=cur["mu_d"], mu_s=cur["mu_s"], v_s=cur["v_s"], delta=cur["delta"])
    else:
        law = ConstantLaw(mu=cur["mu"])
    return FrBDModel(rheology=rheology, law=law, reg=m.reg, p=m.p)


# ==================== 问题与结果 ====================


@dataclass(frozen=True)
class FitProblem:
    """拟合问题: 数据轨迹、模型模板、自由参数与边界"""

    t: np.ndarray
    v: np.ndarray
    pf: np.ndarray
    model: FrBDModel
    free_params: Tuple[str, ...]
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(dt=1e-4))
    x0_policy: X0Policy = "steady_state"

    def __post_init__(self) -> None:
        if not (len(self.t) == len(self.v) == len(self.pf)) or len(self.t) < 2:
            raise ValueError("t, v, pf 长度必须相同且至少为 2")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("数据时间必须严格递增")
        names = set(parameter_names(self.model))
        for name in self.free_params:
            if name not in names:
                raise ValueError(f"未知自由参数 '{name}', 可选: {sorted(names)}")
        for name, (lo, hi) in self.bounds.items():
            if not (0.0 < lo < hi):
                raise ValueError(f"参数 '{name}' 的边界必须满足 0 < lo < hi, 实际 ({lo}, {hi})")

    def bounds_for(self, name: str) -> Tuple[float, float]:
        return self.bounds.get(name, (1e-12, 1e12))


@dataclass
class FitResult:
    """拟合结果"""

    params: Dict[str, float]
    rmse: float
    iterations: int
    converged: bool
    covariance_proxy: Dict[str, float]
    ill_conditioned: bool
    reason: str
    rmse_history: List[float] = field(default_factory=list)


# ==================== 打靶与残差 ====================


def simulate_trace(
    m: FrBDModel,
    t: np.ndarray,
    v: np.ndarray,
    solver: SolverConfig,
    x0_policy: X0Policy = "steady_state",
) -> np.ndarray:
    """以线性插值的 v(·) 驱动模型, 返回数据时刻上的 pf"""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    x0 = steady_state(m, float(v[0]))[1] if x0_policy == "steady_state" else np.zeros(m.dim)
    model_rhs = compile_rhs(m)

    def u(tt: float) -> float:
        return float(np.interp(tt, t, v))

    traj = integrate(lambda tt, x, ut: model_rhs(x, ut), x0, u, solver.with_span(float(t[0]), float(t[-1])))
    pf = m.p * force_series(m, traj.states)
    return np.interp(t, traj.t, pf)


def residual(problem: FitProblem, params: Mapping[str, float]) -> np.ndarray:
    """r_k = pf_sim(t_k) − pf_data(t_k)"""
    for name, value in params.items():
        lo, hi = problem.bounds_for(name)
        if not lo <= value <= hi:
            raise ValueError(f"参数 {name}={value} 超出边界 [{lo}, {hi}]")
    m = with_params(problem.model, params)
    pf_sim = simulate_trace(m, problem.t, problem.v, problem.solver, problem.x0_policy)
    r = pf_sim - problem.pf
    if not np.all(np.isfinite(r)):
        raise NumericalFailure("残差出现非有限值")
    return r


def _theta_residual(args: Tuple[FitProblem, np.ndarray]) -> np.ndarray:
    problem, theta = args
    values = {}
    for name, th in zip(problem.free_params, theta):
        lo, hi = problem.bounds_for(name)
        values[name] = min(max(math.exp(th), lo), hi)
    return residual(problem, values)


def _jacobian(problem: FitProblem, theta: np.ndarray, lo: np.ndarray, hi: np.ndarray,
              r0: np.ndarray, workers: int) -> np.ndarray:
    """对数空间中心差分雅可比 (靠近边界时改为单侧差分)"""
    tasks: List[Tuple[FitProblem, np.ndarray]] = []
    steps: List[Tuple[float, bool, bool]] = []
    for j in range(len(theta)):
        h = FD_STEP
        up_ok = theta[j] + h <= hi[j]
        dn_ok = theta[j] - h >= lo[j]
        tp = theta.copy()
        tm = theta.copy()
        if up_ok:
            tp[j] += h
        if dn_ok:
            tm[j] -= h
        tasks.extend([(problem, tp), (problem, tm)])
        steps.append((h, up_ok, dn_ok))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_theta_residual, tasks))
    else:
        results = [_theta_residual(task) for task in tasks]

    J = np.empty((len(r0), len(theta)))
    for j, (h, up_ok, dn_ok) in enumerate(steps):
        rp, rm = results[2 * j], results[2 * j + 1]
        span = (h if up_ok else 0.0) + (h if dn_ok else 0.0)
        if span == 0.0:
            J[:, j] = 0.0
        else:
            J[:, j] = ((rp if up_ok else r0) - (rm if dn_ok else r0)) / span
    return J


def _covariance_proxy(J: np.ndarray, data_scale: float) -> Tuple[np.ndarray, bool]:
    """(JᵀJ)⁻¹ 对角元; 病态或秩亏时对应方向记为 inf

    列范数低于 1e-9·max|pf|·√N 的参数视为数据对其不敏感。
    """
    A = J.T @ J
    diag = np.diag(A)
    scale = float(np.max(diag)) if diag.size else 0.0
    floor = (1e-9 * data_scale) ** 2 * J.shape[0]
    null = (diag <= 1e-12 * max(scale, 1e-300)) | (diag <= floor)
    if scale <= 0.0 or np.all(null):
        return np.full(len(diag), np.inf), True
    cond = float(np.linalg.cond(A))
    ill = bool(np.any(null) or not np.isfinite(cond) or cond > COND_LIMIT)
    cov = np.diag(np.linalg.pinv(A))
    cov = np.where(null, np.inf, cov)
    if ill:
        cov = np.where(np.isfinite(cov) & (cov > 0.0), cov, np.inf)
    return cov, ill


def fit(problem: FitProblem, initial: Optional[Mapping[str, float]] = None, workers: Optional[int] = None) -> FitResult:
    """有界 Levenberg-Marquardt 拟合

    终止: 梯度范数 < 1e-8, 步长范数 < 1e-10, 相对代价下降 < 1e-14, 或 200 次迭代。
    不收敛只通过结果中的标志报告, 不抛异常。
    """
    n_workers = settings.MAX_WORKERS if workers is None else workers
    names = problem.free_params
    start = get_params(problem.model)
    if initial:
        start.update(initial)

    if not names:
        r = residual(problem, {})
        rmse = float(np.sqrt(np.mean(r * r)))
        return FitResult(
            params={}, rmse=rmse, iterations=0, converged=True, covariance_proxy={},
            ill_conditioned=False, reason="no free parameters", rmse_history=[rmse],
        )

    lo = np.log([problem.bounds_for(nm)[0] for nm in names])
    hi = np.log([problem.bounds_for(nm)[1] for nm in names])
    theta = np.clip(np.log([start[nm] for nm in names]), lo, hi)

    def evaluate(th: np.ndarray) -> Optional[np.ndarray]:
        try:
            return _theta_residual((problem, th))
        except (FrBDError, ValueError) as exc:
            calibration_logger.debug("试探点求值失败: %s", exc)
            return None

    r = evaluate(theta)
    if r is None:
        calibration_logger.warning("初始参数下仿真失败, 不进行迭代")
        return FitResult(
            params={nm: float(math.exp(th)) for nm, th in zip(names, theta)},
            rmse=math.inf,
            iterations=0,
            converged=False,
            covariance_proxy={nm: math.inf for nm in names},
            ill_conditioned=True,
            reason="initial simulation failed",
        )
    cost = 0.5 * float(r @ r)
    history = [math.sqrt(2.0 * cost / len(r))]
    lam = LAMBDA_INIT
    iterations = 0
    converged = False
    reason = "max iterations"
    J = _jacobian(problem, theta, lo, hi, r, n_workers)

    while iterations < MAX_ITER:
        g = J.T @ r
        if float(np.linalg.norm(g)) < GTOL:
            converged, reason = True, "gradient"
            break
        A = J.T @ J
        damping = np.maximum(np.diag(A), 1e-12 * max(float(np.max(np.diag(A))), 1e-300))
        accepted = False
        small_step = False
        while lam <= LAMBDA_MAX:
            try:
                delta = np.linalg.solve(A + lam * np.diag(damping), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            theta_new = np.clip(theta + delta, lo, hi)
            step = float(np.linalg.norm(theta_new - theta))
            if step < XTOL:
                small_step = True
                break
            r_new = evaluate(theta_new)
            cost_new = 0.5 * float(r_new @ r_new) if r_new is not None else math.inf
            if cost_new < cost:
                rel_drop = (cost - cost_new) / cost if cost > 0.0 else 0.0
                theta, r, cost = theta_new, r_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if small_step:
            converged, reason = True, "step"
            break
        if not accepted:
            reason = "damping limit"
            break
        iterations += 1
        history.append(math.sqrt(2.0 * cost / len(r)))
        calibration_logger.debug("LM 第 %d 次迭代: rmse=%.6e, λ=%.1e", iterations, history[-1], lam)
        if rel_drop < FTOL:
            converged, reason = True, "cost"
            break
        J = _jacobian(problem, theta, lo, hi, r, n_workers)

    cov, ill = _covariance_proxy(J, float(np.max(np.abs(problem.pf))))
    params = dict(zip(names, (float(x) for x in np.exp(theta))))
    # 确保落在边界内 (exp/log 往返的舍入)
    for nm in names:
        b_lo, b_hi = problem.bounds_for(nm)
        params[nm] = min(max(params[nm], b_lo), b_hi)
    result = FitResult(
        params=params,
        rmse=history[-1],
        iterations=iterations,
        converged=converged,
        covariance_proxy=dict(zip(names, (float(c) for c in cov))),
        ill_conditioned=ill,
        reason=reason,
        rmse_history=history,
    )
    calibration_logger.info(
        "拟合结束: %s, 迭代 %d 次, rmse=%.4e, 收敛=%s, 病态=%s",
        reason, iterations, result.rmse, converged, ill,
    )
    return result


def load_trace(path: str | Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """读取含 t, v, pf 三列的数据 CSV"""
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("t", "v", "pf") if c not in df.columns]
    if missing:
        raise MissingChannelError(f"{path} 缺少列: {missing}")
    return (
        df["t"].to_numpy(dtype=float),
        df["v"].to_numpy(dtype=float),
        df["pf"].to_numpy(dtype=float),
    )


def fitted_model(problem: FitProblem, result: FitResult) -> FrBDModel:
    return with_params(problem.model, result.params)


def noisy_trace(pf: np.ndarray, level: float, seed: int) -> np.ndarray:
    """叠加高斯噪声, 标准差为 level·max|pf|"""
    rng = np.random.default_rng(seed)
    return pf + level * float(np.max(np.abs(pf))) * rng.standard_normal(len(pf))
