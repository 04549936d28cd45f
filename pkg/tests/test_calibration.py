"""
参数辨识测试
"""

import numpy as np
import pandas as pd
import pytest

from frbd.core.exceptions import MissingChannelError
from frbd.models.friction import ConstantLaw, GMParams
from frbd.models.viscoelastic import FrBDModel
from frbd.services.calibration import (
    FitProblem,
    fit,
    fitted_model,
    get_params,
    load_trace,
    noisy_trace,
    parameter_names,
    residual,
    simulate_trace,
    with_params,
)
from frbd.services.integrator import SolverConfig

SOLVER = SolverConfig(dt=1e-4)


def _excitation(duration: float = 0.3, n: int = 601):
    t = np.linspace(0.0, duration, n)
    return t, 0.05 * np.sin(2.0 * np.pi * 10.0 * t)


class TestParameters:
    def test_names_gm_stribeck(self, table1_gm):
        assert parameter_names(table1_gm) == ["k0", "k1", "tau1", "mu_d", "mu_s", "v_s", "delta"]

    def test_names_gkv_constant(self):
        from frbd.models.friction import GKVParams

        m = FrBDModel(rheology=GKVParams(k0=1.0, k=(2.0,), c=(0.5,)), law=ConstantLaw(mu=0.3))
        assert parameter_names(m) == ["k0", "k1", "c1", "mu"]

    def test_get_params(self, table1_gm):
        params = get_params(table1_gm)
        assert params["k0"] == pytest.approx(1e4)
        assert params["k1"] == pytest.approx(54500.0)
        assert params["mu_s"] == 1.5

    def test_with_params_replaces_values(self, table1_gm):
        m = with_params(table1_gm, {"k1": 2e4, "mu_d": 0.9})
        assert m.rheology.k[0] == 2e4
        assert m.law.mu_d == 0.9
        assert m.rheology.tau == table1_gm.rheology.tau

    def test_with_params_unknown_name(self, table1_gm):
        with pytest.raises(KeyError):
            with_params(table1_gm, {"c1": 1.0})


class TestProblem:
    def test_unknown_free_parameter(self, table1_gm):
        t, v = _excitation()
        with pytest.raises(ValueError):
            FitProblem(t=t, v=v, pf=np.zeros_like(t), model=table1_gm, free_params=("sigma0",))

    def test_bounds_must_be_positive_and_ordered(self, table1_gm):
        t, v = _excitation()
        with pytest.raises(ValueError):
            FitProblem(t=t, v=v, pf=np.zeros_like(t), model=table1_gm, free_params=("k0",),
                       bounds={"k0": (2.0, 1.0)})
        with pytest.raises(ValueError):
            FitProblem(t=t, v=v, pf=np.zeros_like(t), model=table1_gm, free_params=("k0",),
                       bounds={"k0": (0.0, 1.0)})

    def test_times_must_increase(self, table1_gm):
        t = np.array([0.0, 0.1, 0.1])
        with pytest.raises(ValueError):
            FitProblem(t=t, v=np.zeros(3), pf=np.zeros(3), model=table1_gm, free_params=())

    def test_residual_outside_bounds(self, table1_gm):
        t, v = _excitation(0.01, 11)
        problem = FitProblem(t=t, v=v, pf=np.zeros_like(t), model=table1_gm, free_params=("k0",),
                             bounds={"k0": (1.0, 10.0)}, solver=SOLVER)
        with pytest.raises(ValueError):
            residual(problem, {"k0": 1e4})

    def test_empty_free_set_reports_rmse(self, table1_gm):
        t, v = _excitation(0.05, 101)
        pf = simulate_trace(table1_gm, t, v, SOLVER, "zero")
        problem = FitProblem(t=t, v=v, pf=pf, model=table1_gm, free_params=(), solver=SOLVER, x0_policy="zero")
        result = fit(problem, workers=1)
        assert result.converged
        assert result.iterations == 0
        assert result.params == {}
        assert result.rmse == pytest.approx(0.0, abs=1e-12)

    def test_initial_failure_reports_not_converged(self, table1_gm):
        t, v = _excitation(0.05, 101)
        # 步数上限过小, 初始仿真即失败
        solver = SolverConfig(dt=1e-4, max_steps=10)
        problem = FitProblem(t=t, v=v, pf=np.zeros_like(t), model=table1_gm, free_params=("k0",), solver=solver)
        result = fit(problem, workers=1)
        assert not result.converged
        assert result.reason == "initial simulation failed"
        assert result.iterations == 0
        assert result.rmse == float("inf")
        assert result.params["k0"] == pytest.approx(1e4)
        assert result.covariance_proxy["k0"] == float("inf")


class TestTraceIO:
    def test_load_trace(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({"t": [0.0, 0.1], "v": [0.1, 0.2], "pf": [0.5, 0.6], "z": [1.0, 2.0]}).to_csv(path, index=False)
        t, v, pf = load_trace(path)
        np.testing.assert_array_equal(t, [0.0, 0.1])
        np.testing.assert_array_equal(pf, [0.5, 0.6])

    def test_missing_column(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({"t": [0.0, 0.1], "v": [0.1, 0.2]}).to_csv(path, index=False)
        with pytest.raises(MissingChannelError):
            load_trace(path)

    def test_noise_is_seeded(self):
        pf = np.linspace(-1.0, 2.0, 50)
        a = noisy_trace(pf, 0.01, seed=7)
        b = noisy_trace(pf, 0.01, seed=7)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, noisy_trace(pf, 0.01, seed=8))
        assert np.std(a - pf) < 0.05


@pytest.mark.slow
class TestRecovery:
    @pytest.fixture(scope="class")
    def synthetic(self):
        from tests.conftest import TABLE1_LAW

        truth = FrBDModel(rheology=GMParams(k0=1e4, k=(54500.0,), tau=(1e-3,)), law=TABLE1_LAW)
        t, v = _excitation()
        pf = simulate_trace(truth, t, v, SOLVER, "zero")
        return truth, t, v, pf

    def test_recovers_rheology_within_one_percent(self, synthetic):
        truth, t, v, pf = synthetic
        start = with_params(truth, {"k0": 1.05e4, "k1": 0.95 * 54500.0, "tau1": 1.05e-3})
        problem = FitProblem(t=t, v=v, pf=pf, model=start, free_params=("k0", "k1", "tau1"),
                             solver=SOLVER, x0_policy="zero")
        result = fit(problem, workers=1)
        assert result.converged
        for name, value in get_params(truth).items():
            if name in result.params:
                assert result.params[name] == pytest.approx(value, rel=0.01)
        assert result.rmse < 1e-3 * np.max(np.abs(pf))
        assert result.rmse_history[-1] <= result.rmse_history[0]
        assert not result.ill_conditioned
        assert fitted_model(problem, result).rheology.k0 == pytest.approx(1e4, rel=0.01)

    def test_insensitive_parameter_flagged(self, synthetic):
        # v 始终远大于 v_S, μ 对 δ 不敏感
        truth, t, _, _ = synthetic
        fast = 0.2 + 0.04 * np.sin(2.0 * np.pi * 10.0 * t)
        pf_fast = simulate_trace(truth, t, fast, SOLVER, "zero")
        problem = FitProblem(t=t, v=fast, pf=pf_fast, model=truth, free_params=("delta",),
                             solver=SOLVER, x0_policy="zero")
        result = fit(problem, workers=1)
        assert result.ill_conditioned
        assert result.covariance_proxy["delta"] == float("inf")

    def test_noiseless_self_fit_stops_immediately(self, synthetic):
        truth, t, v, pf = synthetic
        problem = FitProblem(t=t, v=v, pf=pf, model=truth, free_params=("k0", "k1", "tau1"),
                             solver=SOLVER, x0_policy="zero")
        result = fit(problem, workers=1)
        assert result.converged
        assert result.iterations <= 2
        assert result.rmse < 1e-9 * np.max(np.abs(pf))

    def test_recovers_rheology_from_noisy_trace(self, synthetic):
        truth = synthetic[0]
        t, v = _excitation(0.3, 3001)
        pf = simulate_trace(truth, t, v, SOLVER, "zero")
        noisy = noisy_trace(pf, 0.01, seed=42)
        start = with_params(truth, {"k0": 1.1e4, "k1": 0.9 * 54500.0, "tau1": 1.1e-3})
        problem = FitProblem(t=t, v=v, pf=noisy, model=start, free_params=("k0", "k1", "tau1"),
                             solver=SOLVER, x0_policy="zero")
        result = fit(problem, workers=1)
        assert result.converged
        for name in ("k0", "k1", "tau1"):
            assert result.params[name] == pytest.approx(get_params(truth)[name], rel=0.05)
        # 残差接近噪声水平
        assert result.rmse < 0.02 * np.max(np.abs(pf))
