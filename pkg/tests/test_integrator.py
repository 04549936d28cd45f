"""
积分器、轨迹与无源性 / 有界性 / 耗散恒等式审计测试
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from frbd.core.exceptions import MissingChannelError, NumericalFailure
from frbd.models.friction import (
    GKVParams,
    GMParams,
    SLSCanonical,
    StribeckLaw,
    canonical_sls_to_gkv,
    canonical_sls_to_gm,
)
from frbd.models.viscoelastic import FrBDModel, force_series, gm_state_to_gkv, steady_state
from frbd.services.integrator import (
    CompositeSignal,
    ConstantSignal,
    SampledSignal,
    SinusoidSignal,
    SolverConfig,
    Trajectory,
    boundedness_audit,
    certify_passivity,
    cumulative_trapezoid,
    dissipation_identity_audit,
    integrate,
    passivity_audit,
    passivity_check,
    passivity_tolerance,
    simulate_model,
)


def _decay(t, x, u):
    return -x


class TestIntegrators:
    def test_rk4_exponential_decay(self):
        traj = integrate(_decay, np.array([1.0]), None, SolverConfig(method="rk4", dt=1e-3, t1=1.0))
        assert traj.t[-1] == 1.0
        assert traj.states[-1, 0] == pytest.approx(math.exp(-1.0), rel=1e-11)
        assert len(traj) == 1001

    def test_rk45_exponential_decay(self):
        cfg = SolverConfig(method="rk45", dt=1e-3, rtol=1e-10, atol=1e-12, dt_max=0.1, t1=2.0)
        traj = integrate(_decay, np.array([1.0]), None, cfg)
        assert traj.t[-1] == 2.0
        assert traj.states[-1, 0] == pytest.approx(math.exp(-2.0), rel=1e-7)
        # 自适应步长远少于定步长
        assert len(traj) < 2000

    def test_rk4_observed_order(self):
        errors = []
        for dt in (0.1, 0.05, 0.025):
            traj = integrate(_decay, np.array([1.0]), None, SolverConfig(method="rk4", dt=dt, t1=1.0))
            errors.append(abs(traj.states[-1, 0] - math.exp(-1.0)))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 3.9)

    def test_rk45_matches_fine_rk4_reference(self):
        def forced(t, x, u):
            return np.array([-x[0] + math.sin(5.0 * t), x[0] - 0.5 * x[1]])

        rtol, atol = 1e-6, 1e-9
        cfg = SolverConfig(method="rk45", dt=1e-3, rtol=rtol, atol=atol, dt_max=0.1, t1=3.0)
        adaptive = integrate(forced, np.array([1.0, 0.0]), None, cfg)
        reference = integrate(forced, np.array([1.0, 0.0]), None, SolverConfig(method="rk4", dt=1e-4, t1=3.0))
        got, ref = adaptive.states[-1], reference.states[-1]
        assert np.all(np.abs(got - ref) <= 10.0 * (rtol * np.abs(ref) + atol))

    @pytest.mark.parametrize("cfg", [
        SolverConfig(method="rk4", dt=1e-3, t1=2.0 * math.pi),
        SolverConfig(method="rk45", dt=1e-3, rtol=1e-10, atol=1e-12, dt_max=0.05, t1=2.0 * math.pi),
    ])
    def test_harmonic_oscillator_period(self, cfg):
        traj = integrate(lambda t, x, u: np.array([x[1], -x[0]]), np.array([1.0, 0.0]), None, cfg)
        assert traj.t[-1] == 2.0 * math.pi
        np.testing.assert_allclose(traj.states[-1], [1.0, 0.0], atol=1e-8)

    def test_input_signal_is_applied(self):
        traj = integrate(lambda t, x, u: np.array([u]), np.zeros(1), ConstantSignal(value=2.0),
                         SolverConfig(dt=1e-2, t1=1.0))
        assert traj.states[-1, 0] == pytest.approx(2.0)

    def test_blow_up_raises(self):
        with pytest.raises(NumericalFailure):
            integrate(lambda t, x, u: x * x, np.array([1.0]), None, SolverConfig(dt=1e-3, t1=2.0))

    def test_step_underflow_raises(self):
        cfg = SolverConfig(method="rk45", dt=1e-3, dt_min=1e-6, t1=2.0)
        with pytest.raises(NumericalFailure):
            integrate(lambda t, x, u: x * x, np.array([1.0]), None, cfg)

    def test_invalid_span_rejected(self):
        with pytest.raises(ValidationError):
            SolverConfig(t0=1.0, t1=1.0)

    def test_power_channels(self):
        traj = integrate(_decay, np.array([1.0]), ConstantSignal(value=1.0), SolverConfig(dt=1e-3, t1=1.0),
                         power=lambda t, x, u: 2.0 * u)
        np.testing.assert_allclose(traj.channel("P_in"), 2.0)
        assert traj.channel("W_in")[-1] == pytest.approx(2.0)


class TestSignalsAndTrajectory:
    def test_signals(self):
        assert SinusoidSignal(bias=1.0, amplitude=2.0, freq=0.25)(1.0) == pytest.approx(3.0)
        sampled = SampledSignal(times=(0.0, 1.0), values=(0.0, 4.0))
        assert sampled(0.25) == pytest.approx(1.0)
        assert sampled(5.0) == 4.0
        combo = CompositeSignal(parts=(ConstantSignal(value=1.0), sampled))
        assert combo(0.5) == pytest.approx(3.0)

    def test_sampled_requires_increasing_times(self):
        with pytest.raises(ValidationError):
            SampledSignal(times=(0.0, 0.0), values=(1.0, 2.0))

    def test_cumulative_trapezoid_exact_on_linear(self):
        t = np.linspace(0.0, 2.0, 7)
        np.testing.assert_allclose(cumulative_trapezoid(3.0 * t, t), 1.5 * t * t, rtol=1e-14, atol=1e-15)

    def test_frame_columns_and_missing_channel(self, soft_gm):
        traj = simulate_model(soft_gm, ConstantSignal(value=0.1), SolverConfig(dt=1e-3, t1=0.01))
        frame = traj.to_frame(["pf", "t", "z", "b2"])
        assert list(frame.columns) == ["pf", "t", "z", "b2"]
        assert len(frame) == 11
        with pytest.raises(MissingChannelError):
            traj.to_frame(["t", "q"])
        with pytest.raises(MissingChannelError):
            traj.to_frame(["b3"])

    def test_window_and_resample(self):
        traj = integrate(_decay, np.array([1.0]), None, SolverConfig(dt=0.1, t1=1.0))
        late = traj.window(0.5)
        assert late.t[0] == pytest.approx(0.5)
        fine = traj.resample(np.array([0.05]))
        assert fine.states[0, 0] == pytest.approx(0.5 * (1.0 + traj.states[1, 0]))


class TestSteadyStateConvergence:
    @pytest.mark.parametrize("v", [-1.0, -0.1, -0.01, -0.001, 0.001, 0.01, 0.1, 1.0])
    def test_reaches_steady_state(self, table1_gm, v):
        # |v| = 0.001 时慢模态约 6.45/s, 需要更长时间
        horizon = 4.0 if abs(v) < 0.005 else 1.0
        cfg = SolverConfig(method="rk45", dt=1e-6, rtol=1e-10, atol=1e-14, dt_max=1e-3, t1=horizon)
        traj = simulate_model(table1_gm, ConstantSignal(value=v), cfg)
        f_star, x_star = steady_state(table1_gm, v)
        assert abs(traj.f[-1] - f_star) < 1e-6
        np.testing.assert_allclose(traj.states[-1], x_star, atol=1e-6)


class TestAudits:
    @pytest.fixture
    def sine_run(self, table1_gm):
        u = SinusoidSignal(amplitude=0.01, freq=5.0)
        return simulate_model(table1_gm, u, SolverConfig(dt=1e-5, t1=0.4))

    def test_passivity_margin(self, sine_run):
        margin = passivity_audit(sine_run)
        assert margin >= -1e-6 * float(np.max(np.abs(sine_run.W_in)))
        assert certify_passivity(sine_run)
        assert passivity_tolerance(sine_run) > 0.0

    def test_boundedness(self, sine_run):
        report = boundedness_audit(sine_run, v_bound=0.01)
        assert report.finite
        assert report.input_within_bound
        assert report.bounded
        assert report.sup_V >= report.attractor_bound

    def test_dissipation_identity(self, table1_gm, sine_run):
        assert dissipation_identity_audit(table1_gm, sine_run) < 1e-6

    def test_energy_injecting_trace_fails_passivity(self, sine_run):
        tampered = Trajectory(t=sine_run.t, states=sine_run.states, channels=dict(sine_run.channels))
        tampered.channels["V"] = sine_run.V + 1e-3 * (sine_run.t - sine_run.t[0])
        assert not certify_passivity(tampered)

    def test_negative_margin_inside_tolerance_passes(self, sine_run):
        tol = passivity_tolerance(sine_run)
        ramp = 0.25 * tol * (sine_run.t - sine_run.t[0]) / (sine_run.t[-1] - sine_run.t[0])
        tampered = Trajectory(t=sine_run.t, states=sine_run.states, channels=dict(sine_run.channels))
        tampered.channels["V"] = sine_run.V[0] + sine_run.W_in + ramp
        margin, tol_t, ok = passivity_check(tampered)
        assert margin == pytest.approx(-0.25 * tol, rel=1e-2)
        assert tol_t >= 0.25 * tol
        assert ok

    def test_bounded_random_models(self, rng):
        for i in range(6):
            m = _random_model(rng, int(rng.integers(0, 3)), gm=i % 2 == 0)
            u = SinusoidSignal(bias=0.2, amplitude=0.8, freq=0.7)
            traj = simulate_model(m, u, SolverConfig(dt=1e-3, t1=5.0), _large_state(m))
            report = boundedness_audit(traj, v_bound=1.0)
            assert report.bounded
            assert report.sup_V == report.V0
            assert certify_passivity(traj)

    def test_transient_overshoot_is_flagged(self, sine_run):
        ref = boundedness_audit(sine_run, v_bound=0.01).sup_V
        V = sine_run.V.copy()
        V[1] = 5.5 * ref
        tampered = Trajectory(t=sine_run.t, states=sine_run.states, channels={**sine_run.channels, "V": V})
        report = boundedness_audit(tampered, v_bound=0.01)
        assert report.finite
        assert report.ratio == pytest.approx(5.5, rel=1e-3)
        assert not report.bounded

    def test_overshoot_just_above_tolerance_is_flagged(self, sine_run):
        V = sine_run.V.copy()
        ref = boundedness_audit(sine_run, v_bound=0.01).sup_V
        V[1] = ref * (1.0 + 1e-3)
        tampered = Trajectory(t=sine_run.t, states=sine_run.states, channels={**sine_run.channels, "V": V})
        assert not boundedness_audit(tampered, v_bound=0.01).bounded
        assert boundedness_audit(tampered, v_bound=0.01, rtol=1e-2).bounded

    def test_non_finite_state_is_not_bounded(self, sine_run):
        states = sine_run.states.copy()
        states[-1, 0] = np.nan
        report = boundedness_audit(Trajectory(t=sine_run.t, states=states, channels=sine_run.channels), 0.01)
        assert not report.finite
        assert not report.bounded

    @pytest.mark.slow
    def test_long_horizon_random_input(self, rng):
        times = tuple(np.arange(0.0, 100.5, 0.5))
        for gm in (True, False):
            m = _random_model(rng, 2, gm=gm)
            u = SampledSignal(times=times, values=tuple(rng.uniform(-1.0, 1.0, size=len(times))))
            cfg = SolverConfig(dt=2e-3, t1=100.0)
            for x0 in (None, _large_state(m)):
                traj = simulate_model(m, u, cfg, x0)
                report = boundedness_audit(traj, v_bound=1.0)
                assert report.finite
                assert report.input_within_bound
                if x0 is not None:
                    assert report.bounded

    def test_zero_input_storage_is_non_increasing(self, soft_gm, soft_gkv, rng):
        for m in (soft_gm, soft_gkv):
            x0 = rng.normal(scale=0.05, size=m.dim)
            traj = simulate_model(m, ConstantSignal(value=0.0), SolverConfig(dt=1e-3, t1=3.0), x0)
            assert np.all(np.diff(traj.V) <= 1e-10 * traj.V[0])
            assert traj.V[-1] < traj.V[0]

    @pytest.mark.slow
    def test_passivity_random_sweep(self):
        # 100 个种子, n ∈ {1, 2, 4}, |v| ≤ 1, T = 5 s
        times = tuple(np.arange(0.0, 5.25, 0.25))
        for seed in range(100):
            rng = np.random.default_rng(seed)
            m = _random_model(rng, (1, 2, 4)[seed % 3], gm=seed % 2 == 0)
            u = SampledSignal(times=times, values=tuple(rng.uniform(-1.0, 1.0, size=len(times))))
            traj = simulate_model(m, u, SolverConfig(dt=1e-3, t1=5.0))
            margin, tol, ok = passivity_check(traj)
            assert ok, f"seed={seed}: margin={margin:.3e}, tol={tol:.3e}"


def _random_model(rng, n, gm=True):
    k0 = rng.uniform(1.0, 20.0)
    ks = tuple(rng.uniform(1.0, 20.0, size=n))
    law = StribeckLaw(mu_d=rng.uniform(0.5, 1.0), mu_s=1.2, v_s=0.1, delta=2.0)
    if gm:
        rheology = GMParams(k0=k0, k=ks, tau=tuple(rng.uniform(0.05, 1.0, size=n)))
    else:
        rheology = GKVParams(k0=k0, k=ks, c=tuple(rng.uniform(0.1, 1.0, size=n)))
    return FrBDModel(rheology=rheology, law=law)


def _large_state(m):
    """主弹簧力约为 μ_s 的 100 倍, 储能远高于吸引子"""
    x0 = np.zeros(m.dim)
    x0[0] = 100.0 * m.law.mu_s / m.rheology.k0
    return x0


def _random_canonical(rng):
    sigma0 = 10 ** rng.uniform(0.0, 1.5)
    gamma1 = rng.uniform(0.05, 1.0)
    sigma1 = gamma1 * sigma0 * (1.0 + rng.uniform(0.5, 5.0))
    return SLSCanonical(sigma0=sigma0, sigma1=sigma1, gamma1=gamma1)


def _equivalence_error(rng, law, sets, inputs):
    worst = 0.0
    for _ in range(sets):
        c = _random_canonical(rng)
        gm = FrBDModel(rheology=canonical_sls_to_gm(c), law=law)
        gkv = FrBDModel(rheology=canonical_sls_to_gkv(c), law=law)
        for _ in range(inputs):
            u = CompositeSignal(parts=(
                SinusoidSignal(bias=rng.uniform(-0.1, 0.1), amplitude=rng.uniform(0.1, 0.5), freq=rng.uniform(0.2, 2.0)),
                SinusoidSignal(amplitude=rng.uniform(0.0, 0.2), freq=rng.uniform(2.0, 5.0), phase=rng.uniform(0, 6.28)),
            ))
            x0_gm = rng.normal(scale=1e-2, size=2)
            x0_gkv = gm_state_to_gkv(gm, x0_gm, gkv)
            cfg = SolverConfig(dt=5e-4, t1=1.0)
            a = simulate_model(gm, u, cfg, x0_gm)
            b = simulate_model(gkv, u, cfg, x0_gkv)
            fa, fb = force_series(gm, a.states), force_series(gkv, b.states)
            worst = max(worst, float(np.max(np.abs(fa - fb)) / np.max(np.abs(fa))))
    return worst


class TestSLSEquivalence:
    def test_gm_and_gkv_forces_agree(self, stribeck, rng):
        assert _equivalence_error(rng, stribeck, sets=4, inputs=2) < 1e-6

    @pytest.mark.slow
    def test_gm_and_gkv_forces_agree_full_sweep(self, stribeck, rng):
        assert _equivalence_error(rng, stribeck, sets=20, inputs=5) < 1e-6
