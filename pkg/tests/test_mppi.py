import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowerreach import _kernels
from flowerreach.core import (ArmState, ControlInput, FullState, ModelParams, Rotation,
                              ValidationError)
from flowerreach.dynamics import arm_coupling_wrench, hover_thrust, step_rk4
from flowerreach.mppi import (ControllerFailure, ControlSequence, MppiConfig, MppiController,
                              Setpoint, effective_sample_size, mppi_optimize, mppi_step,
                              rollout_cost, softmax_weights, stage_cost, terminal_cost,
                              write_diagnostics)
from flowerreach.rng import StreamKey

P = ModelParams()
ONLY_P = MppiConfig(w_p=1.0, w_v=0.0, w_u=0.0, w_T=0.0)
ONLY_V = MppiConfig(w_p=0.0, w_v=1.0, w_u=0.0, w_T=0.0)


def rest(p, v=(0, 0, 0)):
    return FullState(p, v, Rotation.identity(), np.zeros(3))


def test_stage_cost_zero_at_setpoint():
    assert stage_cost(rest((1, 2, 3)), ControlInput(hover_thrust(P)), Setpoint((1, 2, 3)),
                      MppiConfig(), P) == 0.0


def test_stage_cost_position():
    assert stage_cost(rest((3, 4, 0)), ControlInput(0.0), Setpoint((0, 0, 0)), ONLY_P, P) == 25.0


def test_stage_cost_velocity():
    assert stage_cost(rest((0, 0, 0), (0, 0, 2)), ControlInput(0.0), Setpoint((0, 0, 0)),
                      ONLY_V, P) == 4.0


def test_rollout_cost_single_step_hover():
    cfg = MppiConfig(horizon=1)
    seq = ControlSequence.trim(1, P)
    assert rollout_cost(rest((0, 0, 1)), seq, Setpoint((0, 0, 1)), cfg, P) == pytest.approx(0.0, abs=1e-12)


def test_rollout_cost_is_additive():
    cfg = MppiConfig(horizon=8)
    rng = np.random.default_rng(0)
    u = np.column_stack([hover_thrust(P) + rng.normal(0, 1, 8), rng.normal(0, 0.02, (8, 3))])
    seq = ControlSequence(u)
    sp = Setpoint((0.2, -0.1, 1.6), yaw_des=0.3)
    x0 = FullState((0, 0, 1.5), (0.1, 0, 0), Rotation.from_euler(0.02, -0.01, 0.1), (0.01, 0, 0.05))
    x, total = x0, 0.0
    for t in range(8):
        total += stage_cost(x, seq[t], sp, cfg, P)
        x = step_rk4(x, seq[t], P, dt=cfg.dt)
    total += terminal_cost(x, sp, cfg)
    # the rollout skips per-step renormalization, hence the tolerance
    assert rollout_cost(x0, seq, sp, cfg, P) == pytest.approx(total, rel=1e-12)


def scalar_double_integrator(z0, v0, thrusts, mass, g, dt, z_des, w_p, w_v, w_u, w_T, hover):
    z, v, cost = z0, v0, 0.0
    for f in thrusts:
        cost += w_p * (z - z_des) ** 2 + w_v * v * v + w_u * (f - hover) ** 2
        a = f / mass - g
        z, v = z + v * dt + 0.5 * a * dt * dt, v + a * dt
    return cost + w_T * (z - z_des) ** 2


@given(st.lists(st.floats(0.0, 40.0), min_size=1, max_size=20), st.floats(-1, 1), st.floats(-1, 1))
def test_rollout_matches_scalar_double_integrator(thrusts, z0, v0):
    cfg = MppiConfig(horizon=len(thrusts))
    seq = ControlSequence([[f, 0.0, 0.0, 0.0] for f in thrusts])
    got = rollout_cost(rest((0, 0, z0), (0, 0, v0)), seq, Setpoint((0, 0, 0.5)), cfg, P)
    ref = scalar_double_integrator(z0, v0, thrusts, P.total_mass, P.g, cfg.dt, 0.5,
                                   cfg.w_p, cfg.w_v, cfg.w_u, cfg.w_T, hover_thrust(P))
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_softmax_closed_form():
    lam = 0.7
    w = softmax_weights(np.array([0.0, lam * math.log(9.0)]), lam)
    np.testing.assert_allclose(w, [0.9, 0.1], atol=1e-15)


def test_softmax_ignores_divergent():
    w = softmax_weights(np.array([1.0, np.inf, 1.0]), 1.0)
    np.testing.assert_array_equal(w, [0.5, 0.0, 0.5])
    with pytest.raises(ControllerFailure):
        softmax_weights(np.array([np.inf, np.inf]), 1.0)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=200), st.floats(1e-3, 1e3))
def test_weights_normalized(costs, lam):
    w = softmax_weights(np.array(costs), lam)
    assert np.all(w >= 0.0)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert 1.0 <= effective_sample_size(w) <= len(costs) + 1e-9


@given(st.lists(st.integers(0, 2**20), min_size=2, max_size=64), st.integers(-2**20, 2**20))
def test_cost_shift_invariance(costs, shift):
    # dyadic costs keep every subtraction exact, so the contract is bitwise
    c = np.array(costs, dtype=float) / 64.0
    w1 = softmax_weights(c, 0.5)
    w2 = softmax_weights(c + shift / 8.0, 0.5)
    np.testing.assert_array_equal(w1, w2)


def test_cost_shift_invariance_of_update():
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(32, 5, 4))
    costs = rng.integers(0, 1000, 32) / 16.0
    a = _kernels.weighted_sum(softmax_weights(costs, 2.0), samples)
    b = _kernels.weighted_sum(softmax_weights(costs + 1024.0, 2.0), samples)
    np.testing.assert_array_equal(a, b)


def test_vanishing_sigma_returns_nominal():
    tiny = MppiConfig(n_samples=1, horizon=10, sigma_thrust=1e-300, sigma_torque=1e-300)
    nominal = ControlSequence(np.column_stack([np.linspace(15, 18, 10), np.full((10, 3), 0.01)]))
    x0 = rest((0, 0, 1))
    updated, _ = mppi_optimize(x0, Setpoint((0.1, 0, 1)), nominal, tiny, P, StreamKey(0, 0))
    assert updated == nominal
    many = MppiConfig(n_samples=64, horizon=10, sigma_thrust=1e-300, sigma_torque=1e-300)
    updated, _ = mppi_optimize(x0, Setpoint((0.1, 0, 1)), nominal, many, P, StreamKey(0, 0))
    np.testing.assert_allclose(updated.u, nominal.u, rtol=1e-14)


def test_serial_and_parallel_bit_identical():
    x0 = FullState((0.05, -0.03, 1.45), (0.1, 0, 0), Rotation.from_euler(0.02, 0.01, 0.3), (0, 0.1, 0))
    sp = Setpoint((0, 0, 1.5))
    nominal = ControlSequence.trim(30, P)
    a, da = mppi_optimize(x0, sp, nominal, MppiConfig(parallel=False), P, StreamKey(11, 4))
    b, db = mppi_optimize(x0, sp, nominal, MppiConfig(parallel=True), P, StreamKey(11, 4))
    c, _ = mppi_optimize(x0, sp, nominal, MppiConfig(parallel=False), P, StreamKey(11, 4))
    assert a == b == c
    assert da == db


def test_different_steps_differ():
    x0 = rest((0.1, 0, 1.5))
    sp = Setpoint((0, 0, 1.5))
    nominal = ControlSequence.trim(30, P)
    a, _ = mppi_optimize(x0, sp, nominal, MppiConfig(), P, StreamKey(0, 0))
    b, _ = mppi_optimize(x0, sp, nominal, MppiConfig(), P, StreamKey(0, 1))
    assert a != b


def test_update_respects_limits():
    cfg = MppiConfig(sigma_thrust=100.0, sigma_torque=5.0, n_samples=64)
    updated, _ = mppi_optimize(rest((1, 0, 1)), Setpoint((0, 0, 1)), ControlSequence.trim(30, P),
                               cfg, P, StreamKey(0, 0))
    assert all(updated[t].within_limits(P) for t in range(len(updated)))


def test_improvement_property():
    cfg = MppiConfig()
    sp = Setpoint((0, 0, 1.5))
    nominal = ControlSequence.trim(cfg.horizon, P)
    rng = np.random.default_rng(0)
    deltas = []
    for seed in range(100):
        d = rng.normal(size=3)
        x0 = rest(sp.p_des + 0.1 * d / np.linalg.norm(d))
        updated, _ = mppi_optimize(x0, sp, nominal, cfg, P, StreamKey(seed, 0))
        deltas.append(rollout_cost(x0, updated, sp, cfg, P) - rollout_cost(x0, nominal, sp, cfg, P))
    assert np.median(deltas) <= 0.0


def test_mppi_step_shifts():
    cfg = MppiConfig(horizon=5, n_samples=16)
    u0, warm = mppi_step(rest((0, 0, 1)), Setpoint((0, 0, 1)), ControlSequence.trim(5, P), cfg, P,
                         StreamKey(0, 0))
    assert len(warm) == 5
    np.testing.assert_array_equal(warm.u[-1], warm.u[-2])


def test_nominal_length_checked():
    with pytest.raises(ValueError):
        mppi_optimize(rest((0, 0, 1)), Setpoint((0, 0, 1)), ControlSequence.trim(3, P),
                      MppiConfig(horizon=5), P, StreamKey(0, 0))


@pytest.mark.parametrize("kwargs", [{"n_samples": 0}, {"horizon": 0}, {"lam": 0.0},
                                    {"sigma_thrust": 0.0}, {"w_p": -1.0}, {"dt": 0.1}])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        MppiConfig(**kwargs)


def test_control_sequence_clamped():
    seq = ControlSequence([[-5.0, 2.0, -2.0, 0.5]]).clamped(P)
    np.testing.assert_array_equal(seq.u, [[0.0, 1.0, -1.0, 0.5]])


def test_controller_counts_steps_and_feeds_forward(tmp_path):
    cfg = MppiConfig(horizon=10, n_samples=32)
    ctl = MppiController(cfg, P, seed=1)
    sp = Setpoint((0, 0, 1))
    ctl(rest((0, 0, 1)), sp)
    coupling = arm_coupling_wrench(ArmState(0.0, 0.0), Rotation.identity(), P)
    before = ctl.nominal.u.copy()
    ctl(rest((0, 0, 1)), sp, coupling)
    assert ctl.step == 2 and len(ctl.diagnostics) == 2
    assert not np.array_equal(before, ctl.nominal.u)
    write_diagnostics(tmp_path / "m.csv", ctl.diagnostics)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "step,min_cost,mean_cost,ess" and len(lines) == 3
    ctl.reset()
    assert ctl.step == 0 and ctl.diagnostics == []
