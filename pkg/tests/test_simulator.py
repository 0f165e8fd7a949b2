from dataclasses import replace

import numpy as np
import pytest

from galins.eqf import gravity_input
from galins.liegroups import gal_exp_mat, gal_mat, gal_mul, unskew, wedge
from galins.simulator import (
    GRAVITY,
    InitConfig,
    SensorConfig,
    TrajectoryConfig,
    analytic_arrays,
    analytic_state,
    monte_carlo,
    stationary_config,
    synthesize,
)

TRAJ = TrajectoryConfig()
QUIET = SensorConfig().noise_free()


def test_start_point():
    _, _, p, _, _ = analytic_state(TRAJ, 0.0)
    assert np.array_equal(p, [TRAJ.radius, 0.0, 0.0])


def test_hover_reads_gravity():
    cfg = stationary_config(10.0)
    for t in (0.0, 3.3, 10.0):
        rot, v, p, om, acc = analytic_state(cfg, t)
        assert np.array_equal(om, np.zeros(3))
        assert np.allclose(acc, -rot.m.T @ GRAVITY, atol=1e-15)
        assert np.array_equal(v, np.zeros(3))


def test_time_out_of_range():
    with pytest.raises(ValueError):
        analytic_state(TRAJ, -0.1)
    with pytest.raises(ValueError):
        analytic_state(TRAJ, TRAJ.duration + 1.0)


def test_closed_form_derivatives_match_differences():
    t = np.linspace(0.5, 50.0, 37)
    h = 1e-5
    rot, v, p, om, acc, a_world = analytic_arrays(TRAJ, t)
    rp, vp, pp, *_ = analytic_arrays(TRAJ, t + h)
    rm, vm, pm, *_ = analytic_arrays(TRAJ, t - h)
    assert np.abs((pp - pm) / (2 * h) - v).max() < 1e-6
    assert np.abs((vp - vm) / (2 * h) - a_world).max() < 1e-6
    rdot = (rp - rm) / (2 * h)
    body_rate = np.array([unskew(r.T @ d) for r, d in zip(rot, rdot)])
    assert np.abs(body_rate - om).max() < 1e-6
    assert np.allclose(acc, np.einsum("kji,kj->ki", rot, a_world - GRAVITY), atol=1e-12)


def test_yaw_follows_horizontal_velocity():
    cfg = replace(TRAJ, attitude_amp=0.0)
    rot, v, *_ = analytic_arrays(cfg, np.linspace(0, 30, 50))
    heading = rot[:, :, 0]
    horiz = v.copy()
    horiz[:, 2] = 0.0
    horiz /= np.linalg.norm(horiz, axis=1, keepdims=True)
    assert np.allclose(heading, horiz, atol=1e-12)


def _rk4_reintegrate(sim):
    """Integrate dT/dt = -G T + T W(t) from the 200 Hz samples alone.

    W(t) is the quadratic through three neighbouring midpoint samples, so the
    local error is fourth order and the check isolates the synthesized signals.
    """
    g_n = gravity_input()
    gw = wedge(g_n)
    w = np.zeros((len(sim.t), 10))
    w[:, 0:3], w[:, 3:6], w[:, 9] = sim.imu_omega, sim.imu_accel, 1.0
    dt = sim.dt
    t = gal_mat(sim.rot[0], sim.vel[0], sim.pos[0], 0.0)
    out = [t[:3, 4].copy()]
    for k in range(len(sim.t) - 1):
        j = min(max(k, 1), len(sim.t) - 3)
        c = w[j - 1:j + 2]
        # sample times relative to the current interval start, in steps
        x = np.array([j - 1 - k, j - k, j + 1 - k]) + 0.5

        def w_at(s):
            lag = [(s - x[1]) * (s - x[2]) / ((x[0] - x[1]) * (x[0] - x[2])),
                   (s - x[0]) * (s - x[2]) / ((x[1] - x[0]) * (x[1] - x[2])),
                   (s - x[0]) * (s - x[1]) / ((x[2] - x[0]) * (x[2] - x[1]))]
            return wedge(lag[0] * c[0] + lag[1] * c[1] + lag[2] * c[2])

        def f(m, s):
            return -gw @ m + m @ w_at(s)

        k1 = f(t, 0.0)
        k2 = f(t + 0.5 * dt * k1, 0.5)
        k3 = f(t + 0.5 * dt * k2, 0.5)
        k4 = f(t + dt * k3, 1.0)
        t = t + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(t[:3, 4].copy())
    return np.array(out)


def test_reintegration_reproduces_trajectory():
    sim = synthesize(TRAJ, QUIET)
    assert np.linalg.norm(_rk4_reintegrate(sim) - sim.pos, axis=1).max() < 1e-4


def _exp_step_drift(rate, duration=20.0):
    sim = synthesize(replace(TRAJ, duration=duration), replace(QUIET, imu_rate=rate))
    g_n = gravity_input()
    t = gal_mat(sim.rot[0], sim.vel[0], sim.pos[0], 0.0)
    worst = 0.0
    for k in range(len(sim.t) - 1):
        w = np.concatenate([sim.imu_omega[k], sim.imu_accel[k], [0, 0, 0, 1.0]])
        t = gal_mul(gal_mul(gal_exp_mat(-g_n * sim.dt), t), gal_exp_mat(w * sim.dt))
        worst = max(worst, np.linalg.norm(t[:3, 4] - sim.pos[k + 1]))
    return worst


def test_filter_step_is_second_order():
    # the one-sample exponential step the filters use
    coarse, fine = _exp_step_drift(200.0), _exp_step_drift(400.0)
    assert 3.6 < coarse / fine < 4.4


def test_noise_free_imu_is_analytic_midpoint():
    sim = synthesize(TRAJ, QUIET)
    mid = np.minimum(sim.t + 0.5 * sim.dt, TRAJ.duration)
    _, _, _, om, acc, _ = analytic_arrays(TRAJ, mid)
    assert np.array_equal(sim.imu_omega, om)
    assert np.array_equal(sim.imu_accel, acc)
    assert np.array_equal(sim.gyro_bias, np.zeros_like(sim.gyro_bias))


def test_same_seed_is_bit_identical():
    a = synthesize(TRAJ, SensorConfig(seed=11), InitConfig())
    b = synthesize(TRAJ, SensorConfig(seed=11), InitConfig())
    for name in ("imu_omega", "imu_accel", "gnss_pos", "init_rot", "init_vel", "accel_bias"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_disjoint_seeds_are_uncorrelated():
    sims = list(monte_carlo(TRAJ, replace(SensorConfig(), gyro_bias_rw=0, accel_bias_rw=0), 4, 100))
    exact = synthesize(TRAJ, QUIET)
    noise = [s.imu_accel[:, 0] - exact.imu_accel[:, 0] for s in sims]
    for i in range(4):
        for j in range(i + 1, 4):
            assert abs(np.corrcoef(noise[i], noise[j])[0, 1]) < 0.05


def test_noise_density_scaling():
    sens = SensorConfig(gyro_noise=0.01, accel_noise=0.1, gyro_bias_rw=0, accel_bias_rw=0, seed=3)
    sim = synthesize(TRAJ, sens)
    exact = synthesize(TRAJ, QUIET)
    std_g = np.std(sim.imu_omega - exact.imu_omega)
    std_a = np.std(sim.imu_accel - exact.imu_accel)
    assert std_g == pytest.approx(0.01 * np.sqrt(200.0), rel=0.03)
    assert std_a == pytest.approx(0.1 * np.sqrt(200.0), rel=0.03)


def test_gnss_delay_definition():
    sim = synthesize(TRAJ, replace(QUIET, delay=0.1))
    k = int(np.nonzero(sim.gnss_t_ns == 5 * 10**9)[0][0])
    _, _, p, _, _ = analytic_state(TRAJ, 4.9)
    assert np.array_equal(sim.gnss_pos[k], p + 0.0)
    assert np.all(sim.gnss_t_ns - sim.gnss_t_sampled_ns == 100_000_000)
    assert np.all(sim.gnss_t_ns % 50_000_000 == 0)
    assert sim.gnss_t_sampled_ns.min() >= 0


def test_lever_arm_in_gnss():
    arm = (0.2, -0.1, 0.3)
    sim = synthesize(TRAJ, replace(QUIET, lever_arm=arm, delay=0.0))
    rot, _, p, *_ = analytic_arrays(TRAJ, sim.gnss_t_sampled)
    assert np.allclose(sim.gnss_pos, p + rot @ np.array(arm), atol=1e-12)


def test_initial_estimate_spread():
    sims = list(monte_carlo(TRAJ, SensorConfig(), 40, 0, InitConfig()))
    dv = np.array([s.init_vel - s.vel[0] for s in sims])
    assert 0.35 < dv.std() < 0.65
    exact = synthesize(TRAJ, SensorConfig())
    assert np.array_equal(exact.init_pos, exact.pos[0])


def test_monte_carlo_seeds():
    one = next(monte_carlo(TRAJ, SensorConfig(), 1, 42))
    direct = synthesize(TRAJ, SensorConfig(seed=42))
    assert one.seed == 42 and np.array_equal(one.imu_accel, direct.imu_accel)
    with pytest.raises(ValueError):
        list(monte_carlo(TRAJ, SensorConfig(), 0, 0))


@pytest.mark.parametrize("kw", [dict(imu_rate=200.0, gnss_rate=30.0), dict(delay=-0.1), dict(gnss_pos_std=-1.0),
                                dict(imu_rate=0.0)])
def test_sensor_validation(kw):
    with pytest.raises(ValueError):
        SensorConfig(**kw)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(radius=float("nan"))
    with pytest.raises(ValueError):
        synthesize(TrajectoryConfig(duration=0.001), SensorConfig())
