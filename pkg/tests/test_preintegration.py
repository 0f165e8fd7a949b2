import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galins.eqf import gravity_input
from galins.liegroups import gal_exp_mat, gal_mul
from galins.preintegration import (
    ImuWindow,
    PreintBuffer,
    batch_preintegrate,
    buffer_propagate,
    gamma,
    inertial_input,
    query,
)


def fill(buf, w_seq):
    for w in w_seq:
        buf.propagate(w)
    return buf


def random_inputs(rng, n):
    om = rng.normal(size=(n, 3)) * 0.5
    ac = rng.normal(size=(n, 3)) * 3.0
    return om, ac, inertial_input(om, ac)


def test_single_step():
    w = inertial_input([0.1, 0.2, -0.3], [1.0, 0.0, 2.0])
    buf = PreintBuffer(0.01, 0.5).propagate(w)
    assert len(buf) == 2
    assert np.array_equal(buf.entries[0], np.eye(5))
    assert np.allclose(buf.entry(1).as_matrix(), gal_exp_mat(w * 0.01), atol=1e-15)
    assert buf.entry(1).time == pytest.approx(0.01, abs=1e-15)


def test_constant_input_repeated_product():
    w = inertial_input([0.3, -0.1, 0.2], [0.5, 1.0, -2.0])
    dt, n = 0.005, 40
    buf = fill(PreintBuffer(dt, 0.5), [w] * n)
    oracle = np.linalg.matrix_power(gal_exp_mat(w * dt), n)
    assert np.linalg.norm(buf.entry(n).as_matrix() - oracle) < 1e-12
    assert np.allclose([buf.entry(k).time for k in range(len(buf))], buf.ages(), atol=1e-13)


def test_memory_bound(rng):
    dt, horizon = 0.005, 0.3
    buf = PreintBuffer(dt, horizon)
    _, _, w = random_inputs(rng, 500)
    for x in w:
        buf.propagate(x)
        assert len(buf) <= math.ceil(horizon / dt) + 1


def test_batch_examples():
    win = ImuWindow(np.arange(50) * 0.01, np.zeros((50, 3)), np.tile([1.0, -2.0, 0.5], (50, 1)))
    assert np.array_equal(batch_preintegrate(win, 0.0).as_matrix(), np.eye(5))
    y = batch_preintegrate(win, 0.3)
    c = np.array([1.0, -2.0, 0.5])
    assert np.allclose(y.vel, c * 0.3, atol=1e-13)
    assert np.allclose(y.pos, c * 0.3**2 / 2, atol=1e-13)
    assert y.time == pytest.approx(0.3, abs=1e-13)


def test_batch_rejects_bad_args():
    win = ImuWindow(np.arange(5) * 0.01, np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        batch_preintegrate(win, 0.2)
    with pytest.raises(ValueError):
        batch_preintegrate(win, -0.01)


@given(st.integers(0, 2**31), st.integers(0, 60))
@settings(max_examples=40, deadline=None)
def test_query_equals_batch_at_grid_delays(seed, k):
    rng = np.random.default_rng(seed)
    dt, n = 0.005, 100
    om, ac, w = random_inputs(rng, n)
    bias = np.concatenate([rng.normal(size=6) * 0.1, [0, 0, 0, 0]])
    buf = PreintBuffer(dt, 0.5)
    for x in w:
        buf.propagate(x - bias)
    win = ImuWindow(np.arange(n) * dt, om, ac)
    delta = k * dt
    batch = batch_preintegrate(win, delta, bias).as_matrix()
    q = query(buf, delta)
    assert np.linalg.norm(q.upsilon.as_matrix() - batch) < 1e-9
    assert not q.clamped


def test_query_identity_and_exact_entries(rng):
    dt = 0.01
    _, _, w = random_inputs(rng, 30)
    buf = fill(PreintBuffer(dt, 0.5), w)
    assert np.array_equal(query(buf, 0.0).upsilon.as_matrix(), np.eye(5))
    for k in (1, 7, 29):
        assert np.array_equal(query(buf, k * dt).upsilon.as_matrix(), buf.entry(k).as_matrix())


def test_query_midway_constant_input_closed_form():
    w = inertial_input([0.2, 0.1, -0.4], [2.0, -1.0, 0.5])
    dt = 0.01
    buf = fill(PreintBuffer(dt, 0.5), [w] * 30)
    for delta in (0.005, 0.125, 0.2049):
        assert np.linalg.norm(query(buf, delta).upsilon.as_matrix() - gal_exp_mat(w * delta)) < 1e-12


def test_query_clamps(rng):
    dt = 0.01
    _, _, w = random_inputs(rng, 10)
    buf = fill(PreintBuffer(dt, 0.5), w)
    lo = query(buf, -0.05)
    assert lo.clamped and np.array_equal(lo.upsilon.as_matrix(), np.eye(5)) and lo.delta == 0.0
    hi = query(buf, 1.0)
    assert hi.clamped and np.array_equal(hi.upsilon.as_matrix(), buf.entry(10).as_matrix())
    assert abs(hi.upsilon.time - hi.delta) < dt


def test_query_time_tracks_delay(rng):
    dt = 0.005
    _, _, w = random_inputs(rng, 200)
    buf = fill(PreintBuffer(dt, 0.5), w)
    for delta in rng.uniform(0, 0.5, 50):
        assert abs(query(buf, delta).upsilon.time - delta) < 1e-12


def test_propagate_validation():
    buf = PreintBuffer(0.01)
    with pytest.raises(ValueError):
        buf.propagate(np.zeros(10))
    with pytest.raises(ValueError):
        buffer_propagate(buf, inertial_input([0, 0, 0], [0, 0, 0]), 0.02)
    with pytest.raises(ValueError):
        PreintBuffer(0.0)


def test_gamma():
    g_n = gravity_input((0.0, 0.0, -9.81))
    assert np.array_equal(gamma(0.0, g_n).as_matrix(), np.eye(5))
    x = gamma(0.1, g_n)
    assert np.allclose(x.vel, [0, 0, 0.981], atol=1e-14)
    assert np.allclose(x.pos, [0, 0, 0.04905], atol=1e-14)
    assert x.time == pytest.approx(0.1)
    g_n = gravity_input((0.0, 0.0, -9.81), (1e-4, 2e-4, 7.29e-5))
    ab = gal_mul(gamma(0.13, g_n).as_matrix(), gamma(0.29, g_n).as_matrix())
    assert np.linalg.norm(gamma(0.42, g_n).as_matrix() - ab) < 1e-12


def _signal(t):
    om = np.stack([0.8 * np.sin(3 * t), 0.5 * np.cos(2 * t), 0.6 * np.sin(t + 0.3)], -1)
    ac = np.stack([2 * np.cos(1.5 * t), np.sin(2.5 * t), 9.81 + np.cos(t)], -1)
    return inertial_input(om, ac)


def _interp_error(dt, t_end=1.0, delta=0.1234):
    n = int(round(t_end / dt))
    buf = PreintBuffer(dt, 0.5)
    for x in _signal((np.arange(n) + 0.5) * dt):
        buf.propagate(x)
    # continuous oracle: ordered exponential over [t_end - delta, t_end] on a much finer grid
    m = 20000
    h = delta / m
    ref = np.eye(5)
    for x in _signal(t_end - delta + (np.arange(m) + 0.5) * h):
        ref = gal_mul(ref, gal_exp_mat(x * h))
    return np.linalg.norm(query(buf, delta).upsilon.as_matrix() - ref)


def test_interpolation_error_is_second_order():
    dts = [0.02, 0.01, 0.005, 0.0025]
    errs = np.array([_interp_error(dt) for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 1.8 <= slope <= 2.2, (errs, slope)
