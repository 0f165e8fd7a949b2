import numpy as np
import pytest

from galins.liegroups import GalElement, gal_exp_mat, gal_inv_mat, gal_log_vec, gal_mul
from galins.preintegration import PreintBuffer
from galins.twobody import (
    ObserverState,
    TwoBodyConfig,
    current_pose,
    observer_correct,
    observer_residual,
    observer_step,
    run_twobody,
)

DT = 0.005
LAG = 20  # 100 ms


def inputs(rng, n):
    u = rng.normal(size=(n, 10)) * 0.5
    u[:, 6:9] = 0.0
    u[:, 9] = 1.0
    return u


def scenario(rng, n=200):
    """Bodies A (constant input) and B (random input); returns states and B's inputs."""
    u_a = np.array([0.05, -0.02, 0.1, 0.3, 0.1, -0.2, 0, 0, 0, 1.0])
    u_b = inputs(rng, n)
    xa = [gal_exp_mat(np.concatenate([rng.normal(size=9), [0.0]]))]
    xb = [gal_exp_mat(np.concatenate([rng.normal(size=9), [0.0]]))]
    for k in range(n):
        xa.append(gal_mul(xa[-1], gal_exp_mat(u_a * DT)))
        xb.append(gal_mul(xb[-1], gal_exp_mat(u_b[k] * DT)))
    return u_a, u_b, xa, xb


def test_symmetric_inputs_keep_identity(rng):
    s = ObserverState(GalElement.identity())
    for u in inputs(rng, 50):
        s = observer_step(s, u, u, DT)
    assert np.linalg.norm(s.f_hat.as_matrix() - np.eye(5)) < 1e-12


def test_tracks_true_frame_and_keeps_delay(rng):
    u_a, u_b, xa, xb = scenario(rng, 1000 + LAG)
    f = [gal_mul(gal_inv_mat(xa[k - LAG]), xb[k]) for k in range(LAG, len(xb))]
    s = ObserverState(GalElement.from_matrix(f[0]))
    d0 = s.delta_hat
    for k in range(1000):
        s = observer_step(s, u_a, u_b[LAG + k], DT)
    assert np.linalg.norm(s.f_hat.as_matrix() - f[-1]) < 1e-8
    assert s.delta_hat == pytest.approx(d0, abs=1e-12)
    assert d0 == pytest.approx(LAG * DT, abs=1e-12)


def _consistent(rng):
    u_a, u_b, xa, xb = scenario(rng, 60)
    k = 60
    buf = PreintBuffer(DT, 0.5)
    for u in u_b:
        buf.propagate(u)
    f = gal_mul(gal_inv_mat(xa[k - LAG]), xb[k])
    tm = gal_mul(gal_inv_mat(xa[k - LAG]), xb[k - LAG])
    return f, GalElement.from_matrix(tm), buf


def test_residual_zero_when_consistent(rng):
    f, tm, buf = _consistent(rng)
    r = observer_residual(ObserverState(GalElement.from_matrix(f)), tm, buf)
    assert np.linalg.norm(r) < 1e-10


def test_residual_first_order(rng):
    f, tm, buf = _consistent(rng)
    eps = rng.normal(size=10) * 1e-6
    eps[9] = 0.0
    s = ObserverState(GalElement.from_matrix(gal_mul(gal_exp_mat(eps), f)))
    r = observer_residual(s, tm, buf)
    assert np.linalg.norm(r + eps) < 1e-10


def test_residual_time_slot_vanishes_when_delay_is_wrong(rng):
    # the spatial residual sees a one-sample delay error, the time slot never does
    f, tm, buf = _consistent(rng)
    off = f.copy()
    off[3, 4] += DT
    r = observer_residual(ObserverState(GalElement.from_matrix(off)), tm, buf)
    assert abs(r[9]) < 1e-15
    assert np.linalg.norm(r[:9]) > 1e-4


def test_residual_requires_isochronous(rng):
    f, tm, buf = _consistent(rng)
    bad = tm.as_matrix().copy()
    bad[3, 4] = 0.1
    with pytest.raises(ValueError):
        observer_residual(ObserverState(GalElement.from_matrix(f)), GalElement.from_matrix(bad), buf)


def test_correct_zero_and_zero_gain(rng):
    f, tm, buf = _consistent(rng)
    s = ObserverState(GalElement.from_matrix(f))
    assert np.allclose(observer_correct(s, np.zeros(10)).f_hat.as_matrix(), f, atol=1e-14)
    s0 = ObserverState(GalElement.from_matrix(f), np.zeros((10, 10)))
    assert np.allclose(observer_correct(s0, rng.normal(size=10)).f_hat.as_matrix(), f, atol=1e-14)


def test_unit_gain_contracts(rng):
    f, tm, buf = _consistent(rng)
    eps = np.concatenate([rng.normal(size=9) * 0.05, [0.0]])
    s = ObserverState(GalElement.from_matrix(gal_mul(gal_exp_mat(eps), f)), np.eye(10))
    before = np.linalg.norm(gal_log_vec(gal_mul(gal_inv_mat(s.f_hat.as_matrix()), f)))
    s = observer_correct(s, observer_residual(s, tm, buf))
    after = np.linalg.norm(gal_log_vec(gal_mul(gal_inv_mat(s.f_hat.as_matrix()), f)))
    assert after < before


def test_current_pose_isochronous_at_true_delay(rng):
    f, _, _ = _consistent(rng)
    s = ObserverState(GalElement.from_matrix(f))
    g = np.zeros(10)
    g[9] = 1.0
    assert abs(current_pose(s).time) < 1e-9
    assert abs(current_pose(s, g).time) < 1e-9


def test_gain_shape_checked():
    with pytest.raises(ValueError):
        ObserverState(GalElement.identity(), np.eye(3))


@pytest.mark.parametrize("gain", [0.2, 0.5, 1.0])
def test_converges_noise_free(gain):
    res = run_twobody(TwoBodyConfig(duration=30.0, gain=gain))
    assert res.error_norm[0] > 0.1
    assert np.min(res.error_norm) < 1e-3
    assert np.all(np.abs(res.delta_hat - 0.1) < 1e-9)


def test_wrong_initial_delay_is_not_corrected():
    res = run_twobody(TwoBodyConfig(duration=10.0, delta0=0.05))
    assert np.all(res.delta_hat == 0.05)
    assert res.error_norm[-1] > 1e-2
