import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation as SciRotation
from scipy.stats import chi2

from galins.liegroups import so3_exp_mat
from galins.metrics import error_series, is_divergent, nees, rmse, rotation_angle, step_errors


def test_identical_estimate_has_zero_error(rng):
    r = SciRotation.random(5, random_state=1).as_matrix()
    v, p, d = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.random(5)
    for e in step_errors((r, v, p, d), (r, v, p, d)):
        assert np.abs(e).max() < 1e-7


def test_rotation_about_z():
    r = SciRotation.random(random_state=4).as_matrix()
    rz = SciRotation.from_rotvec([0, 0, 0.1]).as_matrix()
    are, *_ = step_errors((r, np.zeros(3), np.zeros(3), 0.0), (r @ rz, np.zeros(3), np.zeros(3), 0.0))
    assert are == pytest.approx(0.1, abs=1e-14)


def test_delay_error():
    *_, ade = step_errors((np.eye(3), np.zeros(3), np.zeros(3), 0.12), (np.eye(3), np.zeros(3), np.zeros(3), 0.09))
    assert ade == pytest.approx(0.03, abs=1e-15)


def test_velocity_and_position_norms():
    _, ave, ape, _ = step_errors((np.eye(3), np.array([1.0, 2, 2]), np.array([0, 3.0, 4]), 0),
                                 (np.eye(3), np.zeros(3), np.zeros(3), 0))
    assert (ave, ape) == (3.0, 5.0)


@pytest.mark.parametrize("angle", [1e-9, 1e-3, 0.5, 2.0, np.pi - 1e-6, np.pi])
def test_rotation_angle_against_scipy(rng, angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    r = SciRotation.random(random_state=2).as_matrix()
    rh = r @ so3_exp_mat(axis * angle)
    assert rotation_angle(r, rh) == pytest.approx(angle, abs=1e-9)
    assert rotation_angle(r, rh) == pytest.approx(SciRotation.from_matrix(r.T @ rh).magnitude(), abs=1e-9)


def test_rmse_examples():
    assert rmse([0, 0, 0]) == 0.0
    assert rmse([3, 4]) == pytest.approx(np.sqrt(12.5))
    assert rmse(np.full(7, 2.5)) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        rmse([])


@settings(max_examples=100)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_rmse_squared_is_mean_square(values):
    e = np.array(values)
    assert rmse(e) ** 2 == pytest.approx(np.mean(e * e), rel=1e-12, abs=1e-300)


def test_nees_examples():
    assert nees(np.zeros(4), np.eye(4)) == 0.0
    assert nees(np.ones(20), np.eye(20)) == pytest.approx(1.0)
    assert nees(np.ones(4), 2 * np.eye(4), n=2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nees(np.ones(3), -np.eye(3))
    with pytest.raises(ValueError):
        nees(np.ones(3), np.eye(4))


def test_nees_congruence_invariance(rng):
    for _ in range(50):
        n = 16
        a = rng.normal(size=(n, n))
        sigma = a @ a.T + np.eye(n)
        j = rng.normal(size=(n, n)) + 3 * np.eye(n)
        eps = rng.normal(size=n)
        assert nees(j @ eps, j @ sigma @ j.T) == pytest.approx(nees(eps, sigma), rel=1e-8)


def test_consistent_ensemble_median(rng):
    n = 20
    a = rng.normal(size=(n, n))
    sigma = a @ a.T + np.eye(n)
    eps = rng.multivariate_normal(np.zeros(n), sigma, size=4000)
    med = np.median([nees(e, sigma) for e in eps])
    assert med == pytest.approx(chi2.median(n) / n, rel=0.03)


def test_divergence_flag():
    t = np.arange(0, 60, 0.005)
    assert not is_divergent(True, t, np.full(len(t), 9.0))
    assert is_divergent(True, t, np.full(len(t), 11.0))
    assert is_divergent(False, t, np.zeros(len(t)))
    ape = np.zeros(len(t))
    ape[5] = np.inf
    assert is_divergent(True, t, ape)


def test_error_series_windows(rng):
    n = 100
    t = np.arange(n) * 0.5
    r = np.repeat(np.eye(3)[None], n, axis=0)
    z = np.zeros((n, 3))
    es = error_series((r, z, z, np.zeros(n)), (r, z + 1.0, z, np.full(n, 0.01)), t, np.ones(n),
                      np.arange(n) % 2 == 0, "eqf", 20, 3)
    assert es.final_window().sum() == 60  # t >= 19.5
    row = es.rmse_row()
    assert row["velocity_mps"] == pytest.approx(np.sqrt(3))
    assert row["delay_ms"] == pytest.approx(10.0)
    assert not es.diverged and es.n == 20
