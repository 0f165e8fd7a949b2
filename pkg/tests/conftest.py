import numpy as np
import pytest

from galins.liegroups import gal_exp_mat


def random_gal_vec(rng, scale=1.0, max_angle=2.5):
    u = rng.normal(size=10) * scale
    n = np.linalg.norm(u[:3])
    if n > max_angle:
        u[:3] *= max_angle / n
    return u


def random_gal(rng, scale=1.0, time=True):
    u = random_gal_vec(rng, scale)
    if not time:
        u[9] = 0.0
    return gal_exp_mat(u)


def central_diff(fun, x0, h=1e-6):
    """Jacobian of ``fun`` at ``x0`` by central differences, one column per coordinate."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(fun(x0))
    jac = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        jac[:, i] = (np.asarray(fun(x0 + e)) - np.asarray(fun(x0 - e))).ravel() / (2 * h)
    return jac


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
