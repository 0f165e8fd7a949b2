"""EKF baselines on SE_2(3) x R^6 (x R for the online-delay variant).

The pose error is right-invariant, ``T = exp(xi) T_hat`` with
``xi = (theta, nu, rho)``; biases and delay use additive errors. The pose is
stored as an isochronous 5x5 Galilean matrix so propagation shares the exact
discretization ``T <- exp(-g_N dt) T exp((w - b) dt)`` with the EqF.

Error layout: ``[theta(3), nu(3), rho(3), b_omega(3), b_a(3), (delta)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .eqf import FilterDivergence, gravity_input, is_spd
from .liegroups import (
    GalElement,
    Se23Element,
    gal_adjoint_mat,
    gal_exp_mat,
    gal_inv_mat,
    gal_jac_left_mat,
    gal_log_vec,
    gal_mat,
    gal_mul,
    skew,
    wedge,
)
from .preintegration import PreintBuffer, propagate_arr as buffer_propagate_arr, query_arr

__all__ = [
    "EkfVariant",
    "EkfNoise",
    "EkfState",
    "EkfFilter",
    "ekf_propagate",
    "ekf_update",
    "ekf_jacobians",
    "ekf_output",
    "ekf_output_jacobian",
    "parse_variant",
]


@dataclass(frozen=True)
class EkfVariant:
    kind: str  # "no-delay" | "fixed" | "online"
    delay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("no-delay", "fixed", "online"):
            raise ValueError(f"unknown EKF variant {self.kind!r}")
        if self.kind == "fixed" and not self.delay >= 0:
            raise ValueError("fixed delay must be non-negative")

    @property
    def online(self) -> bool:
        return self.kind == "online"

    @property
    def dim(self) -> int:
        return 16 if self.online else 15

    @property
    def name(self) -> str:
        if self.kind == "fixed":
            return f"ekf-fixed:{self.delay:g}"
        return f"ekf-{self.kind}"

    @classmethod
    def no_delay(cls) -> EkfVariant:
        return cls("no-delay")

    @classmethod
    def fixed(cls, delay: float) -> EkfVariant:
        return cls("fixed", float(delay))

    @classmethod
    def online_delay(cls) -> EkfVariant:
        return cls("online")


def parse_variant(text: str) -> EkfVariant:
    """``ekf-no-delay``, ``ekf-fixed:<seconds>`` or ``ekf-online``."""
    if text == "ekf-no-delay":
        return EkfVariant.no_delay()
    if text == "ekf-online":
        return EkfVariant.online_delay()
    if text.startswith("ekf-fixed:"):
        try:
            d = float(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad fixed delay in {text!r}") from None
        return EkfVariant.fixed(d)
    raise ValueError(f"unknown EKF filter {text!r}")


@dataclass(frozen=True)
class EkfNoise:
    gyro_noise: float = 0.005
    accel_noise: float = 0.05
    gyro_bias_rw: float = 1e-4
    accel_bias_rw: float = 1e-4
    delay_rw: float = 1e-3  # sqrt of the 1e-6 s^2/s density
    gnss_pos_std: float = 0.5

    def q_diag(self) -> np.ndarray:
        """Densities for (gyro, accel, gyro bias rw, accel bias rw, delay rw)."""
        return np.concatenate([
            np.full(3, self.gyro_noise**2), np.full(3, self.accel_noise**2),
            np.full(3, self.gyro_bias_rw**2), np.full(3, self.accel_bias_rw**2),
            [self.delay_rw**2],
        ])


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _embed_bias(b6):
    b = np.zeros(10)
    b[0:6] = b6
    return b


@njit(cache=True)
def ekf_jacobians_arr(t, b6, w, g_n, dt, online):
    """(Phi, G) for the error step; G maps (eta_w(6), eta_b(6), eta_delta) to the error."""
    n = 16 if online else 15
    wc = w - _embed_bias(b6)
    a1 = gal_adjoint_mat(gal_exp_mat(-g_n * dt))
    m = a1 @ gal_adjoint_mat(t) @ gal_jac_left_mat(wc * dt)
    phi = np.eye(n)
    phi[0:9, 0:9] = a1[0:9, 0:9]
    phi[0:9, 9:15] = -m[0:9, 0:6] * dt
    g = np.zeros((n, 13))
    g[0:9, 0:6] = -m[0:9, 0:6] * dt
    g[9:15, 6:12] = np.eye(6) * dt
    if online:
        g[15, 12] = dt
    return phi, g


@njit(cache=True)
def ekf_propagate_kernel(t, b6, p, w, g_n, qd, dt, online, entries, inputs, count):
    phi, g = ekf_jacobians_arr(t, b6, w, g_n, dt, online)
    qm = np.diag(qd) / dt
    p = phi @ p @ phi.T + g @ qm @ g.T
    p = 0.5 * (p + p.T)
    wc = w - _embed_bias(b6)
    t_new = gal_mul(gal_mul(gal_exp_mat(-g_n * dt), t), gal_exp_mat(wc * dt))
    t_new[3, 4] = 0.0
    count = buffer_propagate_arr(entries, inputs, count, wc, dt)
    return t_new, p, count


@njit(cache=True)
def ekf_predict_kernel(t, delta, g_n, p0, entries, inputs, count, dt):
    ups, clamped, wseg = query_arr(entries, inputs, count, dt, delta)
    m = gal_mul(gal_mul(gal_exp_mat(g_n * delta), t), gal_inv_mat(ups))
    ybar = np.zeros(5)
    ybar[0:3] = p0
    ybar[4] = 1.0
    q = m @ ybar
    return q, m, wseg, clamped, ybar


@njit(cache=True)
def ekf_output_jacobian_arr(t, delta, g_n, p0, entries, inputs, count, dt, online):
    q, m, wseg, clamped, ybar = ekf_predict_kernel(t, delta, g_n, p0, entries, inputs, count, dt)
    n = 16 if online else 15
    h = np.zeros((3, n))
    c = np.zeros((3, 10))
    c[:, 0:3] = -skew(q[0:3].copy())
    # nonzero only when the buffer query was clamped
    for i in range(3):
        c[i, 3 + i] = q[3]
    c[0, 6] = 1.0
    c[1, 7] = 1.0
    c[2, 8] = 1.0
    c = c @ gal_adjoint_mat(gal_exp_mat(g_n * delta))
    h[:, 0:9] = c[:, 0:9]
    if online:
        dq = wedge(g_n) @ q
        if not clamped:
            dq -= m @ (wedge(wseg) @ ybar)
        h[:, 15] = dq[0:3]
    return q[0:3].copy(), h, clamped


@njit(cache=True)
def ekf_update_kernel(t, b6, delta, p, y, rmat, g_n, p0, entries, inputs, count, dt, online):
    hpred, hm, clamped = ekf_output_jacobian_arr(t, delta, g_n, p0, entries, inputs, count, dt, online)
    n = p.shape[0]
    r = y - hpred
    s = hm @ p @ hm.T + rmat
    k = np.linalg.solve(s, hm @ p).T
    dx = k @ r
    ikh = np.eye(n) - k @ hm
    p = ikh @ p @ ikh.T + k @ rmat @ k.T
    p = 0.5 * (p + p.T)
    xi = np.zeros(10)
    xi[0:9] = dx[0:9]
    t_new = gal_mul(gal_exp_mat(xi), t)
    t_new[3, 4] = 0.0
    b_new = b6 + dx[9:15]
    d_new = delta
    if online:
        # a delay cannot be negative nor exceed the buffered history
        d_new = min(max(delta + dx[15], 0.0), (entries.shape[0] - 1) * dt)
    return t_new, b_new, d_new, p, r, s, clamped


# --------------------------------------------------------------------------
# value-level API
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EkfState:
    t: Se23Element
    bias: np.ndarray
    delta: float
    sigma: np.ndarray
    variant: EkfVariant

    def __post_init__(self):
        n = self.variant.dim
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (n, n):
            raise ValueError(f"sigma must be {n}x{n} for {self.variant.name}")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float).reshape(6).copy())
        if self.variant.kind == "no-delay" and self.delta != 0.0:
            raise ValueError("no-delay variant requires delta = 0")
        if self.variant.kind == "fixed" and self.delta != self.variant.delay:
            raise ValueError("fixed variant requires delta equal to the configured delay")

    def _mat(self) -> np.ndarray:
        return self.t.as_gal().as_matrix()


def _check(p, t, where):
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise FilterDivergence(f"non-finite EKF state after {where}", {"stage": where})
    if not is_spd(p):
        eig = np.linalg.eigvalsh(0.5 * (p + p.T))
        raise FilterDivergence(
            f"EKF covariance lost positive definiteness after {where}",
            {"stage": where, "min_eig": float(eig.min())},
        )


def _w_of(u) -> np.ndarray:
    return u.w_n.vec if hasattr(u, "w_n") else np.asarray(u, dtype=float).reshape(10)


def ekf_jacobians(s: EkfState, u, dt: float, g_n=None):
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    return ekf_jacobians_arr(s._mat(), s.bias, _w_of(u), g, float(dt), s.variant.online)


def ekf_propagate(s: EkfState, u, buf: PreintBuffer, dt: float, noise: EkfNoise | None = None, g_n=None) -> EkfState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    noise = noise or EkfNoise()
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    t, p, buf.count = ekf_propagate_kernel(
        s._mat(), s.bias, s.sigma, _w_of(u), g, noise.q_diag(),
        float(dt), s.variant.online, buf.entries, buf.inputs, buf.count,
    )
    _check(p, t, "propagation")
    return EkfState(Se23Element.from_gal(GalElement.from_matrix(t)), s.bias, s.delta, p, s.variant)


def ekf_output(s: EkfState, buf: PreintBuffer, p0=None, g_n=None) -> np.ndarray:
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    lever = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
    q = ekf_predict_kernel(s._mat(), s.delta, g, lever, buf.entries, buf.inputs, buf.count, buf.dt)[0]
    return q[0:3].copy()


def ekf_output_jacobian(s: EkfState, buf: PreintBuffer, p0=None, g_n=None) -> np.ndarray:
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    lever = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
    return ekf_output_jacobian_arr(
        s._mat(), s.delta, g, lever, buf.entries, buf.inputs, buf.count, buf.dt, s.variant.online
    )[1]


def ekf_update(s: EkfState, y_m, buf: PreintBuffer, r=None, p0=None, g_n=None) -> EkfState:
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    lever = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
    rmat = 0.25 * np.eye(3) if r is None else np.asarray(r, dtype=float)
    try:
        t, b, d, p, _, _, _ = ekf_update_kernel(
            s._mat(), s.bias, s.delta, s.sigma, np.asarray(y_m, dtype=float), rmat, g, lever,
            buf.entries, buf.inputs, buf.count, buf.dt, s.variant.online,
        )
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("singular innovation covariance", {"stage": "update"}) from exc
    _check(p, t, "update")
    return EkfState(Se23Element.from_gal(GalElement.from_matrix(t)), b, float(d), p, s.variant)


def initial_covariance(variant: EkfVariant, vel, pos, att_std, vel_std, pos_std,
                       gyro_bias_std, accel_bias_std, delay_std=0.3) -> np.ndarray:
    """World-frame prior mapped to right-invariant pose coordinates at the estimate."""
    lin = np.zeros((9, 9))
    lin[0:3, 0:3] = np.eye(3)
    lin[3:6, 0:3] = skew(np.asarray(vel, dtype=float))
    lin[3:6, 3:6] = np.eye(3)
    lin[6:9, 0:3] = skew(np.asarray(pos, dtype=float))
    lin[6:9, 6:9] = np.eye(3)
    pt = lin @ np.diag(np.repeat([att_std**2, vel_std**2, pos_std**2], 3)) @ lin.T
    n = variant.dim
    p = np.zeros((n, n))
    p[0:9, 0:9] = pt
    p[9:12, 9:12] = gyro_bias_std**2 * np.eye(3)
    p[12:15, 12:15] = accel_bias_std**2 * np.eye(3)
    if variant.online:
        p[15, 15] = delay_std**2
    return 0.5 * (p + p.T)


class EkfFilter:
    """Stateful EKF owning its buffer; mirrors :class:`galins.eqf.EqFilter`."""

    def __init__(self, variant: EkfVariant, rot, vel, pos, bias6, sigma, noise: EkfNoise,
                 dt: float, p0=None, g_n=None, delta0: float = 0.0, horizon: float = 0.5):
        self.variant = variant
        self.name = variant.name
        self.noise = noise
        self.q = noise.q_diag()
        self.rmat = noise.gnss_pos_std**2 * np.eye(3)
        self.p0 = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
        self.g_n = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
        self.dt = float(dt)
        self.buffer = PreintBuffer(dt, horizon)
        self.t = gal_mat(np.asarray(rot, float), np.asarray(vel, float), np.asarray(pos, float), 0.0)
        self.b = np.asarray(bias6, dtype=float).reshape(6).copy()
        if variant.kind == "fixed":
            self.delta = variant.delay
        elif variant.kind == "no-delay":
            self.delta = 0.0
        else:
            self.delta = float(delta0)
        self.sigma = np.array(sigma, dtype=float)
        self.last_nis = np.nan
        self.clamped = False

    @property
    def dim(self) -> int:
        return self.variant.dim

    def propagate(self, w: np.ndarray):
        t, p, self.buffer.count = ekf_propagate_kernel(
            self.t, self.b, self.sigma, w, self.g_n, self.q, self.dt,
            self.variant.online, self.buffer.entries, self.buffer.inputs, self.buffer.count,
        )
        _check(p, t, "propagation")
        self.t, self.sigma = t, p

    def update(self, y: np.ndarray):
        try:
            t, b, d, p, r, sm, clamped = ekf_update_kernel(
                self.t, self.b, self.delta, self.sigma, y, self.rmat, self.g_n, self.p0,
                self.buffer.entries, self.buffer.inputs, self.buffer.count, self.dt,
                self.variant.online,
            )
        except np.linalg.LinAlgError as exc:
            raise FilterDivergence("singular innovation covariance", {"stage": "update"}) from exc
        _check(p, t, "update")
        self.t, self.b, self.delta, self.sigma = t, b, float(d), p
        self.last_nis = float(r @ np.linalg.solve(sm, r))
        self.clamped = bool(clamped)

    def pose(self):
        return self.t[:3, :3].copy(), self.t[:3, 3].copy(), self.t[:3, 4].copy(), float(self.delta)

    def bias(self) -> np.ndarray:
        return _embed_bias(self.b)

    def error(self, t_true: np.ndarray, b_true6: np.ndarray, delta_true: float) -> np.ndarray:
        xi = gal_log_vec(gal_mul(t_true, gal_inv_mat(self.t)))
        e = np.zeros(self.dim)
        e[0:9] = xi[0:9]
        e[9:15] = b_true6 - self.b
        if self.variant.online:
            e[15] = delta_true - self.delta
        return e
