"""Discrete-time Equivariant Filter for biased INS with a delayed GNSS position.

The estimate lives on the tangent group ``G = Gal(3) x| gal(3)``; the system
state is ``xi = (F, b)`` with ``F = (R, v, p, delta)`` the cross-body Galilean
frame and ``b`` the ten bias states ``(b_omega, b_a, b_nu, b_rho)``. The origin
is fixed to ``(I, 0)`` so the error in normal coordinates is
``eps = log(X X_hat^-1)`` and corrections are applied on the left.

Error-state layout (20): ``[theta, nu, rho, tau | bias part in the same order]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .liegroups import (
    GalElement,
    GalTangent,
    Se23Element,
    TangentGroupElement,
    gal_adjoint_mat,
    gal_exp_mat,
    gal_inv_mat,
    gal_jac_left_mat,
    gal_mul,
    skew,
    tg_compose_arr,
    tg_exp_arr,
    tg_jac_left_mat,
    tg_log_arr,
    wedge,
)
from .preintegration import PreintBuffer, propagate_arr as buffer_propagate_arr, query_arr

__all__ = [
    "FilterDivergence",
    "SystemState",
    "InputSample",
    "NoiseConfig",
    "EqfState",
    "EqFilter",
    "state_action",
    "lift",
    "error_coordinates",
    "state_matrices",
    "propagate",
    "measure_model",
    "output_matrix",
    "update",
    "navigation_output",
    "gravity_input",
    "default_q",
    "initial_covariance",
]

GRAVITY = np.array([0.0, 0.0, -9.81])


class FilterDivergence(RuntimeError):
    """Covariance lost positive definiteness or the state became non-finite."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def gravity_input(gravity=GRAVITY, omega_earth=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Constant Earth-frame input ``g_N = (omega_E, -g, 0, 1)``."""
    g = np.zeros(10)
    g[0:3] = omega_earth
    g[3:6] = -np.asarray(gravity, dtype=float)
    g[9] = 1.0
    return g


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def is_spd(m):
    """Cholesky attempt without raising."""
    n = m.shape[0]
    l = np.zeros((n, n))
    for j in range(n):
        s = m[j, j]
        for k in range(j):
            s -= l[j, k] * l[j, k]
        if not s > 0.0:
            return False
        l[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = m[i, j]
            for k in range(j):
                s -= l[i, k] * l[j, k]
            l[i, j] = s / l[j, j]
    return True


@njit(cache=True)
def origin_action_arr(xf, xb):
    """phi(X, origin) = (X_F, -Ad_{X_F^-1} X_b)."""
    return xf.copy(), -(gal_adjoint_mat(gal_inv_mat(xf)) @ xb)


@njit(cache=True)
def state_action_arr(xf, xb, f, b):
    return gal_mul(f, xf), gal_adjoint_mat(gal_inv_mat(xf)) @ (b - xb)


@njit(cache=True)
def origin_inverse_arr(f, b):
    """The unique X with phi(X, origin) = (f, b)."""
    return f.copy(), -(gal_adjoint_mat(f) @ b)


@njit(cache=True)
def lift_arr(f, b, w, tau, g_n, dt):
    lf = gal_mul(
        gal_exp_mat(-(gal_adjoint_mat(gal_inv_mat(f)) @ g_n) * dt),
        gal_exp_mat((w - b) * dt),
    )
    lb = b - gal_adjoint_mat(lf) @ (b + tau * dt)
    return lf, lb


@njit(cache=True)
def state_matrices_arr(xf, xb, w, g_n, dt):
    adx = gal_adjoint_mat(xf)
    w_ring = adx @ w + xb
    jl = gal_jac_left_mat(w_ring * dt)
    a1 = gal_adjoint_mat(gal_exp_mat(-g_n * dt))
    a2 = a1 @ gal_adjoint_mat(gal_exp_mat(w_ring * dt))
    a1j = a1 @ jl
    a = np.zeros((20, 20))
    a[0:10, 0:10] = a1
    a[0:10, 10:20] = a1j * dt
    a[10:20, 10:20] = a2
    b = np.zeros((20, 20))
    b[0:10, 0:10] = -(a1j @ adx) * dt
    b[10:20, 10:20] = (a2 @ adx) * dt
    return a, b


@njit(cache=True)
def propagate_kernel(xf, xb, sigma, w, tau, g_n, q, dt, entries, inputs, count):
    a, bm = state_matrices_arr(xf, xb, w, g_n, dt)
    sigma = a @ sigma @ a.T + (bm @ q @ bm.T) / dt
    sigma = 0.5 * (sigma + sigma.T)
    f, b = origin_action_arr(xf, xb)
    lf, lb = lift_arr(f, b, w, tau, g_n, dt)
    xf_new, xb_new = tg_compose_arr(xf, xb, lf, lb)
    wc = w - b
    # b_rho is a virtual bias on the time generator; the buffer keeps tau = 1
    wc[9] = 1.0
    count = buffer_propagate_arr(entries, inputs, count, wc, dt)
    return xf_new, xb_new, sigma, count


@njit(cache=True)
def predict_kernel(xf, p0, entries, inputs, count, dt):
    """Predicted delayed position plus the pieces needed for linearization."""
    ups, clamped, wseg = query_arr(entries, inputs, count, dt, xf[3, 4])
    m = gal_mul(xf, gal_inv_mat(ups))
    h = m[:3, :3].copy() @ p0 + m[:3, 4]
    return h, m, wseg, clamped


@njit(cache=True)
def output_matrix_arr(h, m, wseg, p0, clamped=False):
    c = np.zeros((3, 20))
    c[:, 0:3] = -skew(h)
    # boosts move the prediction only through a residual time slot (clamped query)
    for i in range(3):
        c[i, 3 + i] = m[3, 4]
    c[0, 6] = 1.0
    c[1, 7] = 1.0
    c[2, 8] = 1.0
    ybar = np.zeros(5)
    ybar[0:3] = p0
    ybar[4] = 1.0
    if not clamped:
        # a clamped query no longer moves with the delay
        d = m @ (wedge(wseg) @ ybar)
        c[:, 9] = -d[0:3]
    return c


@njit(cache=True)
def project_delay_arr(xf, xb, g_n, lo, hi):
    """Move delta_hat into [lo, hi] along the gravity input, keeping pose and bias estimates."""
    d = xf[3, 4]
    if d >= lo and d <= hi:
        return xf, xb
    shift = (lo if d < lo else hi) - d
    f, b = origin_action_arr(xf, xb)
    return origin_inverse_arr(gal_mul(gal_exp_mat(g_n * shift), f), b)


@njit(cache=True)
def update_kernel(xf, xb, sigma, y, p0, rmat, g_n, entries, inputs, count, dt):
    h, m, wseg, clamped = predict_kernel(xf, p0, entries, inputs, count, dt)
    r = y - h
    c = output_matrix_arr(h, m, wseg, p0, clamped)
    s = c @ sigma @ c.T + rmat
    k = np.linalg.solve(s, c @ sigma).T
    delta = k @ r
    sigma = (np.eye(20) - k @ c) @ sigma
    jl = tg_jac_left_mat(delta)
    sigma = jl @ sigma @ jl.T
    sigma = 0.5 * (sigma + sigma.T)
    ef, eb = tg_exp_arr(delta)
    xf_new, xb_new = tg_compose_arr(ef, eb, xf, xb)
    xf_new, xb_new = project_delay_arr(xf_new, xb_new, g_n, 0.0, (entries.shape[0] - 1) * dt)
    return xf_new, xb_new, sigma, r, s, clamped


@njit(cache=True)
def error_kernel(xf, xb, f_true, b_true):
    tf, tb = origin_inverse_arr(f_true, b_true)
    hf, hb = tg_compose_arr(tf, tb, gal_inv_mat(xf), -(gal_adjoint_mat(gal_inv_mat(xf)) @ xb))
    return tg_log_arr(hf, hb)


# --------------------------------------------------------------------------
# value types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemState:
    f: GalElement
    b: GalTangent

    @classmethod
    def origin(cls) -> SystemState:
        return cls(GalElement.identity(), GalTangent.zero())


@dataclass(frozen=True, eq=False)
class InputSample:
    """Biased inertial input ``w_n = (omega, a, 0, 1)`` and bias random-walk rate."""

    w_n: GalTangent
    tau_rw: GalTangent = field(default_factory=GalTangent.zero)

    def __post_init__(self):
        w = self.w_n.vec
        if np.any(w[6:9] != 0.0) or w[9] != 1.0:
            raise ValueError("w_n must have the form (omega, a, 0, 1)")

    @classmethod
    def from_imu(cls, omega, accel, tau_rw=None) -> InputSample:
        w = GalTangent.from_parts(omega, accel, (0, 0, 0), 1.0)
        return cls(w, GalTangent.zero() if tau_rw is None else GalTangent(tau_rw))


def default_q(
    gyro_noise=0.005,
    accel_noise=0.05,
    gyro_bias_rw=1e-4,
    accel_bias_rw=1e-4,
    virtual_bias_rw=1e-8,
) -> np.ndarray:
    """Continuous-time input noise density over ``(eta_w, eta_tau)``.

    The rho and tau slots of ``w_N`` are structurally noiseless.
    """
    d = np.zeros(20)
    d[0:3] = gyro_noise**2
    d[3:6] = accel_noise**2
    d[10:13] = gyro_bias_rw**2
    d[13:16] = accel_bias_rw**2
    d[16:20] = virtual_bias_rw**2
    return np.diag(d)


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    q: np.ndarray = field(default_factory=default_q)
    r: np.ndarray = field(default_factory=lambda: 0.5**2 * np.eye(3))
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_n: np.ndarray = field(default_factory=gravity_input)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(20, 20)
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        for name, m in (("q", q), ("r", r)):
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        for i in (6, 7, 8, 9):
            if np.abs(q[i]).max() > 1e-12 or np.abs(q[:, i]).max() > 1e-12:
                raise ValueError("rho and tau slots of w_N must carry no noise")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3).copy())
        object.__setattr__(self, "g_n", np.asarray(self.g_n, dtype=float).reshape(10).copy())


@dataclass(frozen=True, eq=False)
class EqfState:
    x_hat: TangentGroupElement
    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float).reshape(20, 20)
        object.__setattr__(self, "sigma", s)

    @property
    def origin(self) -> SystemState:
        return SystemState.origin()

    @classmethod
    def from_system(cls, xi: SystemState, sigma) -> EqfState:
        f, b = origin_inverse_arr(xi.f.as_matrix(), xi.b.vec)
        return cls(TangentGroupElement(GalElement.from_matrix(f), GalTangent(b)), sigma)

    def _arrays(self):
        return self.x_hat.f.as_matrix(), self.x_hat.b.vec.copy()

    def estimate(self) -> SystemState:
        f, b = origin_action_arr(*self._arrays())
        return SystemState(GalElement.from_matrix(f), GalTangent(b))


def _tg(f, b) -> TangentGroupElement:
    return TangentGroupElement(GalElement.from_matrix(f), GalTangent(b))


def _check(sigma, xf, where: str):
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(xf))):
        raise FilterDivergence(f"non-finite state after {where}", {"stage": where})
    if not is_spd(sigma):
        eig = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
        raise FilterDivergence(
            f"covariance lost positive definiteness after {where}",
            {"stage": where, "min_eig": float(eig.min()), "max_eig": float(eig.max())},
        )


# --------------------------------------------------------------------------
# value-level operations
# --------------------------------------------------------------------------


def state_action(x: TangentGroupElement, xi: SystemState) -> SystemState:
    f, b = state_action_arr(x.f.as_matrix(), x.b.vec, xi.f.as_matrix(), xi.b.vec)
    return SystemState(GalElement.from_matrix(f), GalTangent(b))


def lift(xi: SystemState, u: InputSample, dt: float, g_n=None) -> TangentGroupElement:
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    lf, lb = lift_arr(xi.f.as_matrix(), xi.b.vec, u.w_n.vec, u.tau_rw.vec, g, float(dt))
    return _tg(lf, lb)


def error_coordinates(x_hat: TangentGroupElement, xi_true: SystemState) -> np.ndarray:
    """Normal coordinates ``log(phi_origin^-1(phi(X_hat^-1, xi)))``."""
    return error_kernel(x_hat.f.as_matrix(), x_hat.b.vec, xi_true.f.as_matrix(), xi_true.b.vec)


def state_matrices(s: EqfState, u: InputSample, dt: float, g_n=None):
    """Discrete error-dynamics matrices ``(A, B)`` at the current estimate."""
    g = gravity_input() if g_n is None else np.asarray(g_n, dtype=float)
    xf, xb = s._arrays()
    return state_matrices_arr(xf, xb, u.w_n.vec, g, float(dt))


def propagate(s: EqfState, u: InputSample, buf: PreintBuffer, dt: float, cfg: NoiseConfig | None = None) -> EqfState:
    """Covariance, then state through the lift, then the buffer (mutated in place)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = cfg or NoiseConfig()
    xf, xb = s._arrays()
    xf, xb, sigma, buf.count = propagate_kernel(
        xf, xb, s.sigma, u.w_n.vec, u.tau_rw.vec, cfg.g_n, cfg.q, float(dt),
        buf.entries, buf.inputs, buf.count,
    )
    _check(sigma, xf, "propagation")
    return EqfState(_tg(xf, xb), sigma)


@dataclass(frozen=True, eq=False)
class Prediction:
    h: np.ndarray
    clamped: bool


def measure_model(s: EqfState, buf: PreintBuffer, cfg: NoiseConfig) -> Prediction:
    xf, _ = s._arrays()
    h, _, _, clamped = predict_kernel(xf, cfg.p0, buf.entries, buf.inputs, buf.count, buf.dt)
    return Prediction(h, bool(clamped))


def output_matrix(s: EqfState, buf: PreintBuffer, cfg: NoiseConfig) -> np.ndarray:
    xf, _ = s._arrays()
    h, m, wseg, clamped = predict_kernel(xf, cfg.p0, buf.entries, buf.inputs, buf.count, buf.dt)
    return output_matrix_arr(h, m, wseg, cfg.p0, clamped)


@dataclass(frozen=True, eq=False)
class UpdateResult:
    state: EqfState
    residual: np.ndarray
    innovation_cov: np.ndarray
    clamped: bool

    @property
    def nis(self) -> float:
        return float(self.residual @ np.linalg.solve(self.innovation_cov, self.residual))


def update(s: EqfState, y_m, buf: PreintBuffer, cfg: NoiseConfig) -> UpdateResult:
    xf, xb = s._arrays()
    y = np.asarray(y_m, dtype=float).reshape(3)
    try:
        xf, xb, sigma, r, sm, clamped = update_kernel(
            xf, xb, s.sigma, y, cfg.p0, cfg.r, cfg.g_n, buf.entries, buf.inputs, buf.count, buf.dt
        )
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("singular innovation covariance", {"stage": "update"}) from exc
    _check(sigma, xf, "update")
    return UpdateResult(EqfState(_tg(xf, xb), sigma), r, sm, bool(clamped))


@dataclass(frozen=True, eq=False)
class NavigationOutput:
    t_hat: Se23Element
    delta_hat: float
    bias_hat: GalTangent


def navigation_output(s: EqfState, cfg: NoiseConfig | None = None) -> NavigationOutput:
    cfg = cfg or NoiseConfig()
    xf, xb = s._arrays()
    delta = float(xf[3, 4])
    t = gal_mul(gal_exp_mat(-cfg.g_n * delta), xf)
    _, b = origin_action_arr(xf, xb)
    return NavigationOutput(Se23Element.from_gal(GalElement.from_matrix(t)), delta, GalTangent(b))


def initial_covariance(
    f_hat: GalElement,
    g_n,
    att_std: float,
    vel_std: float,
    pos_std: float,
    delay_std: float,
    gyro_bias_std: float,
    accel_bias_std: float,
    nu_bias_std: float = 1e-4,
    rho_bias_std: float = 1e-4,
) -> np.ndarray:
    """Map a world-frame prior on (attitude, velocity, position, delay, biases)
    to the filter's normal coordinates at the estimate ``f_hat``."""
    g = np.asarray(g_n, dtype=float)
    fm = f_hat.as_matrix()
    delta = fm[3, 4]
    t_hat = gal_mul(gal_exp_mat(-g * delta), fm)
    lin = np.zeros((10, 9))
    lin[0:3, 0:3] = np.eye(3)
    lin[3:6, 0:3] = skew(t_hat[:3, 3].copy())
    lin[3:6, 3:6] = np.eye(3)
    lin[6:9, 0:3] = skew(t_hat[:3, 4].copy())
    lin[6:9, 6:9] = np.eye(3)
    jac = np.zeros((20, 20))
    jac[0:10, 0:9] = gal_adjoint_mat(gal_exp_mat(g * delta)) @ lin
    jac[0:10, 9] = g
    jac[10:20, 10:20] = -gal_adjoint_mat(fm)
    d = np.concatenate([
        np.full(3, att_std**2), np.full(3, vel_std**2), np.full(3, pos_std**2), [delay_std**2],
        np.full(3, gyro_bias_std**2), np.full(3, accel_bias_std**2),
        np.full(3, nu_bias_std**2), [rho_bias_std**2],
    ])
    sigma = jac @ np.diag(d) @ jac.T
    return 0.5 * (sigma + sigma.T)


class EqFilter:
    """Stateful wrapper owning the estimate, covariance and preintegration buffer."""

    name = "eqf"

    def __init__(self, xi_init: SystemState, sigma_init, cfg: NoiseConfig, dt: float, horizon: float = 0.5):
        self.cfg = cfg
        self.dt = float(dt)
        self.buffer = PreintBuffer(dt, horizon)
        xf, xb = origin_inverse_arr(xi_init.f.as_matrix(), xi_init.b.vec)
        self.xf = xf
        self.xb = xb
        self.sigma = np.array(sigma_init, dtype=float).reshape(20, 20)
        self.last_residual = None
        self.last_nis = np.nan
        self.clamped = False

    @property
    def dim(self) -> int:
        return 20

    @property
    def state(self) -> EqfState:
        return EqfState(_tg(self.xf, self.xb), self.sigma)

    def propagate(self, w: np.ndarray, tau: np.ndarray | None = None):
        tau = np.zeros(10) if tau is None else tau
        xf, xb, sigma, self.buffer.count = propagate_kernel(
            self.xf, self.xb, self.sigma, w, tau, self.cfg.g_n, self.cfg.q, self.dt,
            self.buffer.entries, self.buffer.inputs, self.buffer.count,
        )
        _check(sigma, xf, "propagation")
        self.xf, self.xb, self.sigma = xf, xb, sigma

    def update(self, y: np.ndarray):
        try:
            xf, xb, sigma, r, sm, clamped = update_kernel(
                self.xf, self.xb, self.sigma, y, self.cfg.p0, self.cfg.r, self.cfg.g_n,
                self.buffer.entries, self.buffer.inputs, self.buffer.count, self.dt,
            )
        except np.linalg.LinAlgError as exc:
            raise FilterDivergence("singular innovation covariance", {"stage": "update"}) from exc
        _check(sigma, xf, "update")
        self.xf, self.xb, self.sigma = xf, xb, sigma
        self.last_residual = r
        self.last_nis = float(r @ np.linalg.solve(sm, r))
        self.clamped = bool(clamped)

    def pose(self):
        """Current (R, v, p, delta_hat) with T_hat = Gamma(delta_hat)^-1 X_F."""
        delta = self.xf[3, 4]
        t = gal_mul(gal_exp_mat(-self.cfg.g_n * delta), self.xf)
        return t[:3, :3].copy(), t[:3, 3].copy(), t[:3, 4].copy(), float(delta)

    def bias(self) -> np.ndarray:
        return origin_action_arr(self.xf, self.xb)[1]

    def error(self, f_true: np.ndarray, b_true: np.ndarray) -> np.ndarray:
        return error_kernel(self.xf, self.xb, f_true, b_true)
