"""Delay-indexed IMU preintegration on Gal(3).

A :class:`PreintBuffer` holds ``Upsilon(age)`` for ages ``0, dt, 2 dt, ...``
up to a fixed horizon. Every IMU step right-multiplies all entries by the
exponential of the (bias-corrected) input and prepends a fresh identity, so
looking up a delay is O(1) and changing the delay estimate never requires
re-integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .liegroups import GalElement, GalTangent, gal_exp_mat, gal_mul

__all__ = [
    "ImuWindow",
    "PreintBuffer",
    "QueryResult",
    "buffer_propagate",
    "batch_preintegrate",
    "query",
    "gamma",
    "inertial_input",
]

DEFAULT_HORIZON = 0.5
_ALIGN_TOL = 1e-9


def inertial_input(omega, accel) -> np.ndarray:
    """The extended input ``(omega, accel, 0, 1)``; stacks of samples give one row each."""
    omega = np.asarray(omega, dtype=float)
    w = np.zeros(omega.shape[:-1] + (10,))
    w[..., 0:3] = omega
    w[..., 3:6] = accel
    w[..., 9] = 1.0
    return w


@dataclass(frozen=True, eq=False)
class ImuWindow:
    """Uniformly sampled IMU data, oldest sample first."""

    t: np.ndarray
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        om = np.asarray(self.omega, dtype=float).reshape(-1, 3)
        ac = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(t) == len(om) == len(ac)):
            raise ValueError("timestamps, omega and accel must have equal length")
        if len(t) > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise ValueError("IMU timestamps must be strictly increasing")
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])) + 1e-12:
                raise ValueError("IMU timestamps must be uniformly spaced")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "accel", ac)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            raise ValueError("need at least two samples to infer dt")
        return float(self.t[1] - self.t[0])

    def inputs(self, bias=None) -> np.ndarray:
        """(n, 10) array of ``w_k - bias``."""
        w = np.zeros((len(self.t), 10))
        w[:, 0:3] = self.omega
        w[:, 3:6] = self.accel
        w[:, 9] = 1.0
        if bias is not None:
            w -= _bias_vec(bias)
        return w


def _bias_vec(bias) -> np.ndarray:
    b = bias.vec if isinstance(bias, GalTangent) else np.asarray(bias, dtype=float).reshape(10)
    return b


@njit(cache=True)
def _mul_into(out, x, y):
    # out = x @ y for Gal(3) matrices, without allocating
    for i in range(3):
        for j in range(3):
            out[i, j] = x[i, 0] * y[0, j] + x[i, 1] * y[1, j] + x[i, 2] * y[2, j]
        out[i, 3] = x[i, 0] * y[0, 3] + x[i, 1] * y[1, 3] + x[i, 2] * y[2, 3] + x[i, 3]
        out[i, 4] = (
            x[i, 0] * y[0, 4] + x[i, 1] * y[1, 4] + x[i, 2] * y[2, 4]
            + x[i, 3] * y[3, 4] + x[i, 4]
        )
    out[3, 4] = x[3, 4] + y[3, 4]


@njit(cache=True)
def propagate_arr(entries, inputs, count, w, dt):
    """Shift-and-multiply step on raw buffer arrays; returns the new count."""
    cap = entries.shape[0]
    n = count + 1
    if n > cap:
        n = cap
    step = gal_exp_mat(w * dt)
    for k in range(n - 1, 0, -1):
        _mul_into(entries[k], entries[k - 1], step)
        inputs[k] = inputs[k - 1]
    entries[0] = np.eye(5)
    inputs[0] = w
    return n


@njit(cache=True)
def query_arr(entries, inputs, count, dt, delta):
    """Returns (Upsilon(delta), clamped, input of the segment at delta).

    The segment input is the bias-corrected sample acting at time t - delta.
    """
    s = delta / dt
    clamped = False
    smax = count - 1.0
    if s < 0.0:
        s = 0.0
        clamped = True
    elif s > smax:
        s = smax
        clamped = True
    k = int(np.floor(s))
    alpha = s - k
    if alpha > 1.0 - _ALIGN_TOL:
        k += 1
        alpha = 0.0
    elif alpha < _ALIGN_TOL:
        alpha = 0.0
    seg = k
    if seg > count - 2:
        seg = count - 2
    if seg < 0:
        w = np.zeros(10)
        w[9] = 1.0
    else:
        w = inputs[seg].copy()
    if alpha == 0.0:
        return entries[k].copy(), clamped, w
    # geodesic interpolation towards the next-older entry; under the
    # piecewise-constant input it reduces to exp(alpha w dt) Upsilon_k
    return gal_mul(gal_exp_mat(w * (alpha * dt)), entries[k]), clamped, w


@dataclass(frozen=True, eq=False)
class QueryResult:
    upsilon: GalElement
    clamped: bool
    delta: float
    segment_input: np.ndarray


class PreintBuffer:
    """Sliding window of preintegration matrices indexed by age.

    The age-0 entry is always the identity. ``entries[k]`` has age ``k * dt``.
    """

    def __init__(self, dt: float, horizon: float = DEFAULT_HORIZON):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.dt = float(dt)
        self.horizon = float(horizon)
        cap = int(math.ceil(horizon / dt - 1e-9)) + 1
        self.entries = np.zeros((cap, 5, 5))
        self.entries[0] = np.eye(5)
        self.inputs = np.zeros((cap, 10))
        self.count = 1

    @property
    def capacity(self) -> int:
        return self.entries.shape[0]

    def __len__(self) -> int:
        return self.count

    def ages(self) -> np.ndarray:
        return np.arange(self.count) * self.dt

    @property
    def max_age(self) -> float:
        return (self.count - 1) * self.dt

    def entry(self, k: int) -> GalElement:
        if not 0 <= k < self.count:
            raise IndexError(k)
        return GalElement.from_matrix(self.entries[k])

    def copy(self) -> PreintBuffer:
        new = PreintBuffer.__new__(PreintBuffer)
        new.dt = self.dt
        new.horizon = self.horizon
        new.entries = self.entries.copy()
        new.inputs = self.inputs.copy()
        new.count = self.count
        return new

    def propagate(self, w_corrected, dt: float | None = None) -> PreintBuffer:
        """Advance one IMU step with the bias-corrected input (tau slot = 1)."""
        if dt is not None:
            if not dt > 0:
                raise ValueError("dt must be positive")
            if abs(dt - self.dt) > 1e-12 * max(1.0, self.dt):
                raise ValueError(f"buffer step is {self.dt}, got {dt}")
        w = _bias_vec(w_corrected).astype(float)
        if abs(w[9] - 1.0) > 1e-12:
            raise ValueError("input tau slot must be 1 so entry times track their ages")
        self.count = propagate_arr(self.entries, self.inputs, self.count, w, self.dt)
        return self

    def query(self, delta: float) -> QueryResult:
        if self.count < 1:
            raise ValueError("empty buffer")
        m, clamped, w = query_arr(self.entries, self.inputs, self.count, self.dt, float(delta))
        used = min(max(float(delta), 0.0), self.max_age)
        return QueryResult(GalElement.from_matrix(m), bool(clamped), used, w)


def buffer_propagate(buf: PreintBuffer, w_corrected, dt: float) -> PreintBuffer:
    """In-place propagation; returns ``buf`` for chaining."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return buf.propagate(w_corrected, dt)


def query(buf: PreintBuffer, delta: float) -> QueryResult:
    return buf.query(delta)


def batch_preintegrate(window: ImuWindow, delta: float, bias=None, dt: float | None = None) -> GalElement:
    """Direct ordered product of the exponentials of the last samples covering ``delta``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if bias is not None and abs(_bias_vec(bias)[9]) > 0:
        raise ValueError("bias must have a zero tau slot")
    step = window.dt if dt is None else float(dt)
    n = int(math.ceil(delta / step - _ALIGN_TOL)) if delta > 0 else 0
    if n > len(window):
        raise ValueError(
            f"delay {delta:g} s exceeds the window span ({len(window)} samples of {step:g} s)"
        )
    w = window.inputs(bias)
    out = np.eye(5)
    for k in range(len(window) - n, len(window)):
        out = gal_mul(out, gal_exp_mat(w[k] * step))
    return GalElement.from_matrix(out)


def gamma(delta: float, g_n) -> GalElement:
    """Earth-frame preintegration ``exp(g_N delta)``; exact for a constant input."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return GalElement.from_matrix(gal_exp_mat(_bias_vec(g_n) * float(delta)))
