"""Closed-form numerics for SO(3), SE_2(3), the Galilean group Gal(3) and its
left-trivialized tangent group ``Gal(3) x| gal(3)``.

Two layers live here:

* array kernels (``*_mat`` / ``*_vec`` / ``*_arr``) compiled with numba; the
  filters call these directly in their inner loops;
* small frozen dataclasses (:class:`GalElement`, :class:`GalTangent`, ...) with
  the value-level operations ``gal_compose``, ``gal_exp``, ``tg_compose`` etc.

Conventions
-----------
gal(3) coordinates are ordered ``(theta, nu, rho, tau)``::

    wedge(u) = [[theta^, nu, rho],
                [0,      0,  tau],
                [0,      0,  0  ]]

Left Jacobians satisfy ``exp((u + d)^) ~= exp((J_l(u) d)^) exp(u^)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "BranchAmbiguityError",
    "Rotation",
    "GalElement",
    "GalTangent",
    "TangentGroupElement",
    "Se23Element",
    "gal_compose",
    "gal_inverse",
    "gal_exp",
    "gal_log",
    "gal_adjoint",
    "gal_left_jacobian",
    "tg_compose",
    "tg_inverse",
    "tg_exp",
    "tg_log",
    "tg_left_jacobian",
    "se23_exp",
    "se23_log",
    "se23_compose",
    "se23_inverse",
]

# Below this angle the SO(3) coefficient functions switch to Taylor series.
SMALL_ANGLE = 1e-2
# Higher-order coefficients cancel catastrophically in closed form; sum them as series below this.
SERIES_ANGLE = 0.5
# log is refused within this distance of pi.
PI_MARGIN = 1e-6
SERIES_TOL = 1e-14
SERIES_MAX_TERMS = 30


class BranchAmbiguityError(ValueError):
    """Raised when a logarithm is requested for a rotation angle too close to pi."""


# --------------------------------------------------------------------------
# SO(3)
# --------------------------------------------------------------------------


@njit(cache=True)
def skew(w):
    m = np.zeros((3, 3))
    m[0, 1] = -w[2]
    m[0, 2] = w[1]
    m[1, 0] = w[2]
    m[1, 2] = -w[0]
    m[2, 0] = -w[1]
    m[2, 1] = w[0]
    return m


@njit(cache=True)
def unskew(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@njit(cache=True)
def _alt_series(p2, first, terms):
    """sum_k (-p2)^k / (2k + first)!"""
    term = 1.0
    for j in range(2, first + 1):
        term /= j
    total = term
    for k in range(1, terms):
        term *= -p2 / ((2 * k + first - 1) * (2 * k + first))
        total += term
    return total


@njit(cache=True)
def _so3_coeffs(phi):
    # a = sin(phi)/phi, b = (1-cos)/phi^2, c = (phi-sin)/phi^3,
    # d = (phi^2/2 + cos - 1)/phi^4
    p2 = phi * phi
    if phi < SMALL_ANGLE:
        a = 1.0 - p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0))
        b = 0.5 * (1.0 - p2 / 12.0 * (1.0 - p2 / 30.0 * (1.0 - p2 / 56.0)))
    else:
        a = np.sin(phi) / phi
        h = np.sin(0.5 * phi) / phi
        b = 2.0 * h * h
    if phi < SERIES_ANGLE:
        c = _alt_series(p2, 3, 10)
        d = _alt_series(p2, 4, 10)
    else:
        c = (phi - np.sin(phi)) / (p2 * phi)
        d = (0.5 * p2 + np.cos(phi) - 1.0) / (p2 * p2)
    return a, b, c, d


@njit(cache=True)
def so3_exp_mat(w):
    phi = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    a, b, _, _ = _so3_coeffs(phi)
    k = skew(w)
    return np.eye(3) + a * k + b * (k @ k)


@njit(cache=True)
def so3_jac_left(w):
    phi = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    _, b, c, _ = _so3_coeffs(phi)
    k = skew(w)
    return np.eye(3) + b * k + c * (k @ k)


@njit(cache=True)
def so3_jac_second(w):
    """Sum_k K^k / (k+2)!, the matrix multiplying ``nu * tau`` in Gal(3) exp."""
    phi = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    _, _, c, d = _so3_coeffs(phi)
    k = skew(w)
    return 0.5 * np.eye(3) + c * k + d * (k @ k)


@njit(cache=True)
def so3_jac_left_inv(w):
    phi = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    k = skew(w)
    if phi < 0.1:
        p2 = phi * phi
        e = 1.0 / 12.0 + p2 * (1.0 / 720.0 + p2 * (1.0 / 30240.0 + p2 * (1.0 / 1209600.0 + p2 / 47900160.0)))
    else:
        e = 1.0 / (phi * phi) - (1.0 + np.cos(phi)) / (2.0 * phi * np.sin(phi))
    return np.eye(3) - 0.5 * k + e * (k @ k)


@njit(cache=True)
def so3_angle(r):
    """Rotation angle in [0, pi], accurate across the whole range."""
    s = 0.5 * np.sqrt(
        (r[2, 1] - r[1, 2]) ** 2 + (r[0, 2] - r[2, 0]) ** 2 + (r[1, 0] - r[0, 1]) ** 2
    )
    c = 0.5 * (r[0, 0] + r[1, 1] + r[2, 2] - 1.0)
    return np.arctan2(s, c)


@njit(cache=True)
def so3_log_vec(r):
    phi = so3_angle(r)
    if np.pi - phi < PI_MARGIN:
        raise BranchAmbiguityError("rotation angle too close to pi for a unique log")
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if phi < SMALL_ANGLE:
        p2 = phi * phi
        scale = 1.0 + p2 / 6.0 + 7.0 * p2 * p2 / 360.0
    else:
        scale = phi / np.sin(phi)
    return scale * v


# --------------------------------------------------------------------------
# Gal(3)
# --------------------------------------------------------------------------


@njit(cache=True)
def wedge(u):
    m = np.zeros((5, 5))
    m[:3, :3] = skew(u[0:3])
    m[:3, 3] = u[3:6]
    m[:3, 4] = u[6:9]
    m[3, 4] = u[9]
    return m


@njit(cache=True)
def vee(m):
    u = np.empty(10)
    u[0:3] = unskew(m[:3, :3])
    u[3:6] = m[:3, 3]
    u[6:9] = m[:3, 4]
    u[9] = m[3, 4]
    return u


@njit(cache=True)
def gal_mat(rot, vel, pos, time):
    m = np.eye(5)
    m[:3, :3] = rot
    m[:3, 3] = vel
    m[:3, 4] = pos
    m[3, 4] = time
    return m


@njit(cache=True)
def gal_mul(x, y):
    """Product of two Gal(3) matrices using the block structure."""
    out = np.eye(5)
    a = x[:3, :3].copy()
    out[:3, :3] = a @ y[:3, :3].copy()
    out[:3, 3] = a @ y[:3, 3].copy() + x[:3, 3]
    out[:3, 4] = a @ y[:3, 4].copy() + x[:3, 3] * y[3, 4] + x[:3, 4]
    out[3, 4] = x[3, 4] + y[3, 4]
    return out


@njit(cache=True)
def gal_inv_mat(x):
    at = x[:3, :3].T.copy()
    a = x[:3, 3].copy()
    b = x[:3, 4].copy()
    c = x[3, 4]
    out = np.eye(5)
    out[:3, :3] = at
    out[:3, 3] = -(at @ a)
    out[:3, 4] = -(at @ (b - c * a))
    out[3, 4] = -c
    return out


@njit(cache=True)
def gal_exp_mat(u):
    th = u[0:3].copy()
    nu = u[3:6].copy()
    rho = u[6:9].copy()
    tau = u[9]
    phi = np.sqrt(th[0] * th[0] + th[1] * th[1] + th[2] * th[2])
    a, b, c, d = _so3_coeffs(phi)
    k = skew(th)
    k2 = k @ k
    eye = np.eye(3)
    rot = eye + a * k + b * k2
    jl = eye + b * k + c * k2
    n2 = 0.5 * eye + c * k + d * k2
    out = np.eye(5)
    out[:3, :3] = rot
    out[:3, 3] = jl @ nu
    out[:3, 4] = jl @ rho + (n2 @ nu) * tau
    out[3, 4] = tau
    return out


@njit(cache=True)
def gal_log_vec(x):
    th = so3_log_vec(x[:3, :3])
    jinv = so3_jac_left_inv(th)
    tau = x[3, 4]
    nu = jinv @ x[:3, 3].copy()
    rho = jinv @ (x[:3, 4].copy() - (so3_jac_second(th) @ nu) * tau)
    u = np.empty(10)
    u[0:3] = th
    u[3:6] = nu
    u[6:9] = rho
    u[9] = tau
    return u


@njit(cache=True)
def gal_adjoint_mat(x):
    """10x10 matrix of ``u -> vee(x wedge(u) x^-1)``."""
    a = x[:3, :3].copy()
    v = x[:3, 3].copy()
    p = x[:3, 4].copy()
    c = x[3, 4]
    m = np.zeros((10, 10))
    m[0:3, 0:3] = a
    m[3:6, 0:3] = skew(v) @ a
    m[3:6, 3:6] = a
    m[6:9, 0:3] = skew(p - c * v) @ a
    m[6:9, 3:6] = -c * a
    m[6:9, 6:9] = a
    m[6:9, 9] = v
    m[9, 9] = 1.0
    return m


@njit(cache=True)
def gal_ad_mat(u):
    """10x10 matrix of ``w -> [u, w]`` in gal(3)."""
    m = np.zeros((10, 10))
    kt = skew(u[0:3])
    m[0:3, 0:3] = kt
    m[3:6, 0:3] = skew(u[3:6])
    m[3:6, 3:6] = kt
    m[6:9, 0:3] = skew(u[6:9])
    for i in range(3):
        m[6 + i, 3 + i] = -u[9]
    m[6:9, 6:9] = kt
    m[6:9, 9] = u[3:6]
    return m


@njit(cache=True)
def series_jacobian(ad):
    """Sum_{k>=0} ad^k / (k+1)!, stopped once a term drops below SERIES_TOL."""
    n = ad.shape[0]
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, SERIES_MAX_TERMS):
        term = (term @ ad) / (k + 1.0)
        out += term
        if np.abs(term).max() < SERIES_TOL:
            break
    return out


@njit(cache=True)
def gal_jac_left_mat(u):
    return series_jacobian(gal_ad_mat(u))


# --------------------------------------------------------------------------
# Tangent group G = Gal(3) x| gal(3); elements are (5x5 matrix, 10-vector)
# --------------------------------------------------------------------------


@njit(cache=True)
def tg_compose_arr(xf, xb, yf, yb):
    return gal_mul(xf, yf), xb + gal_adjoint_mat(xf) @ yb


@njit(cache=True)
def tg_inverse_arr(xf, xb):
    fi = gal_inv_mat(xf)
    return fi, -(gal_adjoint_mat(fi) @ xb)


@njit(cache=True)
def tg_ad_mat(v):
    """20x20 adjoint of the tangent-group algebra at ``v = (u, w)``."""
    m = np.zeros((20, 20))
    au = gal_ad_mat(v[0:10].copy())
    m[0:10, 0:10] = au
    m[10:20, 0:10] = gal_ad_mat(v[10:20].copy())
    m[10:20, 10:20] = au
    return m


@njit(cache=True)
def tg_exp_arr(v):
    u = v[0:10].copy()
    return gal_exp_mat(u), gal_jac_left_mat(u) @ v[10:20].copy()


@njit(cache=True)
def tg_log_arr(xf, xb):
    u = gal_log_vec(xf)
    out = np.empty(20)
    out[0:10] = u
    out[10:20] = np.linalg.solve(gal_jac_left_mat(u), xb)
    return out


@njit(cache=True)
def tg_jac_left_mat(v):
    return series_jacobian(tg_ad_mat(v))


# --------------------------------------------------------------------------
# Value types
# --------------------------------------------------------------------------


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    return a.copy()


@dataclass(frozen=True, eq=False)
class Rotation:
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(3, 3).copy())

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.eye(3))

    @classmethod
    def exp(cls, w) -> Rotation:
        return cls(so3_exp_mat(_vec3(w)))

    def log(self) -> np.ndarray:
        return so3_log_vec(self.m)

    def angle(self) -> float:
        return float(so3_angle(self.m))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.m.T @ self.m, np.eye(3), atol=tol)
            and abs(np.linalg.det(self.m) - 1.0) < tol
        )


@dataclass(frozen=True, eq=False)
class GalTangent:
    """A gal(3) vector ``(theta, nu, rho, tau)``."""

    vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vec", np.asarray(self.vec, dtype=float).reshape(10).copy())

    @classmethod
    def from_parts(cls, theta=(0, 0, 0), nu=(0, 0, 0), rho=(0, 0, 0), tau=0.0) -> GalTangent:
        return cls(np.concatenate([_vec3(theta), _vec3(nu), _vec3(rho), [float(tau)]]))

    @classmethod
    def zero(cls) -> GalTangent:
        return cls(np.zeros(10))

    @property
    def theta(self) -> np.ndarray:
        return self.vec[0:3]

    @property
    def nu(self) -> np.ndarray:
        return self.vec[3:6]

    @property
    def rho(self) -> np.ndarray:
        return self.vec[6:9]

    @property
    def tau(self) -> float:
        return float(self.vec[9])

    def wedge(self) -> np.ndarray:
        return wedge(self.vec)

    @classmethod
    def vee(cls, m) -> GalTangent:
        return cls(vee(np.asarray(m, dtype=float)))

    def __add__(self, other: GalTangent) -> GalTangent:
        return GalTangent(self.vec + other.vec)

    def __sub__(self, other: GalTangent) -> GalTangent:
        return GalTangent(self.vec - other.vec)

    def __mul__(self, s: float) -> GalTangent:
        return GalTangent(self.vec * s)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class GalElement:
    """A Galilean frame ``(rot, vel, pos, time)`` with 5x5 embedding."""

    rot: Rotation
    vel: np.ndarray
    pos: np.ndarray
    time: float

    def __post_init__(self):
        if not isinstance(self.rot, Rotation):
            object.__setattr__(self, "rot", Rotation(self.rot))
        object.__setattr__(self, "vel", _vec3(self.vel))
        object.__setattr__(self, "pos", _vec3(self.pos))
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def identity(cls) -> GalElement:
        return cls(Rotation.identity(), np.zeros(3), np.zeros(3), 0.0)

    @classmethod
    def from_matrix(cls, m) -> GalElement:
        m = np.asarray(m, dtype=float)
        return cls(Rotation(m[:3, :3]), m[:3, 3], m[:3, 4], m[3, 4])

    def as_matrix(self) -> np.ndarray:
        return gal_mat(self.rot.m, self.vel, self.pos, self.time)

    def __matmul__(self, other: GalElement) -> GalElement:
        return gal_compose(self, other)

    def inverse(self) -> GalElement:
        return gal_inverse(self)

    def is_isochronous(self, tol: float = 1e-9) -> bool:
        return abs(self.time) < tol


@dataclass(frozen=True, eq=False)
class TangentGroupElement:
    """Element ``(f, b)`` of the semidirect product Gal(3) x| gal(3)."""

    f: GalElement
    b: GalTangent

    @classmethod
    def identity(cls) -> TangentGroupElement:
        return cls(GalElement.identity(), GalTangent.zero())

    def __matmul__(self, other: TangentGroupElement) -> TangentGroupElement:
        return tg_compose(self, other)

    def inverse(self) -> TangentGroupElement:
        return tg_inverse(self)


@dataclass(frozen=True, eq=False)
class Se23Element:
    """Extended pose; the isochronous (time = 0) subgroup of Gal(3)."""

    rot: Rotation
    vel: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rot, Rotation):
            object.__setattr__(self, "rot", Rotation(self.rot))
        object.__setattr__(self, "vel", _vec3(self.vel))
        object.__setattr__(self, "pos", _vec3(self.pos))

    @classmethod
    def identity(cls) -> Se23Element:
        return cls(Rotation.identity(), np.zeros(3), np.zeros(3))

    def as_gal(self) -> GalElement:
        return GalElement(self.rot, self.vel, self.pos, 0.0)

    @classmethod
    def from_gal(cls, x: GalElement, tol: float = 1e-9) -> Se23Element:
        if abs(x.time) > tol:
            raise ValueError(f"element is not isochronous (time = {x.time:g})")
        return cls(x.rot, x.vel, x.pos)

    def as_matrix(self) -> np.ndarray:
        return self.as_gal().as_matrix()


# --------------------------------------------------------------------------
# Value-level operations
# --------------------------------------------------------------------------


def gal_compose(x: GalElement, y: GalElement) -> GalElement:
    return GalElement.from_matrix(gal_mul(x.as_matrix(), y.as_matrix()))


def gal_inverse(x: GalElement) -> GalElement:
    return GalElement.from_matrix(gal_inv_mat(x.as_matrix()))


def gal_exp(u: GalTangent) -> GalElement:
    return GalElement.from_matrix(gal_exp_mat(u.vec))


def gal_log(x: GalElement) -> GalTangent:
    """Principal logarithm; raises :class:`BranchAmbiguityError` near angle pi."""
    return GalTangent(gal_log_vec(x.as_matrix()))


def gal_adjoint(x: GalElement) -> np.ndarray:
    return gal_adjoint_mat(x.as_matrix())


def gal_left_jacobian(u: GalTangent) -> np.ndarray:
    return gal_jac_left_mat(u.vec)


def tg_compose(x: TangentGroupElement, y: TangentGroupElement) -> TangentGroupElement:
    f, b = tg_compose_arr(x.f.as_matrix(), x.b.vec, y.f.as_matrix(), y.b.vec)
    return TangentGroupElement(GalElement.from_matrix(f), GalTangent(b))


def tg_inverse(x: TangentGroupElement) -> TangentGroupElement:
    f, b = tg_inverse_arr(x.f.as_matrix(), x.b.vec)
    return TangentGroupElement(GalElement.from_matrix(f), GalTangent(b))


def tg_exp(v) -> TangentGroupElement:
    f, b = tg_exp_arr(np.asarray(v, dtype=float).reshape(20))
    return TangentGroupElement(GalElement.from_matrix(f), GalTangent(b))


def tg_log(x: TangentGroupElement) -> np.ndarray:
    return tg_log_arr(x.f.as_matrix(), x.b.vec)


def tg_left_jacobian(v) -> np.ndarray:
    return tg_jac_left_mat(np.asarray(v, dtype=float).reshape(20))


def _se23_pad(xi) -> np.ndarray:
    u = np.zeros(10)
    u[:9] = np.asarray(xi, dtype=float).reshape(9)
    return u


def se23_exp(xi) -> Se23Element:
    return Se23Element.from_gal(GalElement.from_matrix(gal_exp_mat(_se23_pad(xi))))


def se23_log(x: Se23Element) -> np.ndarray:
    return gal_log_vec(x.as_matrix())[:9]


def se23_compose(x: Se23Element, y: Se23Element) -> Se23Element:
    return Se23Element.from_gal(GalElement.from_matrix(gal_mul(x.as_matrix(), y.as_matrix())))


def se23_inverse(x: Se23Element) -> Se23Element:
    return Se23Element.from_gal(GalElement.from_matrix(gal_inv_mat(x.as_matrix())))
