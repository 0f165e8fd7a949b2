"""Per-timestep error metrics, RMSE and NEES."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

__all__ = [
    "rotation_angle",
    "step_errors",
    "rmse",
    "nees",
    "ErrorSeries",
    "error_series",
    "is_divergent",
    "DIVERGENCE_POS_RMSE",
    "FINAL_WINDOW",
]

DIVERGENCE_POS_RMSE = 10.0
FINAL_WINDOW = 30.0


def rotation_angle(r_true, r_est) -> np.ndarray:
    """``|log(R^T R_hat)|`` for single matrices or stacks, robust near 0 and pi."""
    m = np.swapaxes(np.asarray(r_true), -1, -2) @ np.asarray(r_est)
    tr = np.trace(m, axis1=-2, axis2=-1)
    s = np.stack([m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], -1)
    return np.arctan2(0.5 * np.linalg.norm(s, axis=-1), 0.5 * (tr - 1.0))


def step_errors(truth, estimate):
    """(ARE, AVE, APE, ADE) from ``(R, v, p, delta)`` tuples; works on stacks too."""
    r, v, p, d = truth
    rh, vh, ph, dh = estimate
    are = rotation_angle(r, rh)
    ave = np.linalg.norm(np.asarray(v) - np.asarray(vh), axis=-1)
    ape = np.linalg.norm(np.asarray(p) - np.asarray(ph), axis=-1)
    ade = np.abs(np.asarray(d, dtype=float) - np.asarray(dh, dtype=float))
    return are, ave, ape, ade


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("RMSE of an empty series")
    return float(np.sqrt(np.mean(e * e)))


def nees(epsilon, sigma, n: int | None = None) -> float:
    """``eps^T Sigma^-1 eps / n`` via a Cholesky solve; ``n`` defaults to ``len(eps)``."""
    eps = np.asarray(epsilon, dtype=float).reshape(-1)
    s = np.asarray(sigma, dtype=float)
    if s.shape != (eps.size, eps.size):
        raise ValueError("sigma shape does not match epsilon")
    try:
        c = cho_factor(s)
    except LinAlgError as exc:
        raise ValueError("sigma is not positive definite") from exc
    return float(eps @ cho_solve(c, eps)) / (eps.size if n is None else n)


@dataclass(eq=False)
class ErrorSeries:
    t: np.ndarray
    are: np.ndarray
    ave: np.ndarray
    ape: np.ndarray
    ade: np.ndarray
    nees: np.ndarray
    gnss_mask: np.ndarray  # rows at which a GNSS update was applied
    filter: str = ""
    n: int = 0
    seed: int = 0
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def window(self, start: float) -> np.ndarray:
        return self.t >= start

    def final_window(self, length: float = FINAL_WINDOW) -> np.ndarray:
        return self.t >= self.t[-1] - length + 1e-9 if len(self.t) else self.t.astype(bool)

    def rmse_row(self) -> dict:
        return {
            "rotation_deg": float(np.degrees(rmse(self.are))),
            "velocity_mps": rmse(self.ave),
            "position_m": rmse(self.ape),
            "delay_ms": 1e3 * rmse(self.ade),
        }


def is_divergent(ok: bool, t, ape, window: float = 10.0) -> bool:
    """Failed run, non-finite output, or final-window position RMSE above 10 m."""
    if not ok or not np.all(np.isfinite(ape)):
        return True
    t = np.asarray(t)
    sel = t >= t[-1] - window + 1e-9
    return rmse(np.asarray(ape)[sel]) > DIVERGENCE_POS_RMSE


def error_series(truth, estimate, t, nees_values, gnss_mask, filter_name="", n=0, seed=0, ok=True) -> ErrorSeries:
    """Assemble an :class:`ErrorSeries` from aligned truth/estimate stacks."""
    are, ave, ape, ade = step_errors(truth, estimate)
    t = np.asarray(t, dtype=float)
    return ErrorSeries(
        t=t, are=are, ave=ave, ape=ape, ade=ade, nees=np.asarray(nees_values, dtype=float),
        gnss_mask=np.asarray(gnss_mask, dtype=bool), filter=filter_name, n=n, seed=seed,
        diverged=is_divergent(ok, t, ape),
    )
