"""Analytic trajectory, exact IMU synthesis and delayed GNSS generation.

Time is tracked internally in integer nanoseconds so that GNSS arrival and
sampling instants differ by exactly the configured delay.

Each IMU record ``k`` carries timestamp ``t_k`` and describes the interval
``[t_k, t_k + dt)``. Its analytic part is sampled at the interval midpoint,
which makes the zero-order-hold integration used by the filters a midpoint
rule (second-order accurate) instead of a one-sided rule that would bias the
delay estimate by about ``dt / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .liegroups import Rotation

__all__ = [
    "GRAVITY",
    "TrajectoryConfig",
    "SensorConfig",
    "InitConfig",
    "SimLog",
    "analytic_state",
    "analytic_arrays",
    "synthesize",
    "monte_carlo",
    "stationary_config",
]

GRAVITY = np.array([0.0, 0.0, -9.81])
NS = 1_000_000_000
_HOVER_SPEED2 = 1e-12


@dataclass(frozen=True)
class TrajectoryConfig:
    radius: float = 50.0
    angular_rate: float = 0.2
    wave_amp_h: float = 5.0
    wave_freq_h: float = 0.5
    wave_amp_v: float = 3.0
    wave_freq_v: float = 0.7
    attitude_amp: float = 0.3
    attitude_freq: float = 0.4
    duration: float = 60.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not math.isfinite(v):
                raise ValueError(f"{k} must be finite")
        if not self.duration > 0:
            raise ValueError("duration must be positive")


def stationary_config(duration: float = 60.0) -> TrajectoryConfig:
    """Hover at the origin with level attitude."""
    return TrajectoryConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, duration)


@dataclass(frozen=True)
class SensorConfig:
    imu_rate: float = 200.0
    gnss_rate: float = 20.0
    delay: float = 0.1
    gyro_noise: float = 0.005
    accel_noise: float = 0.05
    gyro_bias_rw: float = 1e-4
    accel_bias_rw: float = 1e-4
    gnss_pos_std: float = 0.5
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    lever_arm: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if not (self.imu_rate > 0 and self.gnss_rate > 0):
            raise ValueError("rates must be positive")
        ratio = self.imu_rate / self.gnss_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("imu_rate must be an integer multiple of gnss_rate")
        if NS % round(self.imu_rate) != 0 or abs(self.imu_rate - round(self.imu_rate)) > 1e-9:
            raise ValueError("imu_rate must be an integer divisor of 1e9 Hz")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        for k in ("gyro_noise", "accel_noise", "gyro_bias_rw", "accel_bias_rw", "gnss_pos_std"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / self.imu_rate

    def noise_free(self) -> SensorConfig:
        return replace(self, gyro_noise=0.0, accel_noise=0.0, gyro_bias_rw=0.0,
                       accel_bias_rw=0.0, gnss_pos_std=0.0,
                       gyro_bias=(0.0, 0.0, 0.0), accel_bias=(0.0, 0.0, 0.0))


@dataclass(frozen=True)
class InitConfig:
    """1-sigma Gaussian spread of the initial estimate and of the true initial biases."""

    att_std: float = 0.2
    vel_std: float = 0.5
    pos_std: float = 1.0
    gyro_bias_std: float = 0.005
    accel_bias_std: float = 0.05

    @classmethod
    def exact(cls) -> InitConfig:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(eq=False)
class SimLog:
    t: np.ndarray  # (n,) IMU / truth grid
    rot: np.ndarray  # (n, 3, 3)
    vel: np.ndarray
    pos: np.ndarray
    gyro_bias: np.ndarray  # (n, 3)
    accel_bias: np.ndarray
    delay: float
    imu_omega: np.ndarray
    imu_accel: np.ndarray
    gnss_t: np.ndarray  # arrival times
    gnss_t_sampled: np.ndarray
    gnss_pos: np.ndarray
    init_rot: np.ndarray  # suggested initial estimate
    init_vel: np.ndarray
    init_pos: np.ndarray
    seed: int = 0
    t_ns: np.ndarray = field(default=None, repr=False)
    gnss_t_ns: np.ndarray = field(default=None, repr=False)
    gnss_t_sampled_ns: np.ndarray = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self) -> int:
        return len(self.t)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def analytic_arrays(cfg: TrajectoryConfig, t, gravity=GRAVITY):
    """Vectorized closed-form state: (R, v, p, omega_body, accel_body, accel_world)."""
    t = np.asarray(t, dtype=float)
    r, om = cfg.radius, cfg.angular_rate
    ah, wh = cfg.wave_amp_h, cfg.wave_freq_h
    av, wv = cfg.wave_amp_v, cfg.wave_freq_v
    al, wa = cfg.attitude_amp, cfg.attitude_freq
    c, s = np.cos(om * t), np.sin(om * t)
    ch, sh = np.cos(wh * t), np.sin(wh * t)
    cv, sv = np.cos(wv * t), np.sin(wv * t)
    p = np.stack([r * c + ah * sh, r * s, av * sv], -1)
    v = np.stack([-r * om * s + ah * wh * ch, r * om * c, av * wv * cv], -1)
    a = np.stack([-r * om**2 * c - ah * wh**2 * sh, -r * om**2 * s, -av * wv**2 * sv], -1)

    vx, vy, ax_, ay = v[..., 0], v[..., 1], a[..., 0], a[..., 1]
    sp2 = vx * vx + vy * vy
    moving = sp2 > _HOVER_SPEED2
    safe = np.where(moving, sp2, 1.0)
    yaw = np.where(moving, np.arctan2(vy, vx), 0.0)
    yaw_rate = np.where(moving, (vx * ay - vy * ax_) / safe, 0.0)

    ca, sa = np.cos(wa * t), np.sin(wa * t)
    pitch, pitch_rate = al * ca, -al * wa * sa
    roll, roll_rate = al * sa, al * wa * ca

    rot = _rz(yaw) @ _ry(pitch) @ _rx(roll)
    cp, spit = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    omega = np.stack([
        roll_rate - yaw_rate * spit,
        pitch_rate * cr + yaw_rate * cp * sr,
        -pitch_rate * sr + yaw_rate * cp * cr,
    ], -1)
    f_world = a - np.asarray(gravity)
    accel_body = np.einsum("...ji,...j->...i", rot, f_world)
    return rot, v, p, omega, accel_body, a


def analytic_state(cfg: TrajectoryConfig, t: float):
    """(Rotation, v, p, omega_body, accel_body) at time ``t``."""
    if not 0.0 <= t <= cfg.duration:
        raise ValueError(f"t = {t} outside [0, {cfg.duration}]")
    rot, v, p, om, acc, _ = analytic_arrays(cfg, np.array([t]))
    return Rotation(rot[0]), v[0], p[0], om[0], acc[0]


def _time_grid(traj: TrajectoryConfig, sens: SensorConfig):
    step_ns = NS // round(sens.imu_rate)
    n = int(round(traj.duration * sens.imu_rate))
    t_ns = np.arange(n, dtype=np.int64) * step_ns
    return t_ns, step_ns


def synthesize(traj: TrajectoryConfig, sens: SensorConfig, init: InitConfig | None = None) -> SimLog:
    """Generate one seeded realization. ``init`` defaults to an exact initial estimate."""
    init = init or InitConfig.exact()
    t_ns, step_ns = _time_grid(traj, sens)
    n = len(t_ns)
    if n < 2:
        raise ValueError("trajectory shorter than two IMU samples")
    dt = step_ns / NS
    t = t_ns / NS
    ss = np.random.SeedSequence(int(sens.seed))
    rng_init, rng_bias, rng_imu, rng_gnss = (np.random.default_rng(s) for s in ss.spawn(4))

    rot, vel, pos, _, _, _ = analytic_arrays(traj, t)
    mid = np.minimum(t + 0.5 * dt, traj.duration)
    _, _, _, om_mid, acc_mid, _ = analytic_arrays(traj, mid)

    bg0 = np.asarray(sens.gyro_bias, float) + init.gyro_bias_std * rng_init.standard_normal(3)
    ba0 = np.asarray(sens.accel_bias, float) + init.accel_bias_std * rng_init.standard_normal(3)
    dth = init.att_std * rng_init.standard_normal(3)
    dv = init.vel_std * rng_init.standard_normal(3)
    dp = init.pos_std * rng_init.standard_normal(3)
    init_rot = Rotation.exp(dth).m @ rot[0]

    steps = rng_bias.standard_normal((n, 6)) * math.sqrt(dt)
    steps[0] = 0.0
    steps[:, 0:3] *= sens.gyro_bias_rw
    steps[:, 3:6] *= sens.accel_bias_rw
    walk = np.cumsum(steps, axis=0)
    bg = bg0 + walk[:, 0:3]
    ba = ba0 + walk[:, 3:6]

    white = rng_imu.standard_normal((n, 6)) * math.sqrt(sens.imu_rate)
    omega_m = om_mid + bg + sens.gyro_noise * white[:, 0:3]
    accel_m = acc_mid + ba + sens.accel_noise * white[:, 3:6]

    gstep = NS // round(sens.gnss_rate)
    delay_ns = int(round(sens.delay * NS))
    arrivals = np.arange(0, t_ns[-1] + 1, gstep, dtype=np.int64)
    arrivals = arrivals[arrivals - delay_ns >= 0]
    sampled = arrivals - delay_ns
    ts = sampled / NS
    grot, _, gpos, _, _, _ = analytic_arrays(traj, ts)
    lever = np.asarray(sens.lever_arm, float)
    y = gpos + grot @ lever + sens.gnss_pos_std * rng_gnss.standard_normal((len(ts), 3))

    return SimLog(
        t=t, rot=rot, vel=vel, pos=pos, gyro_bias=bg, accel_bias=ba, delay=delay_ns / NS,
        imu_omega=omega_m, imu_accel=accel_m,
        gnss_t=arrivals / NS, gnss_t_sampled=ts, gnss_pos=y,
        init_rot=init_rot, init_vel=vel[0] + dv, init_pos=pos[0] + dp,
        seed=int(sens.seed), t_ns=t_ns, gnss_t_ns=arrivals, gnss_t_sampled_ns=sampled,
    )


def monte_carlo(traj: TrajectoryConfig, sens: SensorConfig, n_runs: int, base_seed: int,
                init: InitConfig | None = None):
    """Lazily yields ``n_runs`` logs; run ``k`` uses seed ``base_seed + k``."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    for k in range(n_runs):
        yield synthesize(traj, replace(sens, seed=base_seed + k), init)
