"""CSV/JSON log emission and ingestion.

All numeric fields are written in fixed-point decimal with the shortest digit
string that parses back to the same double, so written logs round-trip
bit-exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation as SciRotation

from ..simulator import NS, SimLog

__all__ = [
    "LogFormatError",
    "IMU_HEADER",
    "GNSS_HEADER",
    "TRUTH_HEADER",
    "ESTIMATE_HEADER",
    "fmt",
    "write_rows",
    "write_simlog",
    "ingest_log",
    "write_estimate",
    "read_estimate",
    "estimate_filename",
    "quat_from_rot",
    "rot_from_quat",
    "IngestedLog",
]

log = logging.getLogger(__name__)

IMU_HEADER = ["t", "wx", "wy", "wz", "ax", "ay", "az"]
GNSS_HEADER = ["t_arrival", "px", "py", "pz"]
TRUTH_HEADER = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz", "delay"]
BIAS_HEADER = ["t", "bgx", "bgy", "bgz", "bax", "bay", "baz"]
ESTIMATE_HEADER = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz", "delta_hat", "nees"]
INIT_FILE = "init.json"
JITTER_TOL = 0.01


class LogFormatError(ValueError):
    """Malformed or inconsistent log file (maps to the I/O exit code)."""


def fmt(x: float) -> str:
    s = repr(float(x))
    if "e" in s:
        s = np.format_float_positional(x, unique=True, trim="-")
    return s


def write_rows(path: Path, header, columns):
    cols = [np.asarray(c, dtype=float).tolist() for c in columns]
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in zip(*cols):
            f.write(",".join(fmt(v) for v in row) + "\n")


def quat_from_rot(rot) -> np.ndarray:
    """Hamilton, scalar-first, with ``qw >= 0``."""
    q = SciRotation.from_matrix(np.asarray(rot)).as_quat()
    q = np.concatenate([q[..., 3:4], q[..., 0:3]], axis=-1)
    return np.where(q[..., 0:1] < 0, -q, q)


def rot_from_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return SciRotation.from_quat(np.concatenate([q[..., 1:4], q[..., 0:1]], axis=-1)).as_matrix()


def write_simlog(directory, sim: SimLog) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_rows(d / "imu.csv", IMU_HEADER, [sim.t, *sim.imu_omega.T, *sim.imu_accel.T])
    write_rows(d / "gnss.csv", GNSS_HEADER, [sim.gnss_t, *sim.gnss_pos.T])
    q = quat_from_rot(sim.rot)
    write_rows(d / "truth.csv", TRUTH_HEADER,
                [sim.t, *q.T, *sim.vel.T, *sim.pos.T, np.full(len(sim.t), sim.delay)])
    write_rows(d / "truth_bias.csv", BIAS_HEADER, [sim.t, *sim.gyro_bias.T, *sim.accel_bias.T])
    init = {
        "seed": sim.seed,
        "quaternion": [fmt(v) for v in quat_from_rot(sim.init_rot)],
        "velocity": [fmt(v) for v in sim.init_vel],
        "position": [fmt(v) for v in sim.init_pos],
    }
    (d / INIT_FILE).write_text(json.dumps(init, indent=2) + "\n")
    return d


def _read_csv(path: Path, header) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(str(path))
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            head = next(reader)
        except StopIteration:
            raise LogFormatError(f"{path}: empty file") from None
        if [h.strip() for h in head] != header:
            raise LogFormatError(f"{path}:1: expected header {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LogFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise LogFormatError(f"{path}:{line}: non-numeric field") from None
    return np.array(rows, dtype=float).reshape(-1, len(header))


def _check_monotone(path, t):
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        raise LogFormatError(f"{path}:{bad[0] + 3}: timestamps not strictly increasing")


@dataclass(eq=False)
class IngestedLog:
    """Duck-compatible with :class:`SimLog` for :func:`galins.runner.run_filter`."""

    t: np.ndarray
    imu_omega: np.ndarray
    imu_accel: np.ndarray
    gnss_t: np.ndarray
    gnss_pos: np.ndarray
    init_rot: np.ndarray
    init_vel: np.ndarray
    init_pos: np.ndarray
    rot: np.ndarray | None = None
    vel: np.ndarray | None = None
    pos: np.ndarray | None = None
    delay: float = 0.0
    gyro_bias: np.ndarray | None = None
    accel_bias: np.ndarray | None = None
    seed: int = 0
    resampled: bool = False
    t_ns: np.ndarray | None = None
    gnss_t_ns: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def has_truth(self) -> bool:
        return self.rot is not None


def _resample(t, data):
    """Snap slightly jittered IMU timestamps to a uniform grid (values interpolated)."""
    d = np.diff(t)
    nominal = float(np.median(d))
    jitter = np.max(np.abs(d - nominal)) / nominal
    if jitter <= 1e-9:
        return t, data, False
    if jitter > JITTER_TOL:
        raise LogFormatError(f"IMU rate jitter {100 * jitter:.2f}% exceeds {100 * JITTER_TOL:.0f}%")
    grid = t[0] + nominal * np.arange(len(t))
    out = np.column_stack([np.interp(grid, t, c) for c in data.T])
    return grid, out, True


def ingest_log(directory) -> IngestedLog:
    """Read ``imu.csv``, ``gnss.csv`` and, when present, ``truth.csv`` / ``init.json``."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"log directory {d} does not exist")
    imu = _read_csv(d / "imu.csv", IMU_HEADER)
    if len(imu) < 2:
        raise LogFormatError(f"{d / 'imu.csv'}: need at least two IMU rows")
    _check_monotone(d / "imu.csv", imu[:, 0])
    t, data, resampled = _resample(imu[:, 0], imu[:, 1:])
    if resampled:
        log.warning("IMU timestamps resampled to a uniform grid")
    gnss = _read_csv(d / "gnss.csv", GNSS_HEADER)
    if len(gnss):
        _check_monotone(d / "gnss.csv", gnss[:, 0])
    early = gnss[:, 0] < t[0]
    if np.any(early):
        log.warning("dropping %d GNSS record(s) that arrive before the first IMU sample", int(early.sum()))
        gnss = gnss[~early]

    out = IngestedLog(t=t, imu_omega=data[:, 0:3].copy(), imu_accel=data[:, 3:6].copy(),
                      gnss_t=gnss[:, 0].copy(), gnss_pos=gnss[:, 1:4].copy(),
                      init_rot=np.eye(3), init_vel=np.zeros(3),
                      init_pos=gnss[0, 1:4].copy() if len(gnss) else np.zeros(3),
                      resampled=resampled)
    tp = d / "truth.csv"
    if tp.exists():
        tr = _read_csv(tp, TRUTH_HEADER)
        if len(tr) != len(imu) or np.any(tr[:, 0] != imu[:, 0]):
            raise LogFormatError(f"{tp}: truth rows must share the IMU time grid")
        out.rot = rot_from_quat(tr[:, 1:5])
        out.vel = tr[:, 5:8].copy()
        out.pos = tr[:, 8:11].copy()
        out.delay = float(tr[0, 11])
        out.gyro_bias = np.zeros((len(tr), 3))
        out.accel_bias = np.zeros((len(tr), 3))
        out.init_rot, out.init_vel, out.init_pos = out.rot[0].copy(), out.vel[0].copy(), out.pos[0].copy()
        bp = d / "truth_bias.csv"
        if bp.exists():
            bias = _read_csv(bp, BIAS_HEADER)
            if len(bias) != len(tr) or np.any(bias[:, 0] != tr[:, 0]):
                raise LogFormatError(f"{bp}: bias rows must share the IMU time grid")
            out.gyro_bias = bias[:, 1:4].copy()
            out.accel_bias = bias[:, 4:7].copy()
    else:
        log.warning("no truth.csv in %s: metrics restricted to innovation statistics", d)
    ip = d / INIT_FILE
    if ip.exists():
        try:
            init = json.loads(ip.read_text())
            out.init_rot = rot_from_quat(np.array([float(v) for v in init["quaternion"]]))
            out.init_vel = np.array([float(v) for v in init["velocity"]])
            out.init_pos = np.array([float(v) for v in init["position"]])
            out.seed = int(init.get("seed", 0))
        except (KeyError, ValueError, TypeError) as exc:
            raise LogFormatError(f"{ip}: malformed initial estimate ({exc})") from None
    if not resampled:
        step = int(round((t[1] - t[0]) * NS))
        ticks = np.rint(t * NS).astype(np.int64)
        if np.all(np.diff(ticks) == step):
            out.t_ns = ticks
            out.gnss_t_ns = np.rint(out.gnss_t * NS).astype(np.int64)
    return out


def estimate_filename(filter_name: str) -> str:
    return f"estimate_{filter_name.replace(':', '_')}.csv"


def write_estimate(directory, result) -> Path:
    path = Path(directory) / estimate_filename(result.filter)
    path.parent.mkdir(parents=True, exist_ok=True)
    # rows past a failure hold no estimate
    valid = len(result.t) if result.ok else result.fail_step
    q = np.full((len(result.t), 4), np.nan)
    if valid:
        q[:valid] = quat_from_rot(result.rot[:valid])
    cols = [result.t, *q.T, *result.vel.T, *result.pos.T, result.delta, result.nees]
    if not result.ok:
        cols = [np.where(np.arange(len(result.t)) >= result.fail_step, np.nan, c) if i else c
                for i, c in enumerate(cols)]
    write_rows(path, ESTIMATE_HEADER, cols)
    return path


def read_estimate(path) -> dict:
    a = _read_csv(Path(path), ESTIMATE_HEADER)
    good = np.all(np.isfinite(a[:, 1:5]), axis=1)
    rot = np.full((len(a), 3, 3), np.nan)
    if good.any():
        rot[good] = rot_from_quat(a[good, 1:5])
    return {"t": a[:, 0], "rot": rot, "vel": a[:, 5:8], "pos": a[:, 8:11],
            "delta": a[:, 11], "nees": a[:, 12]}


def ensure_writable(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise PermissionError(f"{d} is not writable")
    return d
