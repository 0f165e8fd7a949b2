"""Seeded Monte Carlo orchestration and result summaries.

Run ``k`` of every delay scenario uses seed ``base_seed + k``. Jobs are pure
functions of their arguments, so a worker pool returns exactly what a serial
loop would; aggregation happens in job order in the parent process.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..metrics import FINAL_WINDOW, is_divergent, rmse, step_errors
from ..runner import FilterConfig, RunResult, filter_dim, run_filter
from ..simulator import InitConfig, SensorConfig, TrajectoryConfig, synthesize
from .io import estimate_filename, ingest_log, read_estimate, write_estimate, write_simlog

__all__ = [
    "RunRecord",
    "evaluate",
    "evaluate_result",
    "summarize",
    "run_monte_carlo",
    "recompute_summary",
    "strip_wall_time",
    "worker_count",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class RunRecord:
    filter: str
    dim: int
    seed: int
    delay: float
    ok: bool
    diverged: bool
    rmse: dict
    nees_final_gnss: np.ndarray
    nees_final_all: np.ndarray
    ade_final: np.ndarray
    wall_time: float = 0.0


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("GALINS_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer GALINS_THREADS=%r", env)
    return max(1, min(cap, n_jobs))


def evaluate(t, truth, est, nees, gnss_mask, ok, fail_step, filter_name, dim, seed, delay,
             wall_time=0.0, window=FINAL_WINDOW) -> RunRecord:
    """Reduce one run to its summary ingredients. Rows past a failure count as infinite error."""
    t = np.asarray(t, dtype=float)
    errs = [np.array(e, dtype=float) for e in step_errors(truth, est)]
    nees = np.array(nees, dtype=float)
    if not ok:
        bad = np.arange(len(t)) >= fail_step
        for e in errs:
            e[bad] = np.inf
        nees[bad] = np.inf
    are, ave, ape, ade = errs
    final = t >= t[-1] - window + 1e-9
    with np.errstate(invalid="ignore", over="ignore"):
        row = {
            "rotation_deg": float(np.degrees(rmse(are))),
            "velocity_mps": rmse(ave),
            "position_m": rmse(ape),
            "delay_ms": 1e3 * rmse(ade),
        }
    return RunRecord(
        filter=filter_name, dim=dim, seed=int(seed), delay=float(delay), ok=bool(ok),
        diverged=is_divergent(ok, t, ape), rmse=row,
        nees_final_gnss=nees[final & gnss_mask], nees_final_all=nees[final], ade_final=ade[final],
        wall_time=float(wall_time),
    )


def evaluate_result(sim, res: RunResult) -> RunRecord:
    mask = np.zeros(len(res.t), dtype=bool)
    mask[res.gnss_rows] = True
    truth = (sim.rot, sim.vel, sim.pos, np.full(len(res.t), sim.delay))
    est = (res.rot, res.vel, res.pos, res.delta)
    return evaluate(res.t, truth, est, res.nees, mask, res.ok, res.fail_step, res.filter, res.dim,
                    res.seed, sim.delay, res.wall_time)


def _q(a, p):
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]  # failed steps are counted as divergences instead
    return float(np.quantile(a, p)) if a.size else float("nan")


def summarize(records: list[RunRecord]) -> dict:
    """Aggregate runs of one filter at one delay."""
    if not records:
        raise ValueError("no runs to summarize")
    keys = ["rotation_deg", "velocity_mps", "position_m", "delay_ms"]
    per_run = {k: np.array([r.rmse[k] for r in records]) for k in keys}
    nees_g = np.concatenate([r.nees_final_gnss for r in records])
    nees_a = np.concatenate([r.nees_final_all for r in records])
    ade = np.concatenate([r.ade_final for r in records])
    return {
        "filter": records[0].filter,
        "nees_dim": records[0].dim,
        "runs": len(records),
        "rmse_median": {k: float(np.median(v)) for k, v in per_run.items()},
        "rmse_mean": {k: float(np.mean(v)) for k, v in per_run.items()},
        "nees_final_median": _q(nees_g, 0.5),
        "nees_final_q25": _q(nees_g, 0.25),
        "nees_final_q75": _q(nees_g, 0.75),
        "nees_final_median_all_steps": _q(nees_a, 0.5),
        "ade_final_median_ms": 1e3 * _q(ade, 0.5),
        "divergences": int(sum(r.diverged for r in records)),
        "seeds": [r.seed for r in records],
        "wall_time_s": float(sum(r.wall_time for r in records)),
    }


def run_dir(out: Path, delay: float, k: int) -> Path:
    return Path(out) / f"delay_{round(delay * 1000):03d}ms" / f"run_{k:03d}"


def _job(args):
    traj, sens, init, fcfg, filters, seed, k, out = args
    sim = synthesize(traj, replace(sens, seed=seed), init)
    recs = []
    target = run_dir(out, sens.delay, k) if out is not None else None
    if target is not None:
        write_simlog(target, sim)
    for name in filters:
        res = run_filter(sim, name, fcfg)
        recs.append(evaluate_result(sim, res))
        if target is not None:
            write_estimate(target, res)
    return recs


def run_monte_carlo(traj: TrajectoryConfig, sens: SensorConfig, init: InitConfig, fcfg: FilterConfig,
                    filters, delays, n_runs: int, base_seed: int, out=None, workers: int | None = None):
    """Returns ``{delay: {filter: [RunRecord, ...]}}`` in run order."""
    jobs = []
    for d in delays:
        s = replace(sens, delay=float(d))
        for k in range(n_runs):
            jobs.append((traj, s, init, fcfg, tuple(filters), base_seed + k, k,
                         None if out is None else Path(out)))
    n = worker_count(len(jobs)) if workers is None else max(1, min(workers, len(jobs)))
    if n == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    out_map: dict = {}
    for job, recs in zip(jobs, results):
        d = job[1].delay
        for r in recs:
            out_map.setdefault(d, {}).setdefault(r.filter, []).append(r)
    return out_map


def scenario_summaries(records_by_delay) -> list[dict]:
    out = []
    for d in sorted(records_by_delay):
        out.append({
            "delay_ms": round(d * 1000, 6),
            "filters": {f: summarize(recs) for f, recs in records_by_delay[d].items()},
        })
    return out


def strip_wall_time(obj):
    """Copy of a summary without wall-clock fields (for byte-level comparisons)."""
    if isinstance(obj, dict):
        return {k: strip_wall_time(v) for k, v in obj.items() if not k.startswith("wall_time")}
    if isinstance(obj, list):
        return [strip_wall_time(v) for v in obj]
    return obj


def _record_from_dir(d: Path, filter_name: str, sim) -> RunRecord:
    est = read_estimate(d / estimate_filename(filter_name))
    t = est["t"]
    if len(t) != len(sim.t) or np.any(t != sim.t):
        raise ValueError(f"{d}: estimate rows do not match the IMU grid")
    good = np.all(np.isfinite(est["rot"].reshape(len(t), -1)), axis=1)
    ok = bool(good.all())
    fail = int(np.argmin(good)) if not ok else -1
    from ..runner import gnss_rows

    mask = np.zeros(len(t), dtype=bool)
    rows = gnss_rows(sim)
    mask[rows[rows >= 0]] = True
    truth = (sim.rot, sim.vel, sim.pos, np.full(len(t), sim.delay))
    rot = np.where(good[:, None, None], est["rot"], np.eye(3))
    return evaluate(t, truth, (rot, est["vel"], est["pos"], est["delta"]), est["nees"], mask, ok, fail,
                    filter_name, filter_dim(filter_name), sim.seed, sim.delay)


def innovation_stats(sim, est: dict) -> dict:
    """RMS GNSS innovation against the estimate at ``t_arrival - delta_hat`` (no truth needed)."""
    t, pos, dh = est["t"], est["pos"], est["delta"]
    res = []
    for ta, y in zip(sim.gnss_t, sim.gnss_pos):
        k = int(np.searchsorted(t, ta))
        if k >= len(t) or not np.isfinite(dh[k]):
            continue
        ts = ta - dh[k]
        if ts < t[0]:
            continue
        p = np.array([np.interp(ts, t, pos[:, i]) for i in range(3)])
        res.append(np.linalg.norm(y - p))
    r = np.asarray(res)
    return {"innovations": int(r.size), "innovation_rms_m": rmse(r) if r.size else float("nan")}


def recompute_summary(directory) -> dict:
    """Rebuild summaries from the CSVs of a single run directory or a Monte Carlo tree."""
    root = Path(directory)
    if (root / "imu.csv").exists():
        dirs = [root]
    else:
        dirs = sorted(p.parent for p in root.glob("delay_*ms/run_*/imu.csv"))
    if not dirs:
        raise FileNotFoundError(f"no logs found under {root}")
    by_delay: dict = {}
    degraded: dict = {}
    for d in dirs:
        sim = ingest_log(d)
        names = sorted(p.name for p in d.glob("estimate_*.csv"))
        for fname in names:
            stem = fname[len("estimate_"):-len(".csv")]
            filt = stem.replace("ekf-fixed_", "ekf-fixed:")
            if sim.has_truth:
                rec = _record_from_dir(d, filt, sim)
                by_delay.setdefault(sim.delay, {}).setdefault(filt, []).append(rec)
            else:
                degraded.setdefault(str(d), {})[filt] = innovation_stats(sim, read_estimate(d / fname))
    out = {"scenarios": scenario_summaries(by_delay)}
    if degraded:
        out["innovation_only"] = degraded
    return out
