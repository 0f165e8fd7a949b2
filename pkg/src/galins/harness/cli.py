"""Command-line entry point: ``galins {simulate,run,montecarlo,metrics}``.

Exit codes: 0 success, 1 configuration error, 2 filter divergence (``run``),
3 I/O error. Diagnostics go to stderr; ``metrics`` prints its summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..eqf import FilterDivergence
from ..runner import run_filter
from ..simulator import synthesize
from ..twobody import run_twobody
from .config import (
    ConfigError,
    RunConfig,
    dump_config,
    flag_name,
    from_dict,
    load_config,
    section_fields,
)
from .io import (
    LogFormatError,
    ensure_writable,
    ingest_log,
    write_estimate,
    write_rows,
    write_simlog,
)
from .montecarlo import (
    evaluate_result,
    innovation_stats,
    recompute_summary,
    run_monte_carlo,
    scenario_summaries,
)

__all__ = ["main", "build_parser"]

log = logging.getLogger("galins")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _optional_float(text: str):
    return None if text.lower() in ("none", "null", "") else float(text)


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON configuration file (flags override it)")
    g.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    s = argparse.SUPPRESS
    g.add_argument("--scenario", choices=["simulate", "replay", "twobody"], default=s)
    g.add_argument("--filters", type=lambda x: [f for f in x.split(",") if f], default=s,
                   help="comma-separated: eqf, ekf-no-delay, ekf-fixed:<s>, ekf-online")
    g.add_argument("--filter", dest="filters", type=lambda x: [x], default=s, help="single filter")
    g.add_argument("--out", default=s, help="output directory")
    g.add_argument("--runs", type=int, default=s)
    g.add_argument("--seed", "--base-seed", dest="base_seed", type=int, default=s)
    g.add_argument("--delay-ms", dest="delays_ms", type=_floats, default=s,
                   help="true delay(s) in ms, comma-separated")
    g.add_argument("--log", default=s, help="log directory to replay")
    g.add_argument("--per-run-csv", action=argparse.BooleanOptionalAction, default=s)
    for section, name, default in section_fields():
        dest = f"{section}.{name}"
        if isinstance(default, bool):
            g.add_argument(flag_name(section, name), dest=dest, action=argparse.BooleanOptionalAction, default=s)
        elif isinstance(default, tuple):
            g.add_argument(flag_name(section, name), dest=dest, type=_floats, default=s, metavar="X,Y,Z")
        elif isinstance(default, int):
            g.add_argument(flag_name(section, name), dest=dest, type=int, default=s)
        elif default is None:
            g.add_argument(flag_name(section, name), dest=dest, type=_optional_float, default=s)
        else:
            g.add_argument(flag_name(section, name), dest=dest, type=float, default=s)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="galins", description="Delayed-GNSS inertial navigation on the Galilean group.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("simulate", "synthesize one seeded log and write its CSVs"),
        ("run", "run filters over one simulated or replayed log"),
        ("montecarlo", "seeded Monte Carlo over delays and filters"),
        ("metrics", "recompute summaries from written CSVs"),
    ]:
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
        if name == "metrics":
            sp.add_argument("path", nargs="?", help="run directory or Monte Carlo tree (default: --out)")
        _add_config_flags(sp)
    return p


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    base = load_config(ns.config) if getattr(ns, "config", None) else RunConfig()
    data: dict = {}
    for key, value in vars(ns).items():
        if key in ("command", "verbose", "config", "print_config", "path"):
            continue
        if "." in key:
            section, name = key.split(".", 1)
            data.setdefault(section, {})[name] = value
        else:
            data[key] = value
    if "log" in data and "scenario" not in data and ns.command == "run":
        data["scenario"] = "replay"
    return from_dict(data, base).validate()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _write_json(path: Path, obj):
    path.write_text(_dump(obj))


def _delay(cfg: RunConfig) -> float:
    d = cfg.delays()
    if len(d) > 1:
        raise ConfigError("this command takes a single delay")
    return d[0]


def _simulate_log(cfg: RunConfig):
    sens = replace(cfg.sensor, delay=_delay(cfg), seed=cfg.base_seed)
    try:
        return synthesize(cfg.trajectory, sens, cfg.init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(cfg: RunConfig) -> int:
    out = ensure_writable(cfg.out)
    sim = _simulate_log(cfg)
    write_simlog(out, sim)
    _write_json(out / "config.json", cfg.to_dict(echo=True))
    log.info("wrote %d IMU and %d GNSS records to %s", len(sim.t), len(sim.gnss_t), out)
    return EXIT_OK


def _run_twobody(cfg: RunConfig, out: Path) -> int:
    res = run_twobody(cfg.twobody)
    cols = np.column_stack([res.t, res.error_norm, res.delta_hat])
    write_rows(out / "twobody.csv", ["t", "error_norm", "delta_hat"], cols.T)
    below = np.nonzero(res.error_norm < 1e-3)[0]
    summary = {
        "config": cfg.to_dict(echo=True),
        "final_error": float(res.error_norm[-1]),
        "converged_at_s": float(res.t[below[0]]) if below.size else None,
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    out = ensure_writable(cfg.out)
    if cfg.scenario == "twobody":
        return _run_twobody(cfg, out)
    if cfg.scenario == "replay":
        sim = ingest_log(cfg.log)
    else:
        sim = _simulate_log(cfg)
        write_simlog(out, sim)
    start = time.perf_counter()
    by_delay: dict = {}
    innovation = {}
    failed = []
    for name in cfg.filters:
        res = run_filter(sim, name, cfg.filter)
        write_estimate(out, res)
        if not res.ok:
            failed.append(res)
        if getattr(sim, "rot", None) is not None:
            by_delay.setdefault(sim.delay, {}).setdefault(name, []).append(evaluate_result(sim, res))
        else:
            est = {"t": res.t, "pos": res.pos, "delta": res.delta}
            innovation[name] = innovation_stats(sim, est)
    summary = {"config": cfg.to_dict(echo=True), "seeds": [int(getattr(sim, "seed", 0))],
               "scenarios": scenario_summaries(by_delay)}
    if innovation:
        summary["innovation_only"] = innovation
    summary["wall_time_s"] = time.perf_counter() - start
    _write_json(out / "summary.json", summary)
    for res in failed:
        try:
            res.raise_if_failed()
        except FilterDivergence as exc:
            print(f"galins: {exc} {exc.diagnostics}", file=sys.stderr)
    return EXIT_DIVERGED if failed else EXIT_OK


def cmd_montecarlo(cfg: RunConfig) -> int:
    if cfg.scenario != "simulate":
        raise ConfigError("montecarlo needs the simulate scenario")
    out = ensure_writable(cfg.out)
    start = time.perf_counter()
    try:
        records = run_monte_carlo(cfg.trajectory, cfg.sensor, cfg.init, cfg.filter, cfg.filters,
                                  cfg.delays(), cfg.runs, cfg.base_seed,
                                  out=out if cfg.per_run_csv else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    summary = {
        "config": cfg.to_dict(echo=True),
        "seeds": [cfg.base_seed + k for k in range(cfg.runs)],
        "scenarios": scenario_summaries(records),
        "wall_time_s": time.perf_counter() - start,
    }
    _write_json(out / "summary.json", summary)
    for sc in summary["scenarios"]:
        for name, s in sc["filters"].items():
            log.info("delay %g ms %-14s NEES %.2f  ADE %.2f ms  divergent %d/%d", sc["delay_ms"], name,
                     s["nees_final_median"], s["ade_final_median_ms"], s["divergences"], s["runs"])
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, path) -> int:
    target = Path(path or cfg.out)
    summary = recompute_summary(target)
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(format="galins: %(message)s", stream=sys.stderr)
    try:
        ns = build_parser().parse_args(argv)
        logging.getLogger().setLevel(logging.INFO if ns.verbose else logging.WARNING)
        cfg = resolve_config(ns)
        if ns.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if ns.command == "simulate":
            return cmd_simulate(cfg)
        if ns.command == "run":
            return cmd_run(cfg)
        if ns.command == "montecarlo":
            return cmd_montecarlo(cfg)
        return cmd_metrics(cfg, ns.path)
    except ConfigError as exc:
        print(f"galins: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FilterDivergence as exc:
        print(f"galins: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, LogFormatError) as exc:
        print(f"galins: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
