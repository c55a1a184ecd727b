"""Batch runner: single runs, parameter sweeps and seeded replications.

    lwsim run --nodes 100,500,1000 --confirmed 0.05 --replications 3 --out results/
    lwsim run --config base.cfg --sweep max_attempts=1,2,4,8 --parallel 4
    lwsim config > base.cfg

Exit codes: 0 all runs completed, 1 invalid configuration, 2 runtime or I/O error.
"""

from __future__ import annotations

import argparse
import io
import itertools
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from lwsim._kernels import BACKEND
from lwsim.metrics import PointResult, aggregate, ledger_row, write_results
from lwsim.network import simulate
from lwsim.scenario import (CONFIG_KEYS, ConfigError, ScenarioConfig, coerce_value,
                            dump_config, format_value, parse_config_text)

log = logging.getLogger("lwsim")

OUT_ENV = "LWSIM_OUT"
DESK_PROFILE = {"sim_days": 2.0, "replications": 5}
FULL_PROFILE = {"sim_days": 57.0, "replications": 15}

# flag -> config key; each accepts a comma-separated list to sweep that key
FLAG_KEYS = {
    "nodes": "n_nodes",
    "days": "sim_days",
    "replications": "replications",
    "confirmed": "confirmed_fraction",
    "downlink": "downlink_fraction",
    "max_attempts": "max_attempts",
    "mean_interval": "mean_send_interval",
    "payload": "payload_len",
    "seed": "seed",
}
# always present in the CSV so files from different sweeps line up
BASE_COLUMNS = ("n_nodes", "confirmed_fraction", "downlink_fraction", "max_attempts")
NOT_SWEEPABLE = ("replications", "seed")
TUPLE_KEYS = tuple(k for k in CONFIG_KEYS if isinstance(getattr(ScenarioConfig(), k), tuple))


@dataclass
class SweepSpec:
    base: ScenarioConfig
    axes: list[tuple[str, list]] = field(default_factory=list)

    def points(self) -> list[dict]:
        keys = [k for k, _ in self.axes]
        return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in self.axes))]

    def columns(self) -> list[str]:
        return list(BASE_COLUMNS) + [k for k, _ in self.axes if k not in BASE_COLUMNS]

    def run_configs(self) -> list[tuple[int, int, ScenarioConfig]]:
        """(point index, replication, config) for every run, seeds seed+0 .. seed+r-1."""
        out = []
        for p, point in enumerate(self.points()):
            cfg = self.base.replace(**point)
            for r in range(cfg.replications):
                out.append((p, r, cfg.replace(seed=self.base.seed + r)))
        return out


def _run_one(config: ScenarioConfig, want_log: bool):
    t0 = time.perf_counter()
    result = simulate(config)
    row = ledger_row(result.ledger)
    row["seed"] = config.seed
    text = None
    if want_log:
        buf = io.StringIO()
        result.log.write_text(buf)
        text = buf.getvalue()
    return row, text, time.perf_counter() - t0


def run_sweep(spec: SweepSpec, parallel: int = 1, event_log_dir: Path | None = None,
              progress=None) -> list[PointResult]:
    """Execute every (point, replication) run; output order never depends on ``parallel``."""
    jobs = spec.run_configs()
    points = spec.points()
    rows: dict[tuple[int, int], dict] = {}
    want_log = event_log_dir is not None

    def collect(key, outcome, done):
        row, text, elapsed = outcome
        rows[key] = row
        if text is not None:
            event_log_dir.mkdir(parents=True, exist_ok=True)
            (event_log_dir / f"point{key[0]:03d}_rep{key[1]:02d}.log").write_text(text)
        if progress:
            progress(done, len(jobs), points[key[0]], key[1], elapsed)

    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [((p, r), pool.submit(_run_one, cfg, want_log)) for p, r, cfg in jobs]
            for done, (key, fut) in enumerate(futures, 1):
                collect(key, fut.result(), done)
    else:
        for done, (p, r, cfg) in enumerate(jobs, 1):
            collect((p, r), _run_one(cfg, want_log), done)

    results = []
    for p, point in enumerate(points):
        cfg = spec.base.replace(**point)
        params = {k: getattr(cfg, k) for k in spec.columns()}
        results.append(PointResult(params, [rows[(p, r)] for r in range(cfg.replications)]))
    return results


def _split(key: str, text: str) -> list:
    values = [coerce_value(key, part) for part in text.split(",") if part.strip()]
    if not values:
        raise ConfigError(key, "no value given")
    return values


def build_spec(args: argparse.Namespace) -> SweepSpec:
    values: dict = dict(FULL_PROFILE if args.full else DESK_PROFILE)
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
    if args.full:
        values.update(FULL_PROFILE)
    axes: dict[str, list] = {}

    def put(key, raw):
        # tuple-valued keys (channels, sensitivity rows) use commas themselves
        parsed = [coerce_value(key, raw)] if key in TUPLE_KEYS else _split(key, raw)
        if len(parsed) > 1:
            if key in NOT_SWEEPABLE:
                raise ConfigError(key, "cannot be swept; use --replications for repeated seeds")
            axes[key] = parsed
        else:
            axes.pop(key, None)
            values[key] = parsed[0]

    for item in args.set or []:
        key, _, raw = item.partition("=")
        if not _:
            raise ConfigError(item, "expected key=value")
        put(key.strip(), raw)
    for flag, key in FLAG_KEYS.items():
        raw = getattr(args, flag)
        if raw is not None:
            put(key, raw)
    if args.dr_decay:
        values["dr_decay"] = True
    for item in args.sweep or []:
        key, _, raw = item.partition("=")
        key = key.strip()
        if not _:
            raise ConfigError(item, "expected field=v1,v2,...")
        if key in NOT_SWEEPABLE:
            raise ConfigError(key, "cannot be swept; use --replications for repeated seeds")
        axes[key] = _split(key, raw)
        values.pop(key, None)

    base = ScenarioConfig(**values)
    for key, vals in axes.items():   # validate every sweep value up front
        for v in vals:
            base.replace(**{key: v})
    return SweepSpec(base, list(axes.items()))


def summary_table(results: list[PointResult], columns: list[str]) -> str:
    shown = ("goodput", "downlink_delivery_ratio", "ack_cdf_1", "energy_mj_mean")
    header = columns + [f"{m} (mean±std)" for m in shown]
    lines = []
    for point in results:
        agg = aggregate(point.rows)
        cells = [format_value(point.params[c]) for c in columns]
        for m in shown:
            mean, std = agg[m]
            cells.append("-" if mean is None else f"{mean:.4f}±{std:.4f}")
        lines.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in lines)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join([fmt.format(*header)] + [fmt.format(*r) for r in lines])


def cmd_run(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or "results")
    out_dir.mkdir(parents=True, exist_ok=True)  # fail before spending time on runs
    npoints = len(spec.points())
    log.info("%d point(s) x %d replication(s), %s kernels", npoints,
             spec.base.replications, BACKEND)

    def progress(done, total, point, rep, elapsed):
        if not args.quiet:
            tag = " ".join(f"{k}={format_value(v)}" for k, v in point.items()) or "base"
            print(f"[{done}/{total}] {tag} rep={rep} {elapsed:.1f}s", file=sys.stderr)

    event_dir = out_dir / f"{args.name}_events" if args.event_log else None
    results = run_sweep(spec, args.parallel, event_dir, progress)
    path = write_results(results, out_dir / f"{args.name}.csv", spec.columns())
    (out_dir / f"{args.name}.cfg").write_text(dump_config(spec.base))
    print(summary_table(results, spec.columns()))
    print(f"wrote {path}")
    return 0


def cmd_config(args: argparse.Namespace) -> int:
    sys.stdout.write(dump_config(ScenarioConfig()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lwsim", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration or a sweep")
    run.add_argument("--config", help="key = value file; flags override it")
    run.add_argument("--nodes", help="number of end devices (comma list sweeps)")
    run.add_argument("--days", help="simulated days per run")
    run.add_argument("--replications", help="runs per point, seeds seed..seed+r-1")
    run.add_argument("--confirmed", help="fraction of uplinks requesting an ACK")
    run.add_argument("--downlink", help="downlink data as a fraction of uplink traffic")
    run.add_argument("--max-attempts", dest="max_attempts", help="transmissions per confirmed frame")
    run.add_argument("--dr-decay", dest="dr_decay", action="store_true",
                     help="raise SF every second failed attempt")
    run.add_argument("--mean-interval", dest="mean_interval", help="mean send interval (s)")
    run.add_argument("--payload", help="uplink payload bytes")
    run.add_argument("--seed", help="base seed")
    run.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    run.add_argument("--name", default="results", help="output file stem")
    run.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    run.add_argument("--full", "--paper", dest="full", action="store_true",
                     help="57 simulated days, 15 replications (default: 2 days, 5)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help=f"any config key: {', '.join(CONFIG_KEYS)}")
    run.add_argument("--sweep", action="append", metavar="KEY=V1,V2",
                     help="add a sweep axis over any config key")
    run.add_argument("--event-log", dest="event_log", action="store_true",
                     help="write the per-run transmission log")
    run.add_argument("-q", "--quiet", action="store_true", help="no progress lines")
    run.set_defaults(func=cmd_run)

    cfg = sub.add_parser("config", help="print the default configuration")
    cfg.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "parallel", 1) < 1:
        print("config error: parallel: must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any crash inside a run
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
