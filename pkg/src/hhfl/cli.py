"""Command-line entry point: ``hhfl run|sweep|verify|report``.

Exit codes: 0 success, 1 some sweep rows (or report checks) failed,
2 invalid config, 3 numeric failure during training.
Set ``HHFL_WORKERS`` to run sweep rows in parallel processes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ConvergenceCriterion, TimeModel, detect_convergence, overall_time
from .config import (ExperimentConfig, apply_axis, config_hash, experiment_from_dict, load_experiment,
                     load_sweep)
from .errors import InvalidConfig, NumericFailure
from .experiment import BASELINE, CANDIDATE, build_experiment, run_experiment, summarize
from .traceio import fmt, read_summary, read_trace, summary_to_csv, write_atomic, write_trace
from .verify import SUITES, run_suite

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _config_error(exc: InvalidConfig, path) -> int:
    where = f"{path}:{exc.line}" if exc.line else str(path)
    field = f" [{exc.field}]" if exc.field else ""
    print(f"error: {where}:{field} {exc.args[0]}", file=sys.stderr)
    return EXIT_CONFIG


def execute(cfg: ExperimentConfig, out_dir: Path) -> list[tuple[str, float]]:
    """Run one config and write its traces, summary and resolved config into ``out_dir``."""
    exp = build_experiment(cfg)
    # divergence is reported through NumericFailure, not floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        traces = run_experiment(exp)
    rows = summarize(exp, traces)
    h = cfg.config_hash
    for arch, tr in traces.items():
        write_trace(out_dir / f"trace_{arch}.csv", tr, h)
    write_atomic(out_dir / "summary.csv", summary_to_csv(cfg.experiment_id, rows, h, cfg.seed))
    write_atomic(out_dir / "config.json", json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    return rows


def cmd_run(path, out: str | None = None, quiet: bool = False) -> int:
    try:
        cfg = load_experiment(path)
    except InvalidConfig as exc:
        return _config_error(exc, path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out or cfg["output_dir"])
    try:
        rows = execute(cfg, out_dir)
    except InvalidConfig as exc:
        return _config_error(exc, path)
    except NumericFailure as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not quiet:
        print(f"wrote {out_dir} (config_hash={cfg.config_hash}, seed={cfg.seed})")
        for metric, value in rows:
            print(f"  {metric:32s} {value:.6g}")
    return EXIT_OK


def _sweep_row(raw: dict, out_dir: str) -> dict:
    """One isolated sweep run; never raises so a bad row cannot sink the sweep."""
    try:
        cfg = experiment_from_dict(raw)
        rows = dict(execute(cfg, Path(out_dir)))
        gain = rows.get("efficiency_gain", math.nan)
        status = "ok" if not math.isnan(gain) else "no_convergence"
        return {"status": status, "gain": gain, "gain_time": rows.get("efficiency_gain_time", math.nan),
                "message": ""}
    except (InvalidConfig, NumericFailure, ValueError) as exc:
        return {"status": "error", "gain": math.nan, "gain_time": math.nan,
                "message": f"{type(exc).__name__}: {exc}"}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HHFL_WORKERS", "1")))
    except ValueError:
        return 1


def cmd_sweep(path, out: str | None = None, quiet: bool = False) -> int:
    try:
        sw = load_sweep(path)
        jobs = []
        for value in sw.values:
            for seed in sw.seeds:
                jobs.append((value, seed, apply_axis(sw.base, sw.axis, value, seed)))
    except InvalidConfig as exc:
        return _config_error(exc, path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(out or sw.output_dir)
    args = [(cfg.raw, str(root / f"{sw.axis}={value}" / f"seed={seed}")) for value, seed, cfg in jobs]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_row, *zip(*args)))
    else:
        results = [_sweep_row(*a) for a in args]

    buf = io.StringIO()
    buf.write(f"# config_hash={sw.base.config_hash},seed={'|'.join(str(s) for s in sw.seeds)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "gain", "gain_time", "gains", "status"])
    failed = 0
    for value in sw.values:
        mine = [r for (v, _, _), r in zip(jobs, results) if v == value]
        ok = [r for r in mine if r["status"] == "ok"]
        bad = [r for r in mine if r["status"] != "ok"]
        failed += len(bad)
        gain = float(np.median([r["gain"] for r in ok])) if ok else math.nan
        gain_t = float(np.median([r["gain_time"] for r in ok])) if ok else math.nan
        status = "ok" if not bad else ";".join(sorted({r["status"] for r in bad}))
        w.writerow([sw.axis, value, fmt(gain), fmt(gain_t), "|".join(fmt(r["gain"]) for r in mine), status])
        if not quiet:
            print(f"{sw.axis}={value}: gain={gain:.4g} gain_time={gain_t:.4g} [{status}]")
        for r in bad:
            if r["message"]:
                print(f"  {sw.axis}={value}: {r['message']}", file=sys.stderr)
    write_atomic(root / f"gain_vs_{sw.axis}.csv", buf.getvalue())
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_verify(suite: str, seed: int = 0) -> int:
    res = run_suite(suite, seed)
    print(res.report())
    return EXIT_OK if res.ok else EXIT_PARTIAL


def recompute_gain(run_dir: Path) -> tuple[float, float]:
    """Gain in steps and in time recomputed from the trace CSVs of one run."""
    cfg = json.loads((run_dir / "config.json").read_text())
    crit = ConvergenceCriterion(**cfg["criterion"])
    tm = TimeModel(ratio_ces=cfg["time_model"]["ratio_ces"], ratio_ecs=cfg["time_model"]["ratio_ecs"])
    a = read_trace(run_dir / f"trace_{BASELINE}.csv")
    b = read_trace(run_dir / f"trace_{CANDIDATE}.csv")
    sa = detect_convergence(a.accuracy_curve(), crit)
    sb = detect_convergence(b.accuracy_curve(), crit)
    if not (sa and sb):
        return math.nan, math.nan
    return sa / sb, overall_time(sa, a.schedule, tm) / overall_time(sb, b.schedule, tm)


def _same(x: float, y: float) -> bool:
    return (math.isnan(x) and math.isnan(y)) or x == y


def cmd_report(directory) -> int:
    root = Path(directory)
    summaries = sorted(root.rglob("summary.csv"))
    if not summaries:
        print(f"error: no summary.csv under {root}", file=sys.stderr)
        return EXIT_CONFIG
    bad = 0
    for path in summaries:
        meta, rows = read_summary(path)
        metrics = {m: v for _, m, v in rows}
        rel = path.parent.relative_to(root) if path.parent != root else Path(".")
        line = f"{rel}: config_hash={meta.get('config_hash')} seed={meta.get('seed')}"
        if "efficiency_gain" in metrics:
            g, gt = recompute_gain(path.parent)
            consistent = _same(g, metrics["efficiency_gain"]) and _same(gt, metrics["efficiency_gain_time"])
            bad += not consistent
            line += (f" gain={metrics['efficiency_gain']:.4g} gain_time={metrics['efficiency_gain_time']:.4g}"
                     f" R_upper={metrics['R_upper']:.4g} round-trip={'ok' if consistent else 'MISMATCH'}")
        print(line)
    return EXIT_PARTIAL if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hhfl", description="Hierarchical federated learning simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("-q", "--quiet", action="store_true")
    p = sub.add_parser("sweep", help="run a sweep config")
    p.add_argument("config")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("-q", "--quiet", action="store_true")
    p = sub.add_parser("verify", help="run a randomised property suite")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("report", help="summarise a results directory and re-check its gains")
    p.add_argument("dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.quiet)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.out, args.quiet)
    if args.command == "verify":
        return cmd_verify(args.suite, args.seed)
    return cmd_report(args.dir)


if __name__ == "__main__":
    sys.exit(main())
