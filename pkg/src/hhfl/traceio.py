"""CSV serialisation of traces and summaries.

Every file starts with one ``#`` comment row carrying the config hash and
seed. Floats use 17 significant digits so a trace read back is bit-equal to
the one written.
"""
from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path

import numpy as np

from .engine import EventRecord, Schedule, TrainingTrace

TRACE_COLUMNS = ("step", "loss", "accuracy", "lr", "event", "links_used", "unicast_units",
                 "multipoint_units")
SUMMARY_COLUMNS = ("experiment_id", "metric", "value")


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _header(meta: dict) -> str:
    return "# " + ",".join(f"{k}={meta[k]}" for k in meta) + "\n"


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        return {}
    out = {}
    for part in line[1:].strip().split(","):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_atomic(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def trace_to_csv(trace: TrainingTrace, config_hash: str) -> str:
    meta = {"config_hash": config_hash, "seed": trace.seed, "arch": trace.arch,
            "E": trace.schedule.E, "G": trace.schedule.G, "T": trace.schedule.T}
    by_step: dict[int, list[EventRecord]] = {}
    for e in trace.events:
        by_step.setdefault(e.t, []).append(e)
    buf = io.StringIO()
    buf.write(_header(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t in trace.steps:
        t = int(t)
        evs = by_step.get(t, [])
        w.writerow([
            t, fmt(trace.loss[t]), fmt(trace.accuracy[t]), fmt(trace.lr[t]),
            "+".join(e.event for e in evs),
            sum(e.links_used for e in evs),
            sum(e.unicast_units for e in evs),
            sum(e.multipoint_units for e in evs),
        ])
    return buf.getvalue()


def write_trace(path, trace: TrainingTrace, config_hash: str) -> None:
    write_atomic(path, trace_to_csv(trace, config_hash))


def read_trace(path) -> TrainingTrace:
    """Rebuild the metric part of a trace; per-step drift is not stored and reads as NaN.

    Events that share a step come back as one record per event with the
    step's unit totals on the first of them, which preserves
    :meth:`TrainingTrace.units_until`.
    """
    with open(path, newline="") as fh:
        meta = _parse_header(fh.readline())
        rows = list(csv.DictReader(fh))
    steps = np.array([int(r["step"]) for r in rows])
    events = []
    for r in rows:
        if not r["event"]:
            continue
        for j, name in enumerate(r["event"].split("+")):
            first = j == 0
            events.append(EventRecord(int(r["step"]), name,
                                      int(r["links_used"]) if first else 0,
                                      int(r["unicast_units"]) if first else 0,
                                      int(r["multipoint_units"]) if first else 0))
    return TrainingTrace(
        arch=meta.get("arch", ""),
        schedule=Schedule(int(meta["E"]), int(meta["G"]), int(meta["T"])),
        seed=int(meta.get("seed", 0)),
        steps=steps,
        loss=np.array([float(r["loss"]) for r in rows]),
        accuracy=np.array([float(r["accuracy"]) for r in rows]),
        lr=np.array([float(r["lr"]) for r in rows]),
        drift=np.full(len(rows), np.nan),
        events=events,
        config={"config_hash": meta.get("config_hash", "")},
    )


def summary_to_csv(experiment_id: str, rows, config_hash: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(_header({"config_hash": config_hash, "seed": seed}))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for metric, value in rows:
        w.writerow([experiment_id, metric, fmt(value)])
    return buf.getvalue()


def read_summary(path) -> tuple[dict, list[tuple[str, str, float]]]:
    with open(path, newline="") as fh:
        meta = _parse_header(fh.readline())
        rows = [(r["experiment_id"], r["metric"], float(r["value"])) for r in csv.DictReader(fh)]
    return meta, rows
