"""Experiment and sweep configuration files.

Configs are JSON documents. Validation errors carry the offending field
path and, when the config came from text, the line it sits on.

Example ``run`` config::

    {
      "name": "headline",
      "seed": 0,
      "topology": "fig3",
      "architectures": ["hier_fedavg", "hhfl"],
      "case": "NONIID_NONIID2",
      "learner": {"kind": "logistic"},
      "dataset": {"kind": "synth_gaussian", "feature_dim": 20},
      "schedule": {"E": 5, "G": 5, "T": 1000},
      "lr": {"kind": "exp_decay", "init": 0.1, "factor": 0.992},
      "criterion": {"slope_threshold": 0.001, "window": 11},
      "time_model": {"ratio_ces": 10, "ratio_ecs": 10},
      "output_dir": "out/headline"
    }

A sweep config wraps a base config::

    {"base": {...} | "path/to/run.json", "axis": "E", "values": [3, 5, 7, 10],
     "seeds": [0, 1, 2], "output_dir": "out/sweep_E"}
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .data import CaseId
from .engine import ARCHITECTURES
from .errors import InvalidConfig

SWEEP_AXES = ("E", "G", "overlap_proportion", "case")
LEARNERS = ("logistic", "mlp", "quadratic")
DATASETS = ("synth_gaussian", "mnist", "quadratic")

DEFAULTS: dict = {
    "name": "",
    "topology": "fig3",
    "architectures": ["hier_fedavg", "hhfl"],
    "case": "NONIID_NONIID2",
    "overlap_proportion": None,
    "overlap_rule": "home",
    "learner": {"kind": "logistic", "hidden": 64},
    "dataset": {
        "kind": "synth_gaussian",
        "num_classes": 10,
        "feature_dim": 20,
        "train_per_class": 200,
        "test_per_class": 200,
        "separation": 4.0,
        "noise_std": 1.0,
    },
    "schedule": {"E": 5, "G": 5, "T": 1000},
    "lr": {"kind": "exp_decay", "init": 0.1, "factor": 0.992},
    "batch_size": 20,
    "criterion": {"slope_threshold": 0.001, "window": 11},
    "time_model": {"ratio_ces": 10.0, "ratio_ecs": 10.0},
    "output_dir": "out",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "topology":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def locate(text: str | None, path: tuple[str, ...]) -> int | None:
    """1-based line of the last key in ``path`` inside JSON ``text``.

    Keys are searched in order, each after the previous one, which is enough
    to pin fields in hand-written configs.
    """
    if not text or not path:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class ExperimentConfig:
    """A validated run config with defaults filled in."""

    raw: dict
    source: str | None = None
    path: Path | None = None

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    @property
    def experiment_id(self) -> str:
        return self.raw.get("name") or self.config_hash

    def with_overrides(self, **over) -> "ExperimentConfig":
        cfg = ExperimentConfig(_merge(self.raw, over))
        validate_experiment(cfg)
        return cfg


@dataclass
class SweepConfig:
    base: ExperimentConfig
    axis: str
    values: list
    seeds: list[int] = field(default_factory=list)
    output_dir: str = "out/sweep"
    source: str | None = None


def config_hash(raw: dict) -> str:
    """Stable 16-hex-digit digest of a config, ignoring where outputs go."""
    body = {k: v for k, v in raw.items() if k != "output_dir"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _fail(msg: str, path: tuple[str, ...], source: str | None):
    raise InvalidConfig(msg, field=".".join(path), line=locate(source, path))


def validate_experiment(cfg: ExperimentConfig) -> None:
    r, src = cfg.raw, cfg.source
    if "seed" not in r or not _is_int(r["seed"]) or r["seed"] < 0:
        _fail("seed must be present and a nonnegative integer", ("seed",), src)
    topo = r["topology"]
    if topo != "fig3":
        if not isinstance(topo, dict) or "connectivity" not in topo or "num_es" not in topo:
            _fail('topology must be "fig3" or an object with num_es and connectivity', ("topology",), src)
    archs = r["architectures"]
    if isinstance(archs, str):
        archs = r["architectures"] = [archs]
    if not archs or any(a not in ARCHITECTURES for a in archs):
        _fail(f"architectures must be a non-empty subset of {list(ARCHITECTURES)}", ("architectures",), src)
    if len(set(archs)) != len(archs):
        _fail("architectures must not repeat", ("architectures",), src)
    if r["case"] not in [c.value for c in CaseId]:
        _fail(f"unknown case {r['case']!r}", ("case",), src)
    op = r["overlap_proportion"]
    if op is not None and not (_is_num(op) and 0 <= op <= 1):
        _fail("overlap_proportion must be in [0, 1]", ("overlap_proportion",), src)
    if r["overlap_rule"] not in ("home", "union"):
        _fail("overlap_rule must be home or union", ("overlap_rule",), src)
    lk = r["learner"].get("kind")
    if lk not in LEARNERS:
        _fail(f"learner.kind must be one of {list(LEARNERS)}", ("learner", "kind"), src)
    if not _is_int(r["learner"].get("hidden", 64)) or r["learner"].get("hidden", 64) < 1:
        _fail("learner.hidden must be a positive integer", ("learner", "hidden"), src)
    ds = r["dataset"]
    if ds.get("kind") not in DATASETS:
        _fail(f"dataset.kind must be one of {list(DATASETS)}", ("dataset", "kind"), src)
    if (lk == "quadratic") != (ds["kind"] == "quadratic"):
        _fail("the quadratic learner pairs with the quadratic dataset and only with it",
              ("dataset", "kind"), src)
    if ds["kind"] == "synth_gaussian":
        for key in ("num_classes", "feature_dim", "train_per_class", "test_per_class"):
            if not _is_int(ds.get(key)) or ds[key] < 1:
                _fail(f"dataset.{key} must be a positive integer", ("dataset", key), src)
        for key in ("separation", "noise_std"):
            if not _is_num(ds.get(key)) or ds[key] <= 0:
                _fail(f"dataset.{key} must be positive", ("dataset", key), src)
    elif ds["kind"] == "mnist":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not isinstance(ds.get(key), str):
                _fail(f"dataset.{key} must be a file path", ("dataset", key), src)
    else:
        if not _is_int(ds.get("dim")) or ds["dim"] < 1:
            _fail("dataset.dim must be a positive integer", ("dataset", "dim"), src)
        if not _is_num(ds.get("heterogeneity", 1.0)) or ds.get("heterogeneity", 1.0) < 0:
            _fail("dataset.heterogeneity must be nonnegative", ("dataset", "heterogeneity"), src)
    for key in ("E", "G", "T"):
        v = r["schedule"].get(key)
        if not _is_int(v) or v < 1:
            _fail(f"schedule.{key} must be a positive integer, got {v!r}", ("schedule", key), src)
    lr = r["lr"]
    if lr.get("kind") == "exp_decay":
        if not _is_num(lr.get("init")) or lr["init"] <= 0:
            _fail("lr.init must be positive", ("lr", "init"), src)
        if not _is_num(lr.get("factor")) or not 0 < lr["factor"] <= 1:
            _fail("lr.factor must be in (0, 1]", ("lr", "factor"), src)
    elif lr.get("kind") == "inverse":
        for key in ("beta", "alpha"):
            if not _is_num(lr.get(key)) or lr[key] <= 0:
                _fail(f"lr.{key} must be positive", ("lr", key), src)
    else:
        _fail("lr.kind must be exp_decay or inverse", ("lr", "kind"), src)
    if not _is_int(r["batch_size"]) or r["batch_size"] < 1:
        _fail("batch_size must be a positive integer", ("batch_size",), src)
    c = r["criterion"]
    if not _is_num(c.get("slope_threshold")) or c["slope_threshold"] <= 0:
        _fail("criterion.slope_threshold must be positive", ("criterion", "slope_threshold"), src)
    if not _is_int(c.get("window")) or c["window"] < 2:
        _fail("criterion.window must be an integer >= 2", ("criterion", "window"), src)
    for key in ("ratio_ces", "ratio_ecs"):
        if not _is_num(r["time_model"].get(key)) or r["time_model"][key] <= 0:
            _fail(f"time_model.{key} must be positive", ("time_model", key), src)
    if not isinstance(r["output_dir"], str):
        _fail("output_dir must be a string", ("output_dir",), src)


def _parse_text(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise InvalidConfig("config must be a JSON object", line=1)
    return doc


def experiment_from_dict(doc: dict, source: str | None = None, path=None) -> ExperimentConfig:
    unknown = sorted(set(doc) - set(DEFAULTS) - {"seed"})
    if unknown:
        _fail(f"unknown field {unknown[0]!r}", (unknown[0],), source)
    for key in ("learner", "dataset", "schedule", "lr", "criterion", "time_model"):
        if key in doc and not isinstance(doc[key], dict):
            _fail(f"{key} must be an object", (key,), source)
    base = copy.deepcopy(DEFAULTS)
    # a dataset or lr of a different kind replaces the defaults wholesale
    for key in ("dataset", "lr"):
        if key in doc and doc[key].get("kind", base[key]["kind"]) != base[key]["kind"]:
            base[key] = {}
    cfg = ExperimentConfig(_merge(base, doc), source=source, path=None if path is None else Path(path))
    validate_experiment(cfg)
    return cfg


def load_experiment(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return experiment_from_dict(_parse_text(text), source=text, path=path)


def sweep_from_dict(doc: dict, source: str | None = None, base_dir: Path | None = None) -> SweepConfig:
    for key in ("base", "axis", "values"):
        if key not in doc:
            _fail(f"sweep config needs {key!r}", (key,), source)
    base = doc["base"]
    if isinstance(base, str):
        bpath = Path(base) if base_dir is None else base_dir / base
        try:
            base_cfg = load_experiment(bpath)
        except OSError as exc:
            _fail(f"cannot read base config: {exc}", ("base",), source)
    elif isinstance(base, dict):
        try:
            base_cfg = experiment_from_dict(base)
        except InvalidConfig as exc:
            path = ("base",) + tuple(str(exc.field).split(".")) if exc.field else ("base",)
            raise InvalidConfig(f"base: {exc.args[0]}", field=".".join(path),
                                line=locate(source, path)) from None
    else:
        _fail("base must be an object or a path", ("base",), source)
    axis = doc["axis"]
    if axis not in SWEEP_AXES:
        _fail(f"axis must be one of {list(SWEEP_AXES)}", ("axis",), source)
    values = doc["values"]
    if not isinstance(values, list) or not values:
        _fail("values must be a non-empty list", ("values",), source)
    for v in values:
        if axis in ("E", "G") and (not _is_int(v) or v < 1):
            _fail(f"{axis} values must be positive integers, got {v!r}", ("values",), source)
        if axis == "overlap_proportion" and (not _is_num(v) or not 0 <= v <= 1):
            _fail(f"overlap_proportion values must be in [0, 1], got {v!r}", ("values",), source)
        if axis == "case" and v not in [c.value for c in CaseId]:
            _fail(f"unknown case {v!r}", ("values",), source)
    seeds = doc.get("seeds", [base_cfg.seed])
    if not isinstance(seeds, list) or not seeds or not all(_is_int(s) and s >= 0 for s in seeds):
        _fail("seeds must be a non-empty list of nonnegative integers", ("seeds",), source)
    out = doc.get("output_dir", base_cfg["output_dir"])
    if not isinstance(out, str):
        _fail("output_dir must be a string", ("output_dir",), source)
    return SweepConfig(base=base_cfg, axis=axis, values=list(values), seeds=list(seeds),
                       output_dir=out, source=source)


def load_sweep(path) -> SweepConfig:
    path = Path(path)
    text = path.read_text()
    return sweep_from_dict(_parse_text(text), source=text, base_dir=path.parent)


def apply_axis(base: ExperimentConfig, axis: str, value, seed: int | None = None) -> ExperimentConfig:
    """The base config with one sweep axis set to ``value``."""
    over: dict = {}
    if axis in ("E", "G"):
        over["schedule"] = {axis: value}
    else:
        over[axis] = value
    if seed is not None:
        over["seed"] = seed
    return base.with_overrides(**over)
