import csv
import json
import math

import pytest

from hhfl import cli
from hhfl.config import (DEFAULTS, apply_axis, config_hash, experiment_from_dict, load_experiment, load_sweep,
                         locate)
from hhfl.errors import InvalidConfig
from hhfl.traceio import read_summary, read_trace

SMALL = {
    "name": "small",
    "seed": 1,
    "dataset": {"kind": "synth_gaussian", "num_classes": 10, "feature_dim": 8, "train_per_class": 120,
                "test_per_class": 30, "separation": 4.0, "noise_std": 1.0},
    "schedule": {"E": 5, "G": 5, "T": 500},
}


def _write(path, doc, indent=2):
    path.write_text(json.dumps(doc, indent=indent))
    return path


@pytest.fixture
def small_cfg(tmp_path):
    return _write(tmp_path / "small.json", {**SMALL, "output_dir": str(tmp_path / "out")})


def test_run_writes_traces_and_summary(small_cfg, tmp_path, capsys):
    assert cli.main(["run", str(small_cfg)]) == 0
    out = tmp_path / "out"
    for name in ("trace_hier_fedavg.csv", "trace_hhfl.csv", "summary.csv", "config.json"):
        assert (out / name).exists()
    first = (out / "trace_hhfl.csv").read_text().splitlines()
    assert first[0].startswith("# config_hash=") and "seed=1" in first[0]
    assert first[1] == "step,loss,accuracy,lr,event,links_used,unicast_units,multipoint_units"
    meta, rows = read_summary(out / "summary.csv")
    metrics = {m: v for _, m, v in rows}
    assert {"efficiency_gain", "efficiency_gain_time", "R_upper", "convergence_step.hhfl",
            "overall_time.hier_fedavg", "unicast_units.hhfl"} <= set(metrics)
    assert metrics["R_upper"] == 75 / 57
    assert all(e == "small" for e, _, _ in rows)
    assert "efficiency_gain" in capsys.readouterr().out


def test_rerun_is_byte_identical(small_cfg, tmp_path):
    assert cli.main(["run", str(small_cfg), "-q"]) == 0
    assert cli.main(["run", str(small_cfg), "-q", "--out", str(tmp_path / "again")]) == 0
    for name in ("trace_hier_fedavg.csv", "trace_hhfl.csv", "summary.csv"):
        assert (tmp_path / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_summary_round_trips_through_traces(small_cfg, tmp_path):
    cli.main(["run", str(small_cfg), "-q"])
    out = tmp_path / "out"
    _, rows = read_summary(out / "summary.csv")
    metrics = {m: v for _, m, v in rows}
    g, gt = cli.recompute_gain(out)
    assert g == metrics["efficiency_gain"] or (math.isnan(g) and math.isnan(metrics["efficiency_gain"]))
    assert gt == metrics["efficiency_gain_time"] or math.isnan(gt)
    tr = read_trace(out / "trace_hhfl.csv")
    assert tr.schedule.E == 5 and len(tr.steps) == 501
    assert cli.main(["report", str(out)]) == 0


def test_trace_values_bit_exact(small_cfg, tmp_path):
    from hhfl.experiment import build_experiment, run_experiment

    cli.main(["run", str(small_cfg), "-q"])
    traces = run_experiment(build_experiment(load_experiment(small_cfg)))
    back = read_trace(tmp_path / "out" / "trace_hhfl.csv")
    assert back.loss.tolist() == traces["hhfl"].loss.tolist()
    assert back.accuracy.tolist() == traces["hhfl"].accuracy.tolist()
    assert back.units_until(500) == traces["hhfl"].units_until(500)


def test_invalid_field_exit_2(tmp_path, capsys):
    path = _write(tmp_path / "bad.json", {"seed": 0, "schedule": {"E": 0}})
    assert cli.main(["run", str(path)]) == 2
    err = capsys.readouterr().err
    assert "schedule.E" in err and f"{path}:4" in err


@pytest.mark.parametrize("doc, field", [
    ({"schedule": {"E": 5}}, "seed"),
    ({"seed": 0, "case": "NONIID3"}, "case"),
    ({"seed": 0, "learner": {"kind": "cnn"}}, "learner.kind"),
    ({"seed": 0, "architectures": ["hhfl", "ring"]}, "architectures"),
    ({"seed": 0, "criterion": {"window": 1}}, "criterion.window"),
    ({"seed": 0, "colour": "red"}, "colour"),
    ({"seed": 0, "learner": {"kind": "quadratic"}}, "dataset.kind"),
])
def test_validation_names_field(doc, field):
    with pytest.raises(InvalidConfig) as info:
        experiment_from_dict(doc)
    assert info.value.field == field


def test_malformed_json_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "schedule": {\n}')
    assert cli.main(["run", str(path)]) == 2
    assert "malformed JSON" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2


def test_numeric_failure_exit_3(tmp_path):
    doc = {**SMALL, "lr": {"kind": "exp_decay", "init": 1e308, "factor": 1.0},
           "schedule": {"E": 5, "G": 5, "T": 20}, "output_dir": str(tmp_path / "o")}
    assert cli.main(["run", str(_write(tmp_path / "n.json", doc))]) == 3


def test_locate_nested_key():
    text = '{\n "a": {\n  "E": 1\n },\n "schedule": {\n  "E": 0\n }\n}'
    assert locate(text, ("schedule", "E")) == 6
    assert locate(text, ("missing",)) is None


def test_config_hash_ignores_output_dir():
    a = experiment_from_dict({"seed": 0, "output_dir": "x"})
    b = experiment_from_dict({"seed": 0, "output_dir": "y"})
    c = experiment_from_dict({"seed": 1})
    assert a.config_hash == b.config_hash != c.config_hash
    assert config_hash(a.raw) == a.config_hash


def test_defaults_cover_headline_setup():
    cfg = experiment_from_dict({"seed": 0})
    assert cfg["schedule"] == {"E": 5, "G": 5, "T": 1000}
    assert cfg["lr"] == DEFAULTS["lr"] and cfg["batch_size"] == 20
    assert cfg["criterion"]["slope_threshold"] == 0.001


def test_apply_axis():
    base = experiment_from_dict({"seed": 0})
    assert apply_axis(base, "E", 10)["schedule"]["E"] == 10
    assert apply_axis(base, "case", "IID_IID", seed=4)["case"] == "IID_IID"
    assert apply_axis(base, "case", "IID_IID", seed=4).seed == 4
    assert apply_axis(base, "overlap_proportion", 0.5)["overlap_proportion"] == 0.5


def _sweep(tmp_path, small_cfg, **kw):
    doc = {"base": small_cfg.name, "axis": "G", "values": [5], "seeds": [0, 1],
           "output_dir": str(tmp_path / "sw")}
    doc.update(kw)
    return _write(tmp_path / "sweep.json", doc)


def test_sweep_rows_and_worker_independence(tmp_path, small_cfg, monkeypatch):
    path = _sweep(tmp_path, small_cfg, values=[2, 5])
    assert cli.main(["sweep", str(path), "-q"]) == 0
    serial = (tmp_path / "sw" / "gain_vs_G.csv").read_text()
    rows = list(csv.reader(serial.splitlines()[1:]))
    assert rows[0] == ["axis", "value", "gain", "gain_time", "gains", "status"]
    assert [r[1] for r in rows[1:]] == ["2", "5"] and all(r[5] == "ok" for r in rows[1:])
    monkeypatch.setenv("HHFL_WORKERS", "2")
    assert cli.main(["sweep", str(path), "-q", "--out", str(tmp_path / "sw2")]) == 0
    assert (tmp_path / "sw2" / "gain_vs_G.csv").read_text() == serial
    assert cli.main(["report", str(tmp_path / "sw")]) == 0


def test_sweep_partial_failure_exit_1(tmp_path, small_cfg):
    # E=500 leaves too few evaluation points in a 500-step run
    path = _sweep(tmp_path, small_cfg, axis="E", values=[5, 500], seeds=[0])
    assert cli.main(["sweep", str(path), "-q"]) == 1
    rows = (tmp_path / "sw" / "gain_vs_E.csv").read_text().splitlines()
    assert rows[2].endswith(",ok") and rows[3].endswith(",error")


@pytest.mark.parametrize("kw", [{"values": []}, {"axis": "lr"}, {"values": [0]}, {"seeds": []}])
def test_sweep_validation_exit_2(tmp_path, small_cfg, kw):
    assert cli.main(["sweep", str(_sweep(tmp_path, small_cfg, **kw))]) == 2


def test_load_sweep_inline_base(tmp_path):
    path = _write(tmp_path / "s.json", {"base": {"seed": 3}, "axis": "case", "values": ["IID_IID"]})
    sw = load_sweep(path)
    assert sw.seeds == [3] and sw.base.seed == 3


def test_verify_command(capsys):
    assert cli.main(["verify", "gradcheck", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "seed=2" in out and "PASS" in out


def test_verify_reports_minimal_failure(monkeypatch):
    from hhfl import verify

    monkeypatch.setattr(verify, "GRADCHECK_TOL", {"quadratic": 0.0, "logistic": 0.0, "mlp": 0.0})
    res = verify.gradcheck(seed=0, probes=2)
    assert not res.ok
    assert "minimal" in res.report() and "instance" in res.report()


def test_report_empty_dir(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == 2
