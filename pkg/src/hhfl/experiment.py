"""Turn an :class:`~hhfl.config.ExperimentConfig` into runs and summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import (ConvergenceCriterion, TimeModel, detect_convergence, overall_time,
                       resource_report)
from .config import ExperimentConfig
from .data import (LabeledDataset, load_mnist, get_case, partition, split_stratified,
                   synth_gaussian_classes, synth_quadratics)
from .engine import Schedule, TrainingTrace, run, steps_per_epoch
from .learner import LrSchedule, make_learner
from .topology import (SingleAssignment, Topology, TopologySpec, build_topology, fig3_topology,
                       relocate_overlap, to_single_assignment)

BASELINE, CANDIDATE = "hier_fedavg", "hhfl"


@dataclass
class Experiment:
    config: ExperimentConfig
    topology: Topology
    home: SingleAssignment
    assignment: object
    learner: object
    train: LabeledDataset | None
    test: LabeledDataset | None
    schedule: Schedule
    lr: LrSchedule
    init_params: np.ndarray
    criterion: ConvergenceCriterion
    time_model: TimeModel

    def structure(self, arch: str):
        return self.topology if arch == "hhfl" else self.home


def build_layout(cfg: ExperimentConfig) -> tuple[Topology, SingleAssignment]:
    """Multi-connectivity layout and the HFL association derived from it.

    ``overlap_proportion`` moves clients in or out of overlap regions while
    every client keeps its HFL ES; cases with relocated clients add that many
    overlap clients on top.
    """
    seed = cfg.seed
    raw = cfg["topology"]
    spec = fig3_topology() if raw == "fig3" else TopologySpec.from_dict(raw)
    topo = build_topology(spec)
    home = to_single_assignment(topo, seed)
    case = get_case(cfg["case"])
    current = sum(1 for s in spec.connectivity if len(s) > 1)
    target = current
    if cfg["overlap_proportion"] is not None:
        target = int(round(cfg["overlap_proportion"] * spec.num_clients))
    target = min(spec.num_clients, target + case.relocated_clients)
    if target != current:
        spec = relocate_overlap(spec, home.assigned_es, target, seed)
        topo = build_topology(spec)
        home = SingleAssignment(topo, home.assigned_es)
    return topo, home


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    seed = cfg.seed
    topo, home = build_layout(cfg)
    ds_cfg = cfg["dataset"]
    sched = Schedule(**{k: cfg["schedule"][k] for k in ("E", "G", "T")})
    train = test = None
    if ds_cfg["kind"] == "quadratic":
        problem, _ = synth_quadratics(topo, ds_cfg["dim"], ds_cfg.get("heterogeneity", 1.0), seed,
                                      noise=ds_cfg.get("noise", 0.5))
        learner = make_learner("quadratic", problem=problem)
        assignment = None
        spe = 1
    else:
        if ds_cfg["kind"] == "mnist":
            train = load_mnist(ds_cfg["train_images"], ds_cfg["train_labels"],
                               subset=ds_cfg.get("subset", 2000), rng_seed=seed)
            test = load_mnist(ds_cfg["test_images"], ds_cfg["test_labels"],
                              subset=ds_cfg.get("test_subset", 2000), rng_seed=seed)
        else:
            per_class = ds_cfg["train_per_class"] + ds_cfg["test_per_class"]
            full = synth_gaussian_classes(ds_cfg["num_classes"], ds_cfg["feature_dim"], per_class,
                                          ds_cfg["separation"], seed, noise_std=ds_cfg["noise_std"])
            train, test = split_stratified(full, ds_cfg["test_per_class"], seed)
        assignment = partition(train, topo, get_case(cfg["case"]), seed, home=home,
                               overlap_rule=cfg["overlap_rule"])
        learner = make_learner(cfg["learner"]["kind"], train.feature_dim, train.num_classes,
                               hidden=cfg["learner"].get("hidden", 64))
        spe = steps_per_epoch(assignment, cfg["batch_size"])
    lr_cfg = cfg["lr"]
    if lr_cfg["kind"] == "exp_decay":
        lr = LrSchedule.exp_decay(lr_cfg["init"], lr_cfg["factor"], spe)
    else:
        lr = LrSchedule.inverse(lr_cfg["beta"], lr_cfg["alpha"])
    init = learner.init_params(np.random.default_rng([int(seed), 0x1417]))
    crit = ConvergenceCriterion(**cfg["criterion"])
    tm = TimeModel(ratio_ces=cfg["time_model"]["ratio_ces"], ratio_ecs=cfg["time_model"]["ratio_ecs"])
    return Experiment(cfg, topo, home, assignment, learner, train, test, sched, lr, init, crit, tm)


def run_experiment(exp: Experiment, archs=None) -> dict[str, TrainingTrace]:
    """Run each architecture from the same initial model and seed."""
    cfg = exp.config
    echo = {"config_hash": cfg.config_hash, "case": cfg["case"]}
    out = {}
    for arch in archs or cfg["architectures"]:
        out[arch] = run(arch, exp.structure(arch), exp.assignment, exp.learner, exp.schedule, exp.lr,
                        cfg.seed, dataset=exp.train, eval_data=exp.test, batch_size=cfg["batch_size"],
                        init_params=exp.init_params, config=echo)
    return out


def summarize(exp: Experiment, traces: dict[str, TrainingTrace]) -> list[tuple[str, float]]:
    """(metric, value) rows; unconverged quantities are NaN."""
    rows: list[tuple[str, float]] = []
    rep = resource_report(exp.topology, next(iter(traces.values())))
    rows.append(("R_upper", rep.R_upper))
    steps = {}
    for arch, tr in traces.items():
        layout = exp.topology if arch == "hhfl" else exp.home.as_topology()
        step = None
        if not np.all(np.isnan(tr.accuracy)):
            step = detect_convergence(tr.accuracy_curve(), exp.criterion)
        steps[arch] = step
        rows.append((f"convergence_step.{arch}", math.nan if step is None else float(step)))
        rows.append((f"overall_time.{arch}",
                     math.nan if step is None else overall_time(max(step, 1), tr.schedule, exp.time_model)))
        rows.append((f"unicast_units.{arch}", math.nan if step is None else float(tr.units_until(step))))
        rows.append((f"multipoint_units.{arch}",
                     math.nan if step is None else float(tr.units_until(step, "multipoint"))))
        rows.append((f"links_per_round.{arch}", float(layout.num_links()) if arch != "fedavg"
                     else float(tr.events[0].links_used if tr.events else layout.num_clients)))
        rows.append((f"final_loss.{arch}", float(tr.loss[-1])))
        rows.append((f"final_accuracy.{arch}", float(tr.accuracy[-1])))
        rows.append((f"mean_drift.{arch}", float(np.mean(tr.drift))))
    if BASELINE in traces and CANDIDATE in traces:
        sa, sb = steps[BASELINE], steps[CANDIDATE]
        if sa and sb:
            gain = sa / sb
            ta = overall_time(sa, traces[BASELINE].schedule, exp.time_model)
            tb = overall_time(sb, traces[CANDIDATE].schedule, exp.time_model)
            gain_t = ta / tb
        else:
            gain = gain_t = math.nan
        rows.append(("efficiency_gain", gain))
        rows.append(("efficiency_gain_time", gain_t))
    return rows
