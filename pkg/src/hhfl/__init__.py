"""Hierarchical federated learning with multi-edge-server connectivity.

Simulates FedAvg, Hier-FedAvg and HHFL step by step, and evaluates the
drift and convergence bounds, time and resource models, and efficiency
gains on the resulting traces.
"""
__version__ = "0.1.0"

from .analysis import (BoundConfig, ConvergenceCriterion, TimeModel, corollary2_X, detect_convergence,
                       drift_bound, efficiency_gain, efficiency_gain_time, overall_time, resource_report,
                       theorem1_bound)
from .data import (CASES, Assignment, CaseId, DistributionCase, LabeledDataset, get_case, load_mnist,
                   partition, read_idx, split_stratified, synth_gaussian_classes, synth_quadratics,
                   write_idx)
from .engine import (ARCHITECTURES, Schedule, TrainingTrace, client_aggregate, cloud_aggregate,
                     edge_aggregate, run, virtual_global)
from .errors import (HHFLError, IncompleteConstants, InfeasiblePartition, InsufficientData,
                     InvalidBoundConfig, InvalidConfig, InvalidSpec, NoConvergence, NumericFailure)
from .kernels import BACKEND
from .learner import (LogisticLearner, LrSchedule, MLPLearner, ProblemConstants, QuadraticLearner,
                      estimate_constants, grad_check, make_learner, sgd_step)
from .topology import (SingleAssignment, Topology, TopologySpec, build_topology, fig3_topology,
                       relocate_overlap, to_single_assignment)
