import numpy as np
import pytest

from hhfl.data import synth_gaussian_classes, synth_quadratics
from hhfl.errors import NumericFailure
from hhfl.learner import (Batch, LogisticLearner, LrSchedule, MLPLearner, ProblemConstants, QuadBatch,
                          QuadraticLearner, estimate_constants, grad_check, make_learner, sgd_step)
from hhfl.topology import TopologySpec, build_topology
from hhfl.verify import GRADCHECK_TOL


def _unit_quadratic():
    topo = build_topology(TopologySpec(1, 1, ((0,),)))
    prob, _ = synth_quadratics(topo, 1, 0.0, 0, optima=[[0.0]], hessians=[[[1.0]]], offsets=[0.0],
                               noise=0.0)
    return QuadraticLearner(prob)


def _batch(rng, n=12, feats=5, classes=3):
    return Batch(rng.normal(size=(n, feats)), rng.integers(0, classes, size=n))


def test_sgd_step_hand_computed():
    lrn = _unit_quadratic()
    w = np.array([1.0])
    out = sgd_step(lrn, w, QuadBatch(0), 0.5)
    assert out.tolist() == [0.5]
    assert w.tolist() == [1.0]


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
def test_vanishing_step(rng, kind):
    lrn = make_learner(kind, 5, 3, hidden=6)
    w = lrn.init_params(rng)
    b = _batch(rng)
    g = lrn.gradient(w, b)
    assert np.linalg.norm(sgd_step(lrn, w, b, 1e-12) - w) <= 1e-10 * np.linalg.norm(g)


def test_logistic_small_step_descends(rng):
    lrn = LogisticLearner(5, 3)
    for _ in range(20):
        w = lrn.init_params(rng)
        b = _batch(rng)
        assert lrn.loss(sgd_step(lrn, w, b, 1e-3), b) < lrn.loss(w, b)


def test_sgd_rejects_bad_lr_and_nan(rng):
    lrn = LogisticLearner(5, 3)
    w = lrn.init_params(rng)
    with pytest.raises(ValueError):
        sgd_step(lrn, w, _batch(rng), 0.0)
    bad = Batch(np.full((2, 5), np.nan), np.array([0, 1]))
    with pytest.raises(NumericFailure) as info:
        sgd_step(lrn, w, bad, 0.1, step=7, client=3)
    assert (info.value.step, info.value.client) == (7, 3)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_grad_check_tolerances(rng, kind):
    if kind == "quadratic":
        topo = build_topology(TopologySpec(3, 1, ((0,),) * 3))
        prob, _ = synth_quadratics(topo, 4, 1.0, 2, noise=0.0)
        lrn = QuadraticLearner(prob)
        batches = [QuadBatch(i % 3) for i in range(20)]
    else:
        lrn = make_learner(kind, 5, 3, hidden=7)
        batches = [_batch(rng) for _ in range(20)]
    for b in batches:
        w = lrn.init_params(rng) + rng.normal(scale=0.5, size=lrn.dim)
        assert grad_check(lrn, w, b) <= GRADCHECK_TOL[kind]


def test_batched_step_matches_per_client(rng):
    lrn = LogisticLearner(5, 3)
    X = rng.normal(size=(40, 5))
    y = rng.integers(0, 3, size=40)
    params = np.stack([lrn.init_params(rng) for _ in range(4)])
    idx = rng.permutation(40)[:20].astype(np.int64)
    offsets = np.array([0, 5, 10, 15, 20], dtype=np.int64)
    out = lrn.batched_step(params, None, 0.1, source=(X, y, idx, offsets))
    for k in range(4):
        rows = idx[offsets[k]:offsets[k + 1]]
        ref = sgd_step(lrn, params[k], Batch(X[rows], y[rows]), 0.1)
        np.testing.assert_allclose(out[k], ref, rtol=0, atol=1e-14)


def test_lr_schedules():
    s = LrSchedule.exp_decay(0.1, 0.992, steps_per_epoch=3)
    assert [s.value(t) for t in (0, 2, 3)] == [0.1, 0.1, 0.1 * 0.992]
    inv = LrSchedule.inverse(4.0, 32.0)
    assert inv.value(0) == 0.125
    vals = [inv.value(t) for t in range(100)]
    assert all(a >= b > 0 for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        LrSchedule.exp_decay(0.1, 1.5)
    with pytest.raises(ValueError):
        LrSchedule("cosine")


def test_problem_constants_validation():
    with pytest.raises(ValueError):
        ProblemConstants(L=1.0, mu=2.0, sigma_sq=[0.0], H_sq=1.0)
    with pytest.raises(ValueError):
        ProblemConstants(L=1.0, mu=0.5, sigma_sq=[-1.0], H_sq=1.0)


def test_estimate_constants_quadratic_identity():
    topo = build_topology(TopologySpec(2, 1, ((0,), (0,))))
    prob, _ = synth_quadratics(topo, 3, 1.0, 0, hessians=np.tile(np.eye(3), (2, 1, 1)))
    c = estimate_constants(QuadraticLearner(prob), None, 1, 0)
    assert c.L == c.mu == 1.0 and c.exact


def test_estimate_constants_quadratic_spread():
    topo = build_topology(TopologySpec(2, 1, ((0,), (0,))))
    prob, _ = synth_quadratics(topo, 3, 1.0, 0, mu=0.1, L=2.0)
    c = estimate_constants(QuadraticLearner(prob), None, 1, 0)
    assert (c.L, c.mu) == (2.0, 0.1)


def test_estimate_constants_logistic(fig3):
    from hhfl.data import get_case, partition

    ds = synth_gaussian_classes(10, 6, 60, 4.0, 0)
    asg = partition(ds, fig3, get_case("IID_IID"), 0)
    c = estimate_constants(LogisticLearner(6, 10), asg, 1, 0, dataset=ds)
    assert c.mu is None and not c.exact
    assert c.L > 0 and c.H_sq > 0 and np.all(c.sigma_sq >= 0)


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
def test_full_batch_descent_monotone(rng, kind):
    ds = synth_gaussian_classes(3, 5, 40, 3.0, 1)
    lrn = make_learner(kind, 5, 3, hidden=8)
    full = Batch(ds.X, ds.y)
    w = lrn.init_params(rng)
    from hhfl.learner import _power_iteration

    L = _power_iteration(lambda u: lrn.gradient(u, full), w, rng)
    lr = 0.5 / max(L, 1e-6)
    losses = [lrn.loss(w, full)]
    for _ in range(50):
        w = sgd_step(lrn, w, full, lr)
        losses.append(lrn.loss(w, full))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_metrics_accuracy_range(rng):
    ds = synth_gaussian_classes(3, 5, 40, 3.0, 1)
    for lrn in (LogisticLearner(5, 3), MLPLearner(5, 3, 8)):
        loss, acc = lrn.metrics(lrn.init_params(rng), ds)
        assert loss > 0 and 0 <= acc <= 1
