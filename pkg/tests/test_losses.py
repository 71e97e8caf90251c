import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rem3dr import autodiff as ad
from rem3dr.autodiff import grad_check
from rem3dr.losses import (
    LossWeights,
    MarginSchedule,
    margin_at,
    partition,
    regression_loss,
    stage1_loss,
    supcon_loss,
)
from rem3dr.model import forward, init

from conftest import tiny_arch, tiny_batch

W11 = LossWeights(w_smape=1.0, w_r2=1.0)


def unit_rows(x):
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# margin schedule


def test_margin_examples():
    s = MarginSchedule(m0=0.4, beta=0.0005, t_n=100)
    assert margin_at(0, s) == 0.4
    assert margin_at(s.t_n, s) == s.m0
    # 0.4 * e^-0.5
    assert margin_at(s.t_n + 1000, s) == pytest.approx(0.24261226388649, abs=1e-5)


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_margin_non_increasing(a, b):
    s = MarginSchedule()
    lo, hi = sorted((a, b))
    assert margin_at(hi, s) <= margin_at(lo, s)
    assert 0 < margin_at(hi, s) <= s.m0


def test_margin_continuous_at_warmup_end():
    s = MarginSchedule(m0=0.4, beta=0.0005, t_n=100)
    assert abs(margin_at(s.t_n - 1e-9, s) - margin_at(s.t_n, s)) < 1e-12


# partition


def test_partition_example():
    part = partition([0.0, 0.3, 0.5, 1.0], 0.4)
    assert part.positives[0] == {1}
    assert part.negatives[0] == {2, 3}


def test_partition_boundary_goes_negative():
    part = partition([0.0, 0.5], 0.5)
    assert part.positives[0] == set() and part.negatives[0] == {1}


def test_partition_all_equal():
    part = partition([2.0] * 4, 0.1)
    for i in range(4):
        assert part.positives[i] == set(range(4)) - {i}
        assert part.negatives[i] == set()


def test_partition_small_batch_is_empty():
    assert partition([1.0], 0.4).empty


@settings(max_examples=100)
@given(st.lists(st.floats(-20, 2), min_size=2, max_size=10), st.floats(0.01, 5), st.floats(0.01, 1))
def test_partition_trichotomy_and_monotone(labels, m, shrink):
    part = partition(labels, m)
    n = len(labels)
    for i in range(n):
        assert part.positives[i] | part.negatives[i] == set(range(n)) - {i}
        assert not part.positives[i] & part.negatives[i]
    smaller = partition(labels, m * shrink)
    for i in range(n):
        assert smaller.positives[i] <= part.positives[i]


# supcon


def test_supcon_two_identical():
    z = unit_rows([[1.0, 2.0], [1.0, 2.0]])
    loss = supcon_loss(ad.constant(z), partition([0.0, 0.0], 0.4), tau=0.5)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-15)


def test_supcon_three_hand_value():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    loss = supcon_loss(ad.constant(z), partition([0.0, 0.0, 1.0], 0.4), tau=1.0)
    # anchors 0 and 1: -log(e / (e + 1)); anchor 2 has no positive
    assert float(loss.data) == pytest.approx(-math.log(math.e / (math.e + 1.0)), abs=1e-12)
    assert float(loss.data) == pytest.approx(0.31326, abs=1e-5)


def test_supcon_no_positives_is_zero():
    z = unit_rows(np.eye(3))
    assert float(supcon_loss(ad.constant(z), partition([0.0, 1.0, 2.0], 0.4), 0.07).data) == 0.0


def test_supcon_rejects_unnormalized():
    with pytest.raises(ValueError, match="unit-norm"):
        supcon_loss(ad.constant(np.ones((2, 2))), partition([0.0, 0.0], 0.4), 0.07)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_supcon_non_negative(seed, n):
    rng = np.random.default_rng(seed)
    z = unit_rows(rng.normal(size=(n, 3)))
    loss = supcon_loss(ad.constant(z), partition(rng.uniform(0, 1, n), 0.3), 0.1)
    assert float(loss.data) >= -1e-12


# regression loss


def test_regression_perfect():
    t = np.array([0.1, 0.5, 0.9])
    assert float(regression_loss(ad.constant(t.copy()), t, W11).data) == pytest.approx(0.0, abs=1e-15)


def test_regression_mean_predictor_r2_term():
    t = np.array([0.1, 0.5, 0.9])
    pred = np.full(3, t.mean())
    smape_only = regression_loss(ad.constant(pred), t, LossWeights(w_smape=1.0, w_r2=0.0))
    full = regression_loss(ad.constant(pred), t, LossWeights(w_smape=1.0, w_r2=1.0))
    assert float(full.data) - float(smape_only.data) == pytest.approx(1.0, abs=1e-12)


def test_regression_single_sample():
    loss = regression_loss(ad.constant(np.array([0.2])), np.array([0.4]), W11)
    # |0.2 - 0.4| / ((0.2 + 0.4) / 2); R^2 dropped for a single sample
    assert float(loss.data) == pytest.approx(0.2 / 0.3, abs=1e-9)


# stage-1 loss


def _stage1_value(lam, seed=0, t=0):
    net = init(tiny_arch(seed))
    b = tiny_batch(seed)
    out = forward(net, b.features, modalities=[0])
    w = LossWeights(lambda_supcon=lam)
    return out, b, w, stage1_loss(out, 0, b.y, b.y_norm, t, MarginSchedule(m0=5.0), w)


def test_stage1_lambda_zero_is_regression():
    out, b, w, loss = _stage1_value(0.0)
    assert float(loss.data) == float(regression_loss(out.pred_uni[0], b.y_norm, w).data)


def test_stage1_perfect_is_zero():
    # perfect predictions; a pair of identical embeddings that are positives
    emb = unit_rows(np.ones((2, 2)))
    t = np.array([0.2, 0.4])

    class Out:
        pred_uni = [ad.constant(t.copy())]
        z = [ad.constant(emb)]

    loss = stage1_loss(Out, 0, np.zeros(2), t, 0, MarginSchedule(), LossWeights(lambda_supcon=1.0))
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_stage1_golden():
    _, _, _, loss = _stage1_value(0.1, seed=0)
    assert float(loss.data) == pytest.approx(STAGE1_GOLDEN, rel=1e-12)


def test_stage1_grad_check_random_batches():
    sched, w = MarginSchedule(m0=5.0), LossWeights(lambda_supcon=0.5)
    for seed in range(10):
        net = init(tiny_arch(seed))
        b = tiny_batch(seed, n=3)
        names = [n for n, o in net.registry.items() if o in ("encoder0", "proj0", "uni0")]

        def f(tape, p, net=net, b=b):
            out = forward(net, b.features, tape=tape, params={**net.params, **p}, modalities=[0])
            return stage1_loss(out, 0, b.y, b.y_norm, 0, sched, w)

        rep = grad_check(f, {n: net.params[n] for n in names})
        assert rep.passed(1e-5, 1e-7), (seed, rep.max_rel_err)


# frozen from the implementation at seed 0
STAGE1_GOLDEN = 110.53223137904833
