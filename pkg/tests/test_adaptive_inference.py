import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpqhd.adaptive_inference import (AdaptiveConfig, measure_ops_reduction, predict_adaptive,
                                      predict_adaptive_batch)
from dpqhd.compression import quantize_mse
from dpqhd.errors import ConfigError, DegenerateInputError
from dpqhd.hdc_core import (FullEncoder, HdcModel, predict_batch, predict_full,
                            train_centroid)
from dpqhd.tensor_core import gen_gaussian_matrix

ELIM_ONLY = AdaptiveConfig(math.inf, True, True)


def schedule_macs(C, D, complete=True):
    """MACs of a query that never exits early, counted from the schedule alone."""
    L = math.ceil(D / C)
    active, d, macs, rounds = C, 0, 0, 0
    while active > 2 and d < D:
        step = min(L, D - d)
        macs += active * step
        d += step
        rounds += 1
        active -= min(2, active - 2) if active > C / 2 else 1
    if complete or rounds == 0:
        macs += active * (D - d)
    return macs


def _model(rng, C, D):
    return HdcModel(rng.standard_normal((C, D)))


def test_config_validation():
    with pytest.raises(ConfigError):
        AdaptiveConfig(-0.1)
    with pytest.raises(ConfigError):
        AdaptiveConfig(float("nan"))
    d = AdaptiveConfig.disabled()
    assert not d.elimination_enabled and not d.early_exit_enabled and d.tau == math.inf


def test_two_classes_full_cost(rng, backend):
    m = _model(rng, 2, 301)
    for h in rng.standard_normal((20, 301)):
        cls, macs, exited = predict_adaptive(m, h, AdaptiveConfig(0.0))
        assert cls == predict_full(m, h)[0]
        assert macs == 2 * 301 and not exited


def test_first_round_cost_mnist_shape(rng):
    m = _model(rng, 10, 3000)
    assert m.chunk == 300
    trace = []
    predict_adaptive(m, rng.standard_normal(3000), ELIM_ONLY, trace=trace)
    assert trace[0]["dims"] == 300
    # ten classes were scored in round one; eight survive it
    assert len(trace[0]["active"]) == 8


def test_disabled_matches_full(rng, backend):
    m = _model(rng, 7, 500)
    H = rng.standard_normal((200, 500))
    res = predict_adaptive_batch(m, H, AdaptiveConfig.disabled())
    full, _ = predict_batch(m, H)
    assert np.array_equal(res.classes, full)
    assert np.all(res.macs == 7 * 500) and not res.exited_early.any()


@given(st.integers(2, 32), st.integers(0, 2**32), st.integers(0, 4096))
def test_disabled_equivalence_property(C, seed, extra):
    rng = np.random.default_rng(seed)
    D = C + extra % 600
    m = HdcModel(rng.standard_normal((C, D)))
    H = rng.standard_normal((5, D))
    res = predict_adaptive_batch(m, H, AdaptiveConfig.disabled())
    assert np.array_equal(res.classes, predict_batch(m, H)[0])


@pytest.mark.parametrize("C,D", [(3, 10), (4, 100), (10, 3000), (26, 617), (5, 7), (9, 9)])
def test_elimination_only_cost_matches_schedule(C, D, rng, backend):
    m = _model(rng, C, D)
    res = predict_adaptive_batch(m, rng.standard_normal((30, D)), ELIM_ONLY)
    assert np.all(res.macs == schedule_macs(C, D))
    assert np.all(res.macs < C * D)
    assert not res.exited_early.any()


@pytest.mark.parametrize("C,D", [(4, 100), (10, 3000), (26, 617)])
def test_no_completion_cost(C, D, rng, backend):
    cfg = AdaptiveConfig(math.inf, True, True, complete_survivors=False)
    res = predict_adaptive_batch(_model(rng, C, D), rng.standard_normal((10, D)), cfg)
    assert np.all(res.macs == schedule_macs(C, D, complete=False))


def test_elimination_schedule_and_partial_cosines(rng):
    C, D = 12, 240
    W = rng.standard_normal((C, D))
    m = HdcModel(W)
    h = rng.standard_normal(D)
    trace = []
    predict_adaptive(m, h, ELIM_ONLY, trace=trace)
    sizes = [C] + [len(t["active"]) for t in trace]
    for before, after in zip(sizes, sizes[1:]):
        assert before - after == (min(2, before - 2) if before > C / 2 else 1)
    hn = np.linalg.norm(h)
    for t in trace:
        d = t["dims"]
        for i, c in t["cosines"].items():
            brute = np.dot(W[i, :d], h[:d]) / (np.linalg.norm(W[i]) * hn)
            assert c == pytest.approx(brute, abs=1e-12)


def test_eliminated_are_lowest(rng):
    C, D = 8, 80
    W = rng.standard_normal((C, D))
    h = rng.standard_normal(D)
    trace = []
    predict_adaptive(HdcModel(W), h, ELIM_ONLY, trace=trace)
    d = trace[0]["dims"]
    partial = W[:, :d] @ h[:d] / np.linalg.norm(W, axis=1)
    dropped = sorted(set(range(C)) - set(trace[0]["active"]))
    assert dropped == sorted(np.argsort(partial)[:2].tolist())


def test_elimination_tie_drops_higher_index():
    # every class identical: all partial cosines tie, so the highest indices go
    W = np.ones((6, 12))
    trace = []
    cls, _, _ = predict_adaptive(HdcModel(W), np.ones(12), ELIM_ONLY, trace=trace)
    assert trace[0]["active"] == [0, 1, 2, 3]
    assert cls == 0


def test_early_exit_with_zero_threshold(rng, backend):
    C, D = 10, 1000
    m = _model(rng, C, D)
    h = rng.standard_normal(D)
    trace = []
    cls, macs, exited = predict_adaptive(m, h, AdaptiveConfig(0.0), trace=trace)
    assert exited
    # two removals while more than C/2 remain; the exit check follows the first
    # single removal: 10 -> 8 -> 6 -> 4 -> 3
    assert [len(t["active"]) for t in trace] == [8, 6, 4, 3]
    assert macs == 100 * (10 + 8 + 6 + 4)
    last = trace[-1]
    assert cls == max(last["cosines"], key=lambda i: (last["cosines"][i], -i))
    res = predict_adaptive_batch(m, h[None, :], AdaptiveConfig(0.0))
    assert (int(res.classes[0]), int(res.macs[0]), bool(res.exited_early[0])) == \
        (cls, macs, exited)


def test_early_exit_odd_class_count(rng):
    # C=7: 7 -> 5 -> 3 by pairs (both above 3.5), then 3 -> 2 and exit
    trace = []
    _, macs, exited = predict_adaptive(_model(rng, 7, 70), rng.standard_normal(70),
                                       AdaptiveConfig(0.0), trace=trace)
    assert exited and [len(t["active"]) for t in trace] == [5, 3, 2]
    assert macs == 10 * (7 + 5 + 3)


def test_high_threshold_never_exits(rng):
    m = _model(rng, 10, 500)
    res = predict_adaptive_batch(m, rng.standard_normal((50, 500)), AdaptiveConfig(2.5))
    assert not res.exited_early.any()


@given(st.integers(3, 20), st.integers(0, 2**32), st.floats(0, 0.5))
def test_macs_bounds_property(C, seed, tau):
    rng = np.random.default_rng(seed)
    D = C * int(rng.integers(1, 40))
    m = HdcModel(rng.standard_normal((C, D)))
    res = predict_adaptive_batch(m, rng.standard_normal((4, D)), AdaptiveConfig(tau))
    assert np.all(res.macs <= C * D)
    assert np.all(res.macs < C * D)  # something is always eliminated when C > 2
    dis = predict_adaptive_batch(m, rng.standard_normal((4, D)), AdaptiveConfig.disabled())
    assert np.all(dis.macs == C * D)


def test_quantized_model_integer_path(rng, backend):
    W = rng.standard_normal((6, 120))
    m = HdcModel(quantize_mse(W, 4), 8)
    H = rng.standard_normal((40, 120))
    res = predict_adaptive_batch(m, H, AdaptiveConfig.disabled())
    assert np.array_equal(res.classes, predict_batch(m, H)[0])
    h = H[0]
    trace = []
    predict_adaptive(m, h, ELIM_ONLY, trace=trace)
    qh = quantize_mse(h, 8).dequantize()[0]
    Wd = m.dense()
    d = trace[0]["dims"]
    for i, c in trace[0]["cosines"].items():
        brute = np.dot(Wd[i, :d], qh[:d]) / (np.linalg.norm(Wd[i]) * np.linalg.norm(qh))
        assert c == pytest.approx(brute, abs=1e-12)


def test_zero_query_rejected(rng):
    with pytest.raises(DegenerateInputError):
        predict_adaptive(_model(rng, 3, 9), np.zeros(9), ELIM_ONLY)


def test_measure_ops_reduction(blobs):
    tr, te = blobs
    enc = FullEncoder(gen_gaussian_matrix(16, 300, 2))
    m = train_centroid(enc, tr)
    off = measure_ops_reduction(enc, m, te, AdaptiveConfig.disabled())
    assert off.reduction_percent == 0.0
    assert off.accuracy_adaptive == off.accuracy_full
    on = measure_ops_reduction(enc, m, te, ELIM_ONLY)
    assert on.reduction_percent == pytest.approx(100 * (1 - schedule_macs(3, 300) / 900))
    assert on.reduction_percent > 0
    assert on.early_exit_rate == 0.0
    assert on.macs_p50 <= on.macs_p90
