"""Confusion counting, derived scores, reference predictors, tables."""

import json

import numpy as np
import pytest

from defog.errors import DataError
from defog.metrics import (EvalReport, accumulated_predictor, confusion_counts,
                           evaluate, existence_binarize, partial_predictor,
                           report_json, report_table)
from defog.schema import ChannelSchema

import oracles


@pytest.fixture
def tiny():
    return ChannelSchema(("f_a", "f_b"), ("e_a",), ("e_h",))


def test_binarize_threshold_semantics():
    t = np.array([0.0, 0.49, 0.5, 0.51, 2.0])
    np.testing.assert_array_equal(existence_binarize(t),
                                  [False, False, True, True, True])
    assert not existence_binarize(np.zeros((3, 3))).any()
    y = np.array([0.0, 1.0, 3.0])
    np.testing.assert_array_equal(existence_binarize(y), y != 0)


def test_binarize_rejects_non_positive_threshold():
    with pytest.raises(ValueError, match="threshold"):
        existence_binarize(np.zeros(2), 0.0)


def test_perfect_prediction_report():
    y = np.random.default_rng(0).integers(0, 3, (4, 2, 8, 8)).astype(np.float32)
    rep = evaluate(y, y)
    assert rep.mse == 0.0
    assert rep.accuracy == 1.0
    assert rep.f1 == 1.0
    assert rep.fp == rep.fn == 0


def test_all_zero_prediction_report():
    y = np.zeros((1, 1, 8, 8), dtype=np.float32)
    y[0, 0, :3, 0] = 1.0  # k = 3 existing cells of 64
    rep = evaluate(np.zeros_like(y), y)
    assert rep.accuracy == pytest.approx(1 - 3 / 64)
    assert rep.recall == 0.0
    assert rep.precision == 0.0 and not rep.precision_defined
    assert rep.f1 == 0.0


def test_hand_case_two_by_two():
    truth = np.array([[[[1.0, 0.0], [0.0, 2.0]]]])
    pred = np.array([[[[1.0, 0.0], [1.0, 0.0]]]])
    rep = evaluate(pred, truth)
    assert (rep.tp, rep.fp, rep.fn, rep.tn) == (1, 1, 1, 1)
    assert rep.precision == 0.5
    assert rep.recall == 0.5
    assert rep.f1 == 0.5
    assert rep.mse == pytest.approx(1.25)


def test_confusion_matches_enumeration_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        pred = rng.random(shape) * 2
        truth = rng.integers(0, 2, shape).astype(float)
        assert confusion_counts(pred, truth) == oracles.confusion_naive(pred, truth)


def test_confusion_total_invariant():
    rng = np.random.default_rng(2)
    pred = rng.random((5, 3, 8, 8))
    truth = rng.integers(0, 2, (5, 3, 8, 8)).astype(float)
    rep = evaluate(pred, truth)
    assert rep.total == 5 * 3 * 8 * 8
    assert rep.accuracy == pytest.approx((rep.tp + rep.tn) / rep.total)
    if rep.precision + rep.recall > 0:
        assert rep.f1 == pytest.approx(2 * rep.precision * rep.recall
                                       / (rep.precision + rep.recall))


def test_evaluate_mse_matches_numpy():
    rng = np.random.default_rng(3)
    pred = rng.random((4, 2, 4, 4))
    truth = rng.random((4, 2, 4, 4))
    rep = evaluate(pred, truth)
    assert rep.mse == pytest.approx(float(np.mean((pred - truth) ** 2)), rel=1e-12)


def test_evaluate_rejects_misaligned_streams():
    with pytest.raises(DataError, match="misaligned"):
        evaluate(np.zeros((2, 1, 4, 4)), np.zeros((3, 1, 4, 4)))


def test_partial_predictor_pads_buildings_with_zeros(tiny):
    xbar = np.random.default_rng(4).random((5, 3, 8, 8)).astype(np.float32)
    pred = partial_predictor(xbar, tiny)
    assert pred.shape == (5, 4, 8, 8)
    np.testing.assert_array_equal(pred[:, :3], xbar)
    assert pred[:, 3:].sum() == 0.0


def test_accumulated_predictor_is_last_known_state(tiny):
    rng = np.random.default_rng(5)
    xbar = rng.random((5, 3, 8, 8)).astype(np.float32)
    xtilde = rng.random((5, 2, 8, 8)).astype(np.float32)
    pred = accumulated_predictor(xbar, xtilde, tiny)
    assert pred.shape == (5, 4, 8, 8)
    np.testing.assert_array_equal(pred[:, :2], xbar[:, :2])
    np.testing.assert_array_equal(pred[:, 2:], xtilde)


def test_report_table_format():
    rep = EvalReport.from_confusion(0.00208, 90, 10, 12, 67472, frames=1)
    table = report_table([("model_a", rep), ("model_b", rep)])
    lines = table.splitlines()
    assert lines[0].split() == ["model", "MSE", "Acc", "F1", "Recall", "Precision"]
    assert lines[1].startswith("model_a")
    assert lines[2].startswith("model_b")
    assert "0.00208" in lines[1]  # five decimals on MSE
    cols = lines[1].split()
    assert len(cols[2].split(".")[1]) == 5  # Acc decimals
    assert len(cols[3].split(".")[1]) == 3  # F1 decimals


def test_report_json_round_trip():
    rep = EvalReport.from_confusion(1.25, 1, 1, 1, 1, frames=1)
    blob = json.loads(report_json([("demo", rep)]))
    assert blob["demo"]["tp"] == 1
    assert blob["demo"]["mse"] == pytest.approx(1.25)
    assert blob["demo"]["precision_defined"] is True
