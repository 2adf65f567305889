# Unit tests for metrics including:
# - Top-k ranking and tie handling
# - Spectral-efficiency drop, blockage F1 and pose RMSE
# - Oracle and network reports on a split

import numpy as np
import pytest

from beamfuse.core.errors import DataError, UsageError
from beamfuse.core.metrics import (
    TABLE_COLUMNS, MetricReport, OraclePredictor, blockage_f1, evaluate, mean_se_drop, oracle_report,
    pose_rmse, report, topk_accuracy,
)
from beamfuse.core.model import Normalizer, build_model, make_split_data


def test_topk_counts_rank():
    logits = np.array([[0.1, 0.9, 0.5, 0.3], [0.4, 0.3, 0.2, 0.1]])
    assert topk_accuracy(logits, np.array([2, 3]), 1) == 0.0
    assert topk_accuracy(logits, np.array([2, 3]), 2) == 0.5
    assert topk_accuracy(logits, np.array([1, 0]), 1) == 1.0
    assert topk_accuracy(logits, np.array([3, 3]), 4) == 1.0


def test_topk_ties_favour_lower_index():
    logits = np.zeros((1, 64))
    assert topk_accuracy(logits, np.array([0]), 1) == 1.0
    assert topk_accuracy(logits, np.array([1]), 1) == 0.0
    assert topk_accuracy(logits, np.array([2]), 3) == 1.0
    assert topk_accuracy(logits, np.array([3]), 3) == 0.0


def test_topk_rejects_bad_k():
    with pytest.raises(UsageError):
        topk_accuracy(np.zeros((2, 64)), np.array([0, 1]), 0)
    with pytest.raises(UsageError):
        topk_accuracy(np.zeros((2, 64)), np.array([0, 1]), 65)
    with pytest.raises(DataError):
        topk_accuracy(np.zeros((2, 64)), np.array([0]), 1)


def test_random_predictor_scores_chance():
    rng = np.random.default_rng(5)
    n = 200000
    top1 = topk_accuracy(rng.standard_normal((n, 64)), rng.integers(0, 64, n), 1)
    assert abs(top1 - 1 / 64) < 3 * np.sqrt((1 / 64) * (63 / 64) / n)


def test_se_drop_of_optimal_choice_is_zero():
    power = np.array([[-60.0, -50.0, -70.0], [-55.0, -65.0, -80.0]])
    assert mean_se_drop(power, np.array([1, 0])) == 0.0
    assert mean_se_drop(power, np.array([0, 0])) > 0.0


def test_blockage_f1_counts():
    truth = np.array([1, 1, 0, 0, 1, 0])
    pred = np.array([1, 0, 1, 0, 1, 0])
    scores = blockage_f1(pred, truth)
    assert scores.precision == pytest.approx(2 / 3)
    assert scores.recall == pytest.approx(2 / 3)
    assert scores.f1 == pytest.approx(2 / 3)
    assert scores.accuracy == pytest.approx(4 / 6)
    assert not scores.undefined


def test_blockage_f1_without_positives_is_flagged():
    scores = blockage_f1(np.zeros(4), np.zeros(4))
    assert scores.f1 == 0.0
    assert scores.undefined
    assert scores.accuracy == 1.0


def test_pose_rmse_of_constant_offset():
    truth = np.random.default_rng(2).normal(0.0, 30.0, size=(50, 2))
    assert pose_rmse(truth + np.array([3.0, 4.0]), truth) == pytest.approx(5.0)
    assert pose_rmse(truth, truth) == 0.0
    with pytest.raises(DataError):
        pose_rmse(np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        pose_rmse(np.zeros((0, 2)), np.zeros((0, 2)))


def test_evaluate_rejects_misaligned_inputs():
    pred = OraclePredictor().predict(np.array([0, 1]), np.array([0, 1]), np.zeros((2, 2)))
    with pytest.raises(DataError):
        evaluate(pred, np.array([0, 1, 2]), np.array([0, 1]), np.zeros((2, 64)), np.zeros((2, 2)))


def test_oracle_is_perfect_on_the_test_split(tiny):
    dataset = tiny.dataset
    idx = dataset.indices_for(tiny.split.test)
    normalizer = Normalizer.fit(dataset.gnss, dataset.prev_power, dataset.truth)
    data = make_split_data(dataset, tiny.labels, idx, normalizer)
    result = oracle_report(data)
    assert result.top1 == 1.0 and result.top3 == 1.0
    assert result.se_drop == 0.0
    assert result.rmse == 0.0
    assert result.accuracy_blk == 1.0
    assert result.count == len(idx)


def test_network_report_matches_direct_evaluation(tiny):
    dataset = tiny.dataset
    idx = dataset.indices_for(tiny.split.val)
    normalizer = Normalizer.fit(dataset.gnss, dataset.prev_power, dataset.truth)
    data = make_split_data(dataset, tiny.labels, idx, normalizer)
    net = build_model("radar", 16, seed=2)
    batched, predictions = report(net, data, normalizer, batch_size=5)
    whole, _ = report(net, data, normalizer, batch_size=len(data))
    assert batched.top1 == whole.top1
    assert batched.rmse == pytest.approx(whole.rmse, rel=1e-6)
    assert len(predictions.b_hat) == len(data)
    # zero heads: every logit ties, so beam 0 is chosen and pose is the mean
    np.testing.assert_array_equal(predictions.b_hat, 0)
    np.testing.assert_allclose(predictions.pose, np.tile(normalizer.pose_mean, (len(data), 1)), atol=1e-9)


def test_table_row_uses_percentages():
    metrics = MetricReport(0.5, 0.75, 0.1234567, 0.9, 0.5, 0.5, 0.5, False, 1.23456, 10)
    row = metrics.table_row("GPS")
    assert tuple(row) == TABLE_COLUMNS
    assert row["Top1[%]"] == 50.0 and row["Top3[%]"] == 75.0
    assert row["mean dSE"] == 0.1235 and row["RMSE[m]"] == 1.235
