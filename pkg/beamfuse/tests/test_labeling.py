# Unit tests for labeling including:
# - Oracle beam selection and tie-breaking
# - Percentile threshold and blockage labels
# - SNR, spectral efficiency and its drop
# - labels.json persistence and hash checks

import copy
import math

import numpy as np
import pytest

from beamfuse.core.errors import ConfigError, ConsistencyError, DataError, UsageError
from beamfuse.core.labeling import (
    LabelConfig, blockage_label, build_labels, max_power, oracle_beam, percentile_threshold, read_labels,
    se, se_drop, snr_linear,
)


def test_oracle_beam_matches_linear_scan():
    rng = np.random.default_rng(0)
    power = rng.normal(-60.0, 10.0, size=(10000, 64)).round(1)
    expected = []
    for row in power:
        best = 0
        for k in range(1, 64):
            if row[k] > row[best]:
                best = k
        expected.append(best)
    np.testing.assert_array_equal(oracle_beam(power), expected)


def test_oracle_beam_breaks_ties_low():
    r = np.full(64, -70.0)
    r[[9, 40]] = -50.0
    assert oracle_beam(r) == 9
    assert max_power(r) == -50.0


def test_oracle_beam_rejects_nan():
    r = np.zeros(64)
    r[3] = np.nan
    with pytest.raises(DataError):
        oracle_beam(r)


def test_percentile_threshold_interpolates():
    assert percentile_threshold([1.0, 2.0, 3.0, 4.0, 5.0], 20) == pytest.approx(1.8)
    assert percentile_threshold([7.0], 20) == 7.0
    with pytest.raises(DataError):
        percentile_threshold([], 20)


def test_blockage_boundary_is_unblocked():
    assert blockage_label(-60.0, -60.0) == 0
    assert blockage_label(-60.1, -60.0) == 1
    np.testing.assert_array_equal(blockage_label(np.array([-70.0, -50.0]), -60.0), [1, 0])


def test_label_config_rejects_out_of_range_percentile():
    with pytest.raises(ConfigError):
        LabelConfig(percentile=0.0)


def test_spectral_efficiency_values():
    assert se(10.0 * math.log10(3.0) - 90.0) == pytest.approx(2.0)
    assert snr_linear(-90.0) == pytest.approx(1.0)
    assert se(3e-9, in_db=False) == pytest.approx(2.0)


def test_se_drop_properties():
    rng = np.random.default_rng(3)
    power = rng.normal(-70.0, 8.0, size=(200, 64))
    best = oracle_beam(power)
    assert np.all(se_drop(power, best) == 0.0)
    for b in (0, 13, 63):
        assert np.all(se_drop(power, np.full(200, b)) >= 0.0)
    assert se_drop(power[0], int(best[0])) == 0.0
    with pytest.raises(UsageError):
        se_drop(power[0], 64)


def test_threshold_hits_the_requested_fraction():
    rng = np.random.default_rng(11)
    power = rng.normal(-65.0, 6.0, size=(5000, 64))
    train = np.arange(4000)
    labels = build_labels(power, train, LabelConfig(percentile=20.0))
    assert abs(labels.blocked_fraction(train) - 0.20) <= 0.01
    assert labels.tau_db == pytest.approx(np.percentile(power[train].max(axis=1), 20))
    np.testing.assert_array_equal(labels.b_star, power.argmax(axis=1))


def test_threshold_ignores_non_training_rows():
    power = np.full((6, 64), -80.0)
    power[:3, 0] = [-50.0, -55.0, -60.0]
    power[3:, 0] = -200.0
    labels = build_labels(power, np.arange(3), LabelConfig(percentile=50.0))
    assert labels.tau_db == -55.0
    np.testing.assert_array_equal(labels.y_blk, [0, 0, 1, 1, 1, 1])


def test_empty_training_split_is_rejected():
    with pytest.raises(DataError):
        build_labels(np.zeros((3, 64)), np.array([], dtype=int), LabelConfig())


def test_written_labels_read_back(tiny):
    labels = read_labels(tiny.root, tiny.dataset)
    np.testing.assert_array_equal(labels.b_star, tiny.labels.b_star)
    np.testing.assert_array_equal(labels.y_blk, tiny.labels.y_blk)
    assert labels.tau_db == tiny.labels.tau_db
    assert labels.splits == tiny.split.as_dict()
    assert labels.config_hash == tiny.dataset.config_hash


def test_labels_follow_the_stored_power(tiny):
    dataset = tiny.dataset
    np.testing.assert_array_equal(tiny.labels.b_star, np.argmax(dataset.power, axis=1))
    p_max = dataset.power.astype(np.float64).max(axis=1)
    np.testing.assert_array_equal(tiny.labels.y_blk, (p_max < tiny.labels.tau_db).astype(np.uint8))


def test_labels_for_another_dataset_are_refused(tiny):
    other = copy.copy(tiny.dataset)
    other.manifest = dict(tiny.dataset.manifest, config_hash="0" * 16)
    with pytest.raises(ConsistencyError):
        read_labels(tiny.root, other)
