# Unit tests for dataset I/O including:
# - Record layout, manifest content and per-file digests
# - Loading back into model-shaped arrays
# - Integrity failures (digest mismatch, missing files)
# - LiDAR clean-up and re-sampling

import os
import shutil

import numpy as np
import pytest

from beamfuse.core import config as C
from beamfuse.core.dataset_io import (
    encode_sequence, file_digest, load_dataset, read_json, record_size, resample_points,
    sequence_file_name, write_dataset,
)
from beamfuse.core.errors import ConsistencyError, DataError, DatasetIOError
from beamfuse.core.simulator import generate_sequence


def test_record_size_matches_layout():
    expected = sum((4 if kind.endswith("4") else 1) * count for _, kind, count in C.RECORD_FIELDS)
    assert record_size() == expected
    assert record_size() % 4 == 0


def test_manifest_describes_every_file(tiny):
    manifest = tiny.manifest
    assert manifest["format"] == C.DATASET_FORMAT
    assert manifest["total_records"] == 36
    assert manifest["record_size"] == record_size()
    assert [entry["id"] for entry in manifest["sequences"]] == [0, 1, 2]
    for entry in manifest["sequences"]:
        path = os.path.join(tiny.root, entry["file"])
        assert entry["file"] == sequence_file_name(entry["id"])
        assert os.path.getsize(path) == entry["count"] * record_size()
        with open(path, "rb") as handle:
            assert file_digest(handle.read()) == entry["sha256"]
    assert read_json(os.path.join(tiny.root, C.MANIFEST_NAME)) == manifest


def test_loaded_arrays_have_model_shapes(tiny):
    dataset = tiny.dataset
    assert len(dataset) == 36
    assert dataset.image.shape == (36,) + C.IMAGE_SHAPE
    assert dataset.lidar.shape == (36, C.LIDAR_POINTS, 3)
    assert dataset.radar.shape == (36,) + C.RADAR_SHAPE
    assert dataset.gnss.shape == (36, 2)
    assert dataset.power.shape == (36, C.NUM_BEAMS)
    assert dataset.counts() == {0: 12, 1: 12, 2: 12}
    np.testing.assert_array_equal(dataset.indices_for([1]), np.arange(12, 24))


def test_records_round_trip_the_simulation(tiny):
    dataset = tiny.dataset
    sequence = tiny.sequences[1]
    rows = dataset.indices_for([1])
    np.testing.assert_array_equal(dataset.t[rows], np.arange(1, 13))
    np.testing.assert_allclose(dataset.power[rows], [s.power for s in sequence.snapshots], rtol=1e-6)
    np.testing.assert_allclose(dataset.truth[rows], [s.truth for s in sequence.snapshots], rtol=1e-6)
    np.testing.assert_array_equal(dataset.blocked_geom[rows], [s.blocked_geom for s in sequence.snapshots])
    assert np.all(dataset.prev_power[rows[0]] == 0)
    np.testing.assert_array_equal(dataset.prev_power[rows[1:]], dataset.power[rows[:-1]])


def test_encoding_is_deterministic(tiny):
    again = generate_sequence(tiny.cfg, 2)
    assert encode_sequence(again) == encode_sequence(tiny.sequences[2])


def test_rewriting_gives_identical_files(tiny, tmp_path):
    manifest = write_dataset(str(tmp_path), tiny.sequences, tiny.cfg)
    assert manifest == tiny.manifest


def test_digest_mismatch_is_detected(tiny, tmp_path):
    root = str(tmp_path / "copy")
    shutil.copytree(tiny.root, root)
    path = os.path.join(root, sequence_file_name(0))
    with open(path, "r+b") as handle:
        handle.seek(10)
        byte = handle.read(1)
        handle.seek(10)
        handle.write(bytes([byte[0] ^ 0xFF]))
    with pytest.raises(ConsistencyError):
        load_dataset(root)
    assert len(load_dataset(root, verify=False)) == 36


def test_missing_files_raise_io_errors(tiny, tmp_path):
    with pytest.raises(DatasetIOError):
        load_dataset(str(tmp_path))
    root = str(tmp_path / "copy")
    shutil.copytree(tiny.root, root)
    os.remove(os.path.join(root, sequence_file_name(2)))
    with pytest.raises(DatasetIOError):
        load_dataset(root)


def test_sha256_reference():
    assert file_digest(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_resample_drops_invalid_points_and_fills():
    points = np.array([[1.0, 2.0, 0.0], [np.nan, 0.0, 0.0], [200.0, 0.0, 0.0], [3.0, -4.0, 0.1]])
    cloud = resample_points(points, 8, 80.0, seed=5)
    assert cloud.shape == (8, 3)
    assert np.all(np.isfinite(cloud))
    assert np.all(np.hypot(cloud[:, 0], cloud[:, 1]) <= 80.0)
    np.testing.assert_array_equal(cloud[:2], points[[0, 3]])
    np.testing.assert_array_equal(cloud, resample_points(points, 8, 80.0, seed=5))


def test_resample_subsamples_large_clouds():
    points = np.column_stack([np.arange(10.0), np.ones(10), np.zeros(10)])
    cloud = resample_points(points, 4, 80.0, seed=1)
    assert cloud.shape == (4, 3)
    assert np.all(np.diff(cloud[:, 0]) > 0)


def test_resample_without_valid_points_raises():
    with pytest.raises(DataError):
        resample_points(np.full((4, 3), np.nan), 4, 80.0, seed=0)
