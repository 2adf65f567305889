# Shared fixtures: one tiny generated dataset per test session.

from types import SimpleNamespace

import pytest

from beamfuse.core.dataset_io import load_dataset, write_dataset
from beamfuse.core.labeling import label_dataset, write_labels
from beamfuse.core.simulator import generate_sequences
from beamfuse.core.training import split_by_sequence
from beamfuse.tests.helpers import tiny_config


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    """Generated, written, reloaded and labeled 3x12 dataset."""
    cfg = tiny_config()
    root = str(tmp_path_factory.mktemp("dataset"))
    sequences = generate_sequences(cfg)
    manifest = write_dataset(root, sequences, cfg)
    dataset = load_dataset(root)
    split = split_by_sequence(dataset.counts(), (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction), cfg.seed)
    labels = label_dataset(dataset, split, cfg)
    write_labels(root, labels, dataset)
    return SimpleNamespace(cfg=cfg, root=root, sequences=sequences, manifest=manifest,
                           dataset=dataset, split=split, labels=labels)
