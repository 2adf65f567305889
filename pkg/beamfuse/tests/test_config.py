# Unit tests for configuration including:
# - key = value parsing and typed overrides
# - Validation failures and their keys
# - Stable hashes and dump/load round trips

import dataclasses

import pytest

from beamfuse.core.config import (
    DATASET_KEYS, RunConfig, apply_overrides, config_hash, dataset_hash, dump_config, echoed_config_hash,
    fnv1a_64, load_config, parse_config_text,
)
from beamfuse.core.errors import ConfigError


def test_parse_skips_comments_and_blank_lines():
    text = "# header\n\nseed = 3   # trailing\n  lr=0.01\n"
    assert parse_config_text(text) == {"seed": "3", "lr": "0.01"}
    with pytest.raises(ConfigError):
        parse_config_text("seed 3\n")


def test_overrides_are_coerced_to_field_types():
    cfg = apply_overrides(RunConfig(), {"seed": "11", "lr": "5e-4", "power_in_db": "false", "modality": "gps"})
    assert cfg.seed == 11 and isinstance(cfg.seed, int)
    assert cfg.lr == 5e-4
    assert cfg.power_in_db is False
    assert cfg.modality == "gps"


def test_unknown_and_unparsable_keys_are_reported():
    with pytest.raises(ConfigError) as info:
        apply_overrides(RunConfig(), {"learning_rate": "0.1"})
    assert info.value.key == "learning_rate"
    with pytest.raises(ConfigError) as info:
        apply_overrides(RunConfig(), {"epochs": "many"})
    assert info.value.key == "epochs"


@pytest.mark.parametrize("changes, key", [
    ({"train_fraction": 0.5}, "train_fraction"),
    ({"d_model": 30, "heads": 4}, "d_model"),
    ({"modality": "sonar"}, "modality"),
    ({"label_percentile": 100.0}, "label_percentile"),
    ({"lr": -1.0}, "lr"),
    ({"lane_y_min": 2.0}, "lane_y_min"),
])
def test_validation_names_the_offending_key(changes, key):
    with pytest.raises(ConfigError) as info:
        dataclasses.replace(RunConfig(), **changes).validate()
    assert info.value.key == key


def test_load_config_merges_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 5\nepochs = 3\n")
    cfg = load_config(str(path), {"epochs": 9})
    assert (cfg.seed, cfg.epochs) == (5, 9)
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(ConfigError):
        load_config(None, {"sequences": 0})


def test_dump_then_load_gives_the_same_config(tmp_path):
    cfg = apply_overrides(RunConfig(), {"seed": 99, "lr": 0.1 + 0.2, "power_in_db": False})
    path = tmp_path / "echo.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(str(path)) == cfg
    assert config_hash(load_config(str(path))) == config_hash(cfg)


def test_dump_records_the_run_hash_in_its_header(tmp_path):
    cfg = apply_overrides(RunConfig(), {"seed": 4, "pose_residual": False})
    text = dump_config(cfg)
    assert text.splitlines()[1] == f"# config_hash = {config_hash(cfg)}"
    assert echoed_config_hash(text) == config_hash(cfg)
    assert "config_hash" not in parse_config_text(text)
    path = tmp_path / "echo.cfg"
    path.write_text(text)
    assert load_config(str(path)) == cfg
    assert echoed_config_hash("seed = 4\n") is None


def test_fnv1a_reference_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_hashes_are_stable_and_selective():
    base = RunConfig()
    assert len(config_hash(base)) == 16
    assert config_hash(base) == config_hash(RunConfig())
    trained_longer = dataclasses.replace(base, epochs=base.epochs + 1)
    assert config_hash(trained_longer) != config_hash(base)
    assert dataset_hash(trained_longer) == dataset_hash(base)
    assert dataset_hash(dataclasses.replace(base, seed=base.seed + 1)) != dataset_hash(base)
    assert "epochs" not in DATASET_KEYS
