# Configuration constants and the run configuration for beamfuse
#
# Fixed quantities (codebook size, tensor shapes, on-disk layouts) live here
# as module constants. Everything a user may tune lives on RunConfig, which
# is read from a flat `key = value` file and overridden from the CLI.

import dataclasses
from dataclasses import dataclass, fields
from typing import Dict, Iterable, List, Mapping, Optional

from beamfuse.core.errors import ConfigError

# Codebook and sensor shapes
NUM_BEAMS = 64
IMAGE_SHAPE = (3, 32, 32)
LIDAR_POINTS = 256
RADAR_SHAPE = (32, 32)
GNSS_DIM = 2
POSE_DIM = 2
CAMERA_MAX_AZIMUTH_DEG = 60.0
CAMERA_MAX_RANGE_M = 80.0
VEHICLE_RADIUS_M = 1.0
VEHICLE_REFLECTIVITY = 1.0

# Static/dynamic blocker geometry (BS frame, metres)
STATIC_BLOCKER_Y_BAND = (4.6, 5.6)
STATIC_BLOCKER_HALF_X = (1.0, 3.0)
STATIC_BLOCKER_HALF_Y = (0.4, 0.8)
STATIC_BLOCKER_REFLECTIVITY = (0.3, 1.0)
MOVER_Y_BAND = (6.2, 7.0)
MOVER_HALF_X = (2.0, 5.0)
MOVER_HALF_Y = (0.8, 1.1)
MOVER_SPEED = (4.0, 10.0)
MOVER_REFLECTIVITY = (0.6, 1.0)
VEHICLE_LANE_CENTER = (9.0, 11.0)
VEHICLE_WANDER_AMPLITUDE = (0.3, 1.0)
VEHICLE_WANDER_RATE = (0.2, 0.6)
PLACEMENT_RETRIES = 200

# Dataset record layout (little-endian, fixed size)
DATASET_FORMAT = "beamfuse-dataset-1"
RECORD_FIELDS = (
    ("image", "<f4", 3 * 32 * 32),
    ("lidar", "<f4", 256 * 3),
    ("radar", "<f4", 32 * 32),
    ("gnss", "<f4", 2),
    ("power", "<f4", 64),
    ("prev_power", "<f4", 64),
    ("truth", "<f4", 2),
    ("t", "<u4", 1),
    ("blocked_geom", "u1", 1),
    ("pad", "u1", 3),
)
MANIFEST_NAME = "manifest.json"
LABELS_NAME = "labels.json"
CONFIG_ECHO_NAME = "config.txt"
CONFIG_HASH_TAG = "config_hash"

# Parameter checkpoint file
CHECKPOINT_MAGIC = b"BFCK1"
CHECKPOINT_NAME = "checkpoint.bfck"
CHECKPOINT_SIDECAR_NAME = "checkpoint.json"

# Training log and reports
TRAIN_LOG_NAME = "train_log.csv"
TRAIN_LOG_HEADER = (
    "epoch", "split", "loss", "loss_beam", "loss_blk", "loss_pose",
    "top1", "top3", "se_drop", "f1_blk", "rmse", "lr",
)
REPORT_NAME = "report.json"
TRAJECTORY_HEADER = ("t", "x_true", "y_true", "x_pred", "y_pred")

# Model inputs
MODALITIES = ("camera", "lidar", "radar", "gps", "mmwave")
FUSION_MODALITY = "all"
TOKEN_TYPES = MODALITIES + ("cls",)

# FNV-1a 64-bit
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
FNV_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass
class RunConfig:
    """Every tunable of a gen/train/eval/map run."""

    # generation
    seed: int = 7
    sequences: int = 12
    snapshots_per_sequence: int = 500
    dt: float = 0.1
    speed_min: float = 8.0
    speed_max: float = 14.0
    corridor_x_min: float = -60.0
    corridor_x_max: float = 60.0
    lane_y_min: float = 4.0
    lane_y_max: float = 12.0
    near_wall_y: float = 3.0
    far_wall_y: float = 13.0
    near_wall_half_length: float = 0.5
    static_blockers: int = 5
    dynamic_blockers: int = 2
    num_antennas: int = 16
    codebook_max_angle_deg: float = 60.0
    p0_db: float = -40.0
    d0_m: float = 10.0
    blockage_loss_db: float = 25.0
    reflection_loss_db: float = 10.0
    shadow_sigma_db: float = 1.0
    gnss_sigma_m: float = 2.0
    lidar_range_m: float = 80.0
    lidar_z_sigma_m: float = 0.05
    # labeling
    label_percentile: float = 20.0
    noise_dbm: float = -90.0
    power_in_db: bool = True
    # split
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    # model
    modality: str = FUSION_MODALITY
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    pose_residual: bool = True
    # loss and optimisation
    lambda_beam: float = 1.0
    lambda_blk: float = 0.5
    lambda_pose: float = 0.25
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-5
    # mapping
    map_cell_size: float = 0.5
    map_voxel_size: float = 0.25
    map_pixels_per_cell: int = 2

    def validate(self) -> "RunConfig":
        """Check value ranges; returns self so calls can be chained."""
        if self.sequences < 1:
            raise ConfigError("At least one sequence is required", "sequences")
        if self.snapshots_per_sequence < 2:
            raise ConfigError("A sequence needs at least two snapshots", "snapshots_per_sequence")
        if self.dt <= 0:
            raise ConfigError("Snapshot period must be positive", "dt")
        if not 0 < self.speed_min <= self.speed_max:
            raise ConfigError("Speeds must satisfy 0 < speed_min <= speed_max", "speed_min")
        if self.corridor_x_min >= self.corridor_x_max:
            raise ConfigError("Empty corridor", "corridor_x_min")
        if not self.near_wall_y < self.lane_y_min < self.lane_y_max < self.far_wall_y:
            raise ConfigError("Walls must enclose the lane band", "lane_y_min")
        if self.lane_y_min <= 0:
            raise ConfigError("Base station must lie outside the lane band", "lane_y_min")
        if self.static_blockers < 0 or self.dynamic_blockers < 0:
            raise ConfigError("Blocker counts must be non-negative", "static_blockers")
        if self.num_antennas < 1:
            raise ConfigError("Array needs at least one element", "num_antennas")
        if not 0 < self.codebook_max_angle_deg < 90:
            raise ConfigError("Codebook aperture must lie in (0, 90) degrees", "codebook_max_angle_deg")
        if not 0 < self.label_percentile < 100:
            raise ConfigError("Blockage percentile must lie in (0, 100)", "label_percentile")
        for key in ("train_fraction", "val_fraction", "test_fraction"):
            if getattr(self, key) <= 0:
                raise ConfigError("Split fractions must be positive", key)
        if abs(self.train_fraction + self.val_fraction + self.test_fraction - 1.0) > 1e-6:
            raise ConfigError("Split fractions must sum to 1", "train_fraction")
        if self.modality not in MODALITIES + (FUSION_MODALITY,):
            raise ConfigError(f"Unknown modality '{self.modality}'", "modality")
        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
            raise ConfigError("d_model must be a positive multiple of heads", "d_model")
        if self.layers < 0 or self.ffn_mult < 1:
            raise ConfigError("Invalid transformer size", "layers")
        for key in ("lambda_beam", "lambda_blk", "lambda_pose"):
            if getattr(self, key) < 0:
                raise ConfigError("Loss weights must be non-negative", key)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive", "epochs")
        if self.lr < 0 or self.weight_decay < 0 or self.clip_norm <= 0:
            raise ConfigError("Invalid optimiser setting", "lr")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 1:
            raise ConfigError("Invalid plateau schedule", "plateau_factor")
        if self.map_cell_size <= 0 or self.map_voxel_size < 0 or self.map_pixels_per_cell < 1:
            raise ConfigError("Invalid map resolution", "map_cell_size")
        return self


# Keys that determine the generated dataset and its labels.
DATASET_KEYS = (
    "seed", "sequences", "snapshots_per_sequence", "dt", "speed_min", "speed_max",
    "corridor_x_min", "corridor_x_max", "lane_y_min", "lane_y_max", "near_wall_y",
    "far_wall_y", "near_wall_half_length", "static_blockers", "dynamic_blockers",
    "num_antennas", "codebook_max_angle_deg", "p0_db", "d0_m", "blockage_loss_db",
    "reflection_loss_db", "shadow_sigma_db", "gnss_sigma_m", "lidar_range_m",
    "lidar_z_sigma_m", "label_percentile", "noise_dbm", "power_in_db",
    "train_fraction", "val_fraction", "test_fraction",
)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"Cannot parse value '{text}'", key)
    return text


def config_to_dict(cfg: RunConfig) -> Dict[str, object]:
    return dataclasses.asdict(cfg)


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, object]) -> RunConfig:
    """Return a copy of cfg with overrides applied; string values are coerced."""
    known = {f.name for f in fields(RunConfig)}
    values = config_to_dict(cfg)
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError("Unknown configuration key", key)
        if isinstance(value, str):
            value = _coerce(key, value, values[key])
        values[key] = value
    return RunConfig(**values)


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat `key = value` lines; `#` starts a comment."""
    entries: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"Line {number} is not of the form key = value")
        key, value = content.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Build a validated RunConfig from an optional file plus overrides."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
        cfg = apply_overrides(cfg, parse_config_text(text))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    """Render the merged configuration in the same format load_config reads.

    The run's hash rides along as a comment line, so the echo still loads.
    """
    lines = ["# beamfuse run configuration", f"# {CONFIG_HASH_TAG} = {config_hash(cfg)}"]
    for key, value in config_to_dict(cfg).items():
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def echoed_config_hash(text: str) -> Optional[str]:
    """The hash recorded in a dump_config header, or None when absent."""
    for line in text.splitlines():
        content = line.strip()
        if not content.startswith("#"):
            continue
        key, sep, value = content[1:].partition("=")
        if sep and key.strip() == CONFIG_HASH_TAG:
            return value.strip()
    return None


def fnv1a_64(data: bytes) -> int:
    value = FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * FNV_PRIME) & FNV_MASK
    return value


def config_hash(cfg: RunConfig, keys: Optional[Iterable[str]] = None) -> str:
    """16-hex-digit FNV-1a hash of the sorted `key=value` serialization."""
    values = config_to_dict(cfg)
    selected: List[str] = sorted(keys if keys is not None else values.keys())
    text = "".join(f"{key}={_format_value(values[key])}\n" for key in selected)
    return f"{fnv1a_64(text.encode('utf-8')):016x}"


def dataset_hash(cfg: RunConfig) -> str:
    return config_hash(cfg, DATASET_KEYS)
