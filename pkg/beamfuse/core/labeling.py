# Beam and blockage labels, SNR and spectral efficiency.
#
# Labels are derived from the stored power sweeps: the oracle beam is the
# argmax (lowest index on ties), the blockage flag compares the sweep
# maximum against a percentile threshold computed on the training split
# only. A LabelSet remembers the threshold it was built with.

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from beamfuse.core import config as C
from beamfuse.core.config import RunConfig, dataset_hash
from beamfuse.core.dataset_io import read_json, write_json
from beamfuse.core.errors import ConfigError, ConsistencyError, DataError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelConfig:
    percentile: float = 20.0
    noise_dbm: float = -90.0
    power_in_db: bool = True

    def __post_init__(self):
        if not 0 < self.percentile < 100:
            raise ConfigError("Blockage percentile must lie in (0, 100)", "label_percentile")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "LabelConfig":
        return cls(cfg.label_percentile, cfg.noise_dbm, cfg.power_in_db)


def _check_power(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] < 1:
        raise DataError("Empty power vector")
    if np.isnan(r).any():
        raise DataError("Power vector contains NaN")
    return r


def oracle_beam(r_t) -> np.ndarray:
    """Index of the strongest beam; np.argmax already breaks ties toward the lowest index."""
    r = _check_power(r_t)
    result = np.argmax(r, axis=-1)
    return int(result) if np.ndim(result) == 0 else result


def max_power(r_t):
    r = _check_power(r_t)
    result = np.max(r, axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def percentile_threshold(train_pmax: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile: rank p/100*(n-1) between order statistics."""
    values = np.asarray(train_pmax, dtype=np.float64)
    if values.size == 0:
        raise DataError("Cannot compute a threshold from an empty list")
    if not 0 <= p <= 100:
        raise UsageError(f"Percentile {p} outside [0, 100]")
    return float(np.percentile(values, p, method="linear"))


def blockage_label(p_max, tau: float):
    """1 iff P^max < tau; the boundary itself counts as unblocked."""
    labels = (np.asarray(p_max) < tau).astype(np.uint8)
    return int(labels) if labels.ndim == 0 else labels


def snr_linear(r, noise_dbm: float = -90.0, in_db: bool = True):
    if in_db:
        return np.power(10.0, (np.asarray(r, dtype=np.float64) - noise_dbm) / 10.0)
    return np.asarray(r, dtype=np.float64) / np.power(10.0, noise_dbm / 10.0)


def se(r, noise_dbm: float = -90.0, in_db: bool = True):
    """Spectral efficiency log2(1 + SNR) in bits/s/Hz."""
    return np.log2(1.0 + snr_linear(r, noise_dbm, in_db))


def se_drop(r_t, b_hat, noise_dbm: float = -90.0, in_db: bool = True):
    """SE of the oracle beam minus SE of the predicted beam (per snapshot)."""
    r = _check_power(r_t)
    b_hat = np.asarray(b_hat)
    if np.any(b_hat < 0) or np.any(b_hat >= r.shape[-1]):
        raise UsageError(f"Predicted beam index out of range [0, {r.shape[-1]})")
    values = se(r, noise_dbm, in_db)
    best = values.max(axis=-1)
    if r.ndim == 1:
        return float(best - values[int(b_hat)])
    chosen = np.take_along_axis(values, b_hat.astype(np.int64)[:, None], axis=-1)[:, 0]
    return best - chosen


@dataclass
class LabelSet:
    """Per-snapshot labels for a whole dataset plus the threshold they used."""

    b_star: np.ndarray
    p_max: np.ndarray
    y_blk: np.ndarray
    tau_db: float
    percentile: float
    noise_dbm: float
    power_in_db: bool = True
    config_hash: str = ""
    splits: Dict[str, List[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.b_star)

    def se(self, power: np.ndarray) -> np.ndarray:
        return se(power, self.noise_dbm, self.power_in_db)

    def blocked_fraction(self, indices: Optional[np.ndarray] = None) -> float:
        labels = self.y_blk if indices is None else self.y_blk[indices]
        return float(labels.mean()) if len(labels) else 0.0


def build_labels(power: np.ndarray, train_indices: np.ndarray, label_cfg: LabelConfig,
                 config_hash: str = "", splits: Optional[Dict[str, List[int]]] = None) -> LabelSet:
    """Label every snapshot; tau comes from the training snapshots only."""
    power = _check_power(power)
    if len(train_indices) == 0:
        raise DataError("Training split is empty; cannot compute the blockage threshold")
    p_max = np.max(power, axis=1)
    tau = percentile_threshold(p_max[train_indices], label_cfg.percentile)
    labels = LabelSet(
        b_star=np.argmax(power, axis=1).astype(np.int64),
        p_max=p_max,
        y_blk=(p_max < tau).astype(np.uint8),
        tau_db=tau,
        percentile=label_cfg.percentile,
        noise_dbm=label_cfg.noise_dbm,
        power_in_db=label_cfg.power_in_db,
        config_hash=config_hash,
        splits=dict(splits or {}),
    )
    logger.info("Blockage threshold %.2f dB (p=%g); train blocked fraction %.3f",
                tau, label_cfg.percentile, labels.blocked_fraction(train_indices))
    return labels


def label_dataset(dataset, split, cfg: RunConfig) -> LabelSet:
    """Labels for a loaded dataset given its sequence split."""
    return build_labels(
        dataset.power,
        dataset.indices_for(split.train),
        LabelConfig.from_config(cfg),
        config_hash=dataset_hash(cfg),
        splits=split.as_dict(),
    )


def write_labels(root: str, labels: LabelSet, dataset) -> None:
    """Write labels.json with per-sequence label arrays."""
    per_sequence = {}
    for seq_id in dataset.sequence_ids:
        idx = dataset.indices_for([seq_id])
        per_sequence[str(seq_id)] = {
            "b_star": [int(v) for v in labels.b_star[idx]],
            "y_blk": [int(v) for v in labels.y_blk[idx]],
        }
    document = {
        "tau_db": labels.tau_db,
        "percentile": labels.percentile,
        "n0_dbm": labels.noise_dbm,
        "power_in_db": labels.power_in_db,
        "config_hash": labels.config_hash,
        "splits": labels.splits,
        "sequences": per_sequence,
    }
    write_json(os.path.join(root, C.LABELS_NAME), document)


def read_labels(root: str, dataset) -> LabelSet:
    """Load labels.json and align it with the dataset's record order."""
    document = read_json(os.path.join(root, C.LABELS_NAME))
    if document.get("config_hash") != dataset.config_hash:
        raise ConsistencyError("labels.json was built for another dataset",
                               expected=dataset.config_hash, found=document.get("config_hash"))
    b_star = np.zeros(len(dataset), dtype=np.int64)
    y_blk = np.zeros(len(dataset), dtype=np.uint8)
    for seq_id in dataset.sequence_ids:
        entry = document["sequences"].get(str(seq_id))
        idx = dataset.indices_for([seq_id])
        if entry is None or len(entry["b_star"]) != len(idx):
            raise ConsistencyError(f"labels.json does not cover sequence {seq_id}")
        b_star[idx] = entry["b_star"]
        y_blk[idx] = entry["y_blk"]
    return LabelSet(
        b_star=b_star,
        p_max=np.max(np.asarray(dataset.power, dtype=np.float64), axis=1),
        y_blk=y_blk,
        tau_db=float(document["tau_db"]),
        percentile=float(document["percentile"]),
        noise_dbm=float(document["n0_dbm"]),
        power_in_db=bool(document.get("power_in_db", True)),
        config_hash=document["config_hash"],
        splits={k: [int(v) for v in ids] for k, ids in document.get("splits", {}).items()},
    )
