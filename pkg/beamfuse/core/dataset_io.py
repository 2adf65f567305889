# Dataset I/O helpers.
#
# This module writes generated sequences as fixed-size little-endian
# binary records (one `seq_<id>.bin` per sequence) next to a JSON
# manifest, verifies per-file SHA-256 digests on load, and exposes the
# records as numpy arrays shaped for the model. LiDAR clouds are cleaned
# and re-sampled to the fixed point count on the way in.

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from cryptography.hazmat.primitives import hashes

from beamfuse.core import config as C
from beamfuse.core.checkpoint import write_atomic
from beamfuse.core.config import RunConfig, config_to_dict, dataset_hash
from beamfuse.core.errors import ConsistencyError, DataError, DatasetIOError
from beamfuse.core.rng import STREAM_LIDAR_RESAMPLE, Xoshiro256pp
from beamfuse.core.simulator import SequenceData

logger = logging.getLogger(__name__)

RECORD_DTYPE = np.dtype([(name, kind, (count,)) if count > 1 else (name, kind) for name, kind, count in C.RECORD_FIELDS])


def record_size() -> int:
    return RECORD_DTYPE.itemsize


def sequence_file_name(seq_id: int) -> str:
    return f"seq_{seq_id:03d}.bin"


def encode_sequence(sequence: SequenceData) -> bytes:
    """Pack every snapshot of a sequence into concatenated binary records.

    :param sequence: Generated sequence with its snapshots in time order.
    :returns: Raw bytes, `len(snapshots) * record_size()` long.
    """
    records = np.zeros(len(sequence.snapshots), dtype=RECORD_DTYPE)
    snaps = sequence.snapshots
    if snaps:
        records["image"] = np.stack([s.image.reshape(-1) for s in snaps])
        records["lidar"] = np.stack([s.lidar.reshape(-1) for s in snaps])
        records["radar"] = np.stack([s.radar.reshape(-1) for s in snaps])
        records["gnss"] = np.stack([s.gnss for s in snaps])
        records["power"] = np.stack([s.power for s in snaps])
        records["truth"] = np.stack([s.truth for s in snaps])
        records["t"] = [s.t for s in snaps]
        records["blocked_geom"] = [1 if s.blocked_geom else 0 for s in snaps]
    # prev_power is the stored (f32) power of the previous record, zeros at t=1.
    if len(records) > 1:
        records["prev_power"][1:] = records["power"][:-1]
    return records.tobytes()


def file_digest(payload: bytes) -> str:
    """Return the hex SHA-256 digest of a byte string."""
    digest = hashes.Hash(hashes.SHA256())
    digest.update(payload)
    return digest.finalize().hex()


def write_json(path: str, document: dict) -> None:
    payload = (json.dumps(document, indent=2, sort_keys=True) + "\n").encode("utf-8")
    write_atomic(path, payload)


def read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as e:
        raise DatasetIOError("Cannot read file", path=path, cause=e)
    except json.JSONDecodeError as e:
        raise DatasetIOError("Malformed JSON", path=path, cause=e)


def write_dataset(out_dir: str, sequences: Sequence[SequenceData], cfg: RunConfig) -> dict:
    """Write sequence files and the manifest; returns the manifest document.

    :param out_dir: Destination directory, created if missing.
    :param sequences: Generated sequences.
    :param cfg: Configuration the sequences were generated from.
    :returns: The manifest as written.
    :raises: DatasetIOError when a file cannot be written.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DatasetIOError("Cannot create dataset directory", path=out_dir, cause=e)
    entries = []
    total = 0
    for sequence in sorted(sequences, key=lambda s: s.seq_id):
        payload = encode_sequence(sequence)
        name = sequence_file_name(sequence.seq_id)
        write_atomic(os.path.join(out_dir, name), payload)
        count = len(sequence.snapshots)
        entries.append({"id": sequence.seq_id, "count": count, "file": name, "sha256": file_digest(payload)})
        total += count
    manifest = {
        "format": C.DATASET_FORMAT,
        "config": config_to_dict(cfg),
        "config_hash": dataset_hash(cfg),
        "seed": cfg.seed,
        "record_size": record_size(),
        "fields": [[name, kind, count] for name, kind, count in C.RECORD_FIELDS],
        "sequences": entries,
        "total_records": total,
    }
    write_json(os.path.join(out_dir, C.MANIFEST_NAME), manifest)
    logger.info("Wrote %d sequences (%d records) to %s", len(entries), total, out_dir)
    return manifest


def resample_points(points: np.ndarray, count: int, max_range: float, seed: int) -> np.ndarray:
    """Drop invalid points and re-sample the cloud to exactly `count` points.

    Valid points are finite and within `max_range` of the BS. Surplus points
    are subsampled and missing ones filled by repeating valid points, both
    with a generator seeded by `seed`, so the result is reproducible.
    """
    finite = np.all(np.isfinite(points), axis=1)
    in_range = np.zeros(len(points), dtype=bool)
    in_range[finite] = np.hypot(points[finite, 0], points[finite, 1]) <= max_range
    valid = points[in_range]
    if len(valid) == count:
        return valid
    if len(valid) == 0:
        raise DataError("LiDAR cloud has no valid points")
    rng = Xoshiro256pp.for_stream(seed, STREAM_LIDAR_RESAMPLE)
    if len(valid) > count:
        order = list(range(len(valid)))
        rng.shuffle(order)
        return valid[np.sort(order[:count])]
    extra = [rng.integer(len(valid)) for _ in range(count - len(valid))]
    return np.concatenate([valid, valid[extra]], axis=0)


@dataclass
class Dataset:
    """All records of a dataset plus the manifest they came from."""

    root: str
    manifest: dict
    records: np.ndarray
    seq_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.records)

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def sequence_ids(self) -> List[int]:
        return [entry["id"] for entry in self.manifest["sequences"]]

    @property
    def image(self) -> np.ndarray:
        return self.records["image"].reshape(-1, *C.IMAGE_SHAPE)

    @property
    def lidar(self) -> np.ndarray:
        return self.records["lidar"].reshape(-1, C.LIDAR_POINTS, 3)

    @property
    def radar(self) -> np.ndarray:
        return self.records["radar"].reshape(-1, *C.RADAR_SHAPE)

    @property
    def gnss(self) -> np.ndarray:
        return self.records["gnss"]

    @property
    def power(self) -> np.ndarray:
        return self.records["power"]

    @property
    def prev_power(self) -> np.ndarray:
        return self.records["prev_power"]

    @property
    def truth(self) -> np.ndarray:
        return self.records["truth"]

    @property
    def t(self) -> np.ndarray:
        return self.records["t"]

    @property
    def blocked_geom(self) -> np.ndarray:
        return self.records["blocked_geom"].astype(bool)

    def indices_for(self, seq_ids: Sequence[int]) -> np.ndarray:
        """Record indices of the given sequences, in ascending order (time order within each)."""
        return np.flatnonzero(np.isin(self.seq_ids, np.asarray(list(seq_ids), dtype=np.int64)))

    def counts(self) -> Dict[int, int]:
        return {entry["id"]: entry["count"] for entry in self.manifest["sequences"]}


def load_dataset(root: str, verify: bool = True, prepare_lidar: bool = True) -> Dataset:
    """Read a dataset directory back into memory.

    :param root: Directory holding manifest.json and the sequence files.
    :param verify: Check every file's SHA-256 against the manifest.
    :param prepare_lidar: Filter and re-sample LiDAR clouds to the fixed size.
    :returns: Dataset with records of all sequences in id order.
    :raises: DatasetIOError on missing/corrupt files, ConsistencyError on digest mismatch.
    """
    manifest = read_json(os.path.join(root, C.MANIFEST_NAME))
    if manifest.get("format") != C.DATASET_FORMAT:
        raise DatasetIOError(f"Unsupported dataset format {manifest.get('format')!r}", path=root)
    if manifest.get("record_size") != record_size():
        raise ConsistencyError("Record size mismatch", expected=record_size(), found=manifest.get("record_size"))
    chunks = []
    owners = []
    for entry in sorted(manifest["sequences"], key=lambda e: e["id"]):
        path = os.path.join(root, entry["file"])
        try:
            with open(path, "rb") as handle:
                payload = handle.read()
        except OSError as e:
            raise DatasetIOError("Cannot read sequence file", path=path, cause=e)
        if verify and file_digest(payload) != entry["sha256"]:
            raise ConsistencyError(f"Digest mismatch for {entry['file']}",
                                   expected=entry["sha256"], found=file_digest(payload))
        if len(payload) != entry["count"] * record_size():
            raise DatasetIOError(f"Expected {entry['count']} records", path=path)
        records = np.frombuffer(payload, dtype=RECORD_DTYPE).copy()
        chunks.append(records)
        owners.append(np.full(len(records), entry["id"], dtype=np.int64))
    records = np.concatenate(chunks) if chunks else np.zeros(0, dtype=RECORD_DTYPE)
    seq_ids = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
    if prepare_lidar and len(records):
        max_range = float(manifest["config"].get("lidar_range_m", C.CAMERA_MAX_RANGE_M))
        seed = int(manifest.get("seed", 0))
        clouds = records["lidar"].reshape(-1, C.LIDAR_POINTS, 3)
        with np.errstate(invalid="ignore"):
            ok = np.isfinite(clouds).all(axis=2) & (np.hypot(clouds[..., 0], clouds[..., 1]) <= max_range)
        dirty = np.flatnonzero(~ok.all(axis=1))
        for i in dirty:
            clouds[i] = resample_points(clouds[i].astype(np.float64), C.LIDAR_POINTS, max_range, seed ^ (int(i) + 1))
        records["lidar"] = clouds.reshape(len(records), -1)
        if len(dirty):
            logger.warning("Re-sampled %d LiDAR clouds with invalid points", len(dirty))
    logger.debug("Loaded %d records from %s", len(records), root)
    return Dataset(root=root, manifest=manifest, records=records, seq_ids=seq_ids)
