# Sequence splits, the weighted multi-task loss and the optimisation loop.
#
# Sequences are split whole so no drive contributes to two splits. Each
# epoch shuffles the training rows with a generator seeded by (seed, epoch),
# clips the global gradient norm and takes one AdamW step per batch. The
# parameters with the lowest validation loss are kept and written out with
# a JSON sidecar holding everything eval/map need.

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from beamfuse.core import config as C
from beamfuse.core import functional as F
from beamfuse.core.checkpoint import decode_checkpoint, encode_checkpoint, write_atomic
from beamfuse.core.config import RunConfig, config_hash
from beamfuse.core.dataset_io import file_digest, read_json, write_json
from beamfuse.core.errors import ConfigError, ConsistencyError, DatasetIOError, NumericError, ShapeError, UsageError
from beamfuse.core.metrics import MetricReport, Predictions, evaluate
from beamfuse.core.model import HeadOutputs, Module, Normalizer, SplitData, build_model, to_output
from beamfuse.core.optim import OptimState, adamw_step, clip_global_norm
from beamfuse.core.rng import STREAM_SPLIT, Xoshiro256pp
from beamfuse.core.tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
LOSS_TERMS = ("beam", "blk", "pose")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    train: List[int]
    val: List[int]
    test: List[int]
    fractions: Tuple[float, float, float] = (0.70, 0.15, 0.15)

    def as_dict(self) -> Dict[str, List[int]]:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    def ids(self, name: str) -> List[int]:
        if name not in SPLIT_NAMES:
            raise UsageError(f"Unknown split '{name}' (expected one of {', '.join(SPLIT_NAMES)})")
        return getattr(self, name)

    @classmethod
    def from_dict(cls, document: Mapping[str, Sequence[int]]) -> "SplitSpec":
        return cls(*(sorted(int(v) for v in document[name]) for name in SPLIT_NAMES))


def split_by_sequence(counts: Mapping[int, int], fractions: Sequence[float] = (0.70, 0.15, 0.15),
                      seed: int = 0) -> SplitSpec:
    """Assign whole sequences to train/val/test.

    Sequence ids are shuffled with a seeded generator, then each goes to the
    split whose snapshot deficit against its target is largest (earlier
    split on ties). A split left empty takes the last sequence given to the
    fullest split.
    """
    if len(counts) < 3:
        raise ConfigError(f"Need at least 3 sequences to split by sequence, got {len(counts)}", "sequences")
    order = sorted(counts)
    Xoshiro256pp.for_stream(seed, STREAM_SPLIT).shuffle(order)
    total = float(sum(counts.values()))
    targets = [f * total for f in fractions]
    assigned = [0.0, 0.0, 0.0]
    members: List[List[int]] = [[], [], []]
    for seq_id in order:
        deficits = [targets[i] - assigned[i] for i in range(3)]
        choice = deficits.index(max(deficits))
        members[choice].append(seq_id)
        assigned[choice] += counts[seq_id]
    for i in range(3):
        if not members[i]:
            donor = max(range(3), key=lambda j: (len(members[j]), -j))
            members[i].append(members[donor].pop())
    spec = SplitSpec(*(sorted(m) for m in members), fractions=tuple(fractions))
    logger.info("Split by sequence: train=%s val=%s test=%s", spec.train, spec.val, spec.test)
    return spec


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass
class LossWeights:
    beam: float = 1.0
    blk: float = 0.5
    pose: float = 0.25
    pos_weight: float = 1.0

    def __post_init__(self):
        if min(self.beam, self.blk, self.pose) < 0:
            raise ConfigError("Loss weights must be non-negative", "lambda_beam")

    @classmethod
    def from_config(cls, cfg: RunConfig, y_train: np.ndarray) -> "LossWeights":
        return cls(cfg.lambda_beam, cfg.lambda_blk, cfg.lambda_pose, positive_weight(y_train))


def positive_weight(y_train: np.ndarray) -> float:
    """n_unblocked / n_blocked on the training split (1.0 when nothing is blocked)."""
    y = np.asarray(y_train)
    blocked = int(np.sum(y == 1))
    if blocked == 0:
        return 1.0
    return (len(y) - blocked) / blocked


def multitask_loss(outputs: HeadOutputs, b_star: np.ndarray, y_blk: np.ndarray, pose_std: np.ndarray,
                   weights: LossWeights, batch: Optional[int] = None) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted sum of beam cross-entropy, blockage BCE and standardised pose MSE."""
    n = outputs.beam_logits.shape[0]
    if len(b_star) != n or len(y_blk) != n or len(pose_std) != n:
        raise ShapeError("multitask_loss", n, (len(b_star), len(y_blk), len(pose_std)))
    for term, tensor in zip(LOSS_TERMS, (outputs.beam_logits, outputs.blk_logit, outputs.pose_std)):
        if not np.all(np.isfinite(tensor.data)):
            raise NumericError("Non-finite network output", term=term, batch=batch)
    terms = {
        "beam": F.cross_entropy(outputs.beam_logits, b_star),
        "blk": F.bce_with_logits(outputs.blk_logit, y_blk, weights.pos_weight),
        "pose": F.mse(outputs.pose_std, np.asarray(pose_std, dtype=outputs.pose_std.dtype)),
    }
    breakdown = {}
    for term, value in terms.items():
        breakdown[term] = value.item()
        if not math.isfinite(breakdown[term]):
            raise NumericError("Non-finite loss", term=term, batch=batch)
    total = F.add(F.add(F.mul(terms["beam"], weights.beam), F.mul(terms["blk"], weights.blk)),
                  F.mul(terms["pose"], weights.pose))
    breakdown["total"] = total.item()
    return total, breakdown


# ---------------------------------------------------------------------------
# Epochs
# ---------------------------------------------------------------------------

@dataclass
class EpochResult:
    losses: Dict[str, float]
    report: MetricReport
    predictions: Predictions
    batch_losses: List[float] = field(default_factory=list)


def _weighted_means(rows: List[Tuple[int, Dict[str, float]]]) -> Dict[str, float]:
    total = float(np.sum([count for count, _ in rows]))
    return {key: float(np.sum([count * parts[key] for count, parts in rows]) / total)
            for key in ("total",) + LOSS_TERMS}


def train_epoch(net: Module, data: SplitData, optim: OptimState, weights: LossWeights,
                normalizer: Normalizer, batch_size: int = 32, seed: int = 0, epoch: int = 1,
                clip_norm: float = 1.0, noise_dbm: float = -90.0, in_db: bool = True) -> EpochResult:
    """One pass over the training rows in a (seed, epoch)-determined order."""
    if len(data) == 0:
        raise UsageError("Training split is empty")
    params = net.parameters()
    order = np.random.default_rng([seed, epoch]).permutation(len(data))
    rows: List[Tuple[int, Dict[str, float]]] = []
    parts: List[Tuple[np.ndarray, Predictions]] = []
    for batch, start in enumerate(range(0, len(data), batch_size), start=1):
        idx = order[start:start + batch_size]
        net.zero_grad()
        outputs = net(data.inputs_for(idx))
        total, breakdown = multitask_loss(outputs, data.b_star[idx], data.y_blk[idx], data.pose_std[idx],
                                          weights, batch=batch)
        parts.append((idx, Predictions.from_output(to_output(outputs, normalizer))))
        backward(total)
        grads = {name: p.grad for name, p in params.items()}
        clip_global_norm(grads, clip_norm)
        adamw_step(params, grads, optim)
        rows.append((len(idx), breakdown))
    restore = np.argsort(np.concatenate([idx for idx, _ in parts]))
    predictions = Predictions.concat(p for _, p in parts)
    predictions = Predictions(predictions.logits[restore], predictions.b_hat[restore],
                              predictions.y_hat[restore], predictions.pose[restore])
    report = evaluate(predictions, data.b_star, data.y_blk, data.power, data.truth, noise_dbm, in_db)
    return EpochResult(_weighted_means(rows), report, predictions, [terms["total"] for _, terms in rows])


def validate(net: Module, data: SplitData, weights: LossWeights, normalizer: Normalizer,
             batch_size: int = 256, noise_dbm: float = -90.0, in_db: bool = True) -> EpochResult:
    """Loss and metrics on a split without touching parameters."""
    if len(data) == 0:
        raise UsageError("Cannot validate on an empty split")
    rows = []
    parts = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            outputs = net(data.inputs_for(idx))
            _, breakdown = multitask_loss(outputs, data.b_star[idx], data.y_blk[idx], data.pose_std[idx], weights)
            parts.append(Predictions.from_output(to_output(outputs, normalizer)))
            rows.append((len(idx), breakdown))
    predictions = Predictions.concat(parts)
    report = evaluate(predictions, data.b_star, data.y_blk, data.power, data.truth, noise_dbm, in_db)
    return EpochResult(_weighted_means(rows), report, predictions)


def log_sanity_band(epoch_result: EpochResult, train_eval: EpochResult) -> bool:
    """Compare a post-epoch pass over the training rows with the epoch's running mean.

    The two differ because parameters moved during the epoch; the check is
    informational only.
    """
    losses = np.asarray(epoch_result.batch_losses, dtype=np.float64)
    mean = float(losses.mean()) if losses.size else epoch_result.losses["total"]
    spread = float(losses.std()) if losses.size else 0.0
    inside = abs(train_eval.losses["total"] - mean) <= spread
    logger.debug("Sanity band: post-epoch train loss %.4f vs running mean %.4f +/- %.4f (%s)",
                 train_eval.losses["total"], mean, spread, "inside" if inside else "outside")
    return inside


# ---------------------------------------------------------------------------
# Schedule and selection
# ---------------------------------------------------------------------------

@dataclass
class PlateauScheduler:
    lr: float
    factor: float = 0.5
    patience: int = 5
    threshold: float = 1e-4
    min_lr: float = 1e-5
    best: float = math.inf
    bad_epochs: int = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            reduced = min(self.lr, max(self.lr * self.factor, self.min_lr))
            if reduced < self.lr:
                logger.info("Validation loss plateaued for %d epochs; lr %.3g -> %.3g",
                            self.bad_epochs, self.lr, reduced)
            self.lr = reduced
            self.bad_epochs = 0
        return self.lr


def plateau_lr(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)


def select_checkpoint(history: Sequence[float]) -> int:
    """1-based epoch with the lowest validation loss; the earliest wins ties."""
    if len(history) == 0:
        raise UsageError("Cannot select a checkpoint from an empty history")
    best = 0
    for i, loss in enumerate(history):
        if loss < history[best]:
            best = i
    return best + 1


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    lr: float = 1e-3
    seed: int = 0
    val_history: List[float] = field(default_factory=list)
    rows: List[Dict[str, object]] = field(default_factory=list)


def log_row(epoch: int, split: str, result: EpochResult, lr: float) -> Dict[str, object]:
    report = result.report
    return {
        "epoch": epoch,
        "split": split,
        "loss": result.losses["total"],
        "loss_beam": result.losses["beam"],
        "loss_blk": result.losses["blk"],
        "loss_pose": result.losses["pose"],
        "top1": report.top1,
        "top3": report.top3,
        "se_drop": report.se_drop,
        "f1_blk": report.f1_blk,
        "rmse": report.rmse,
        "lr": lr,
    }


def render_log(rows: Sequence[Mapping[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=C.TRAIN_LOG_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})
    return buffer.getvalue()


@dataclass
class TrainResult:
    state: TrainState
    best_params: Dict[str, np.ndarray]
    weights: LossWeights


def fit(net: Module, train: SplitData, val: SplitData, cfg: RunConfig, normalizer: Normalizer,
        log_path: Optional[str] = None) -> TrainResult:
    """Train for cfg.epochs epochs and keep the best-validation parameters."""
    weights = LossWeights.from_config(cfg, train.y_blk)
    optim = OptimState.create(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                              beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    scheduler = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
                                 cfg.plateau_threshold, cfg.min_lr)
    state = TrainState(lr=cfg.lr, seed=cfg.seed)
    best_params = net.state_dict()
    logger.info("Training %s network: %d parameters, %d train / %d val snapshots, pos_weight %.3f",
                getattr(net, "modality", "?"), net.num_parameters(), len(train), len(val), weights.pos_weight)
    for epoch in range(1, cfg.epochs + 1):
        lr = scheduler.lr
        optim.lr = lr
        trained = train_epoch(net, train, optim, weights, normalizer, cfg.batch_size, cfg.seed, epoch,
                              cfg.clip_norm, cfg.noise_dbm, cfg.power_in_db)
        if logger.isEnabledFor(logging.DEBUG):
            log_sanity_band(trained, validate(net, train, weights, normalizer,
                                              noise_dbm=cfg.noise_dbm, in_db=cfg.power_in_db))
        checked = validate(net, val, weights, normalizer, noise_dbm=cfg.noise_dbm, in_db=cfg.power_in_db)
        val_loss = checked.losses["total"]
        state.epoch = epoch
        state.val_history.append(val_loss)
        state.rows.append(log_row(epoch, "train", trained, lr))
        state.rows.append(log_row(epoch, "val", checked, lr))
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            best_params = net.state_dict()
            logger.info("New best validation loss %.4f at epoch %d", val_loss, epoch)
        else:
            state.epochs_since_improvement += 1
        logger.info(
            "Epoch %d/%d: train %.4f (beam %.4f, blk %.4f, pose %.4f) val %.4f top1 %.3f top3 %.3f "
            "dSE %.4f F1 %.3f RMSE %.2f lr %.3g",
            epoch, cfg.epochs, trained.losses["total"], trained.losses["beam"], trained.losses["blk"],
            trained.losses["pose"], val_loss, checked.report.top1, checked.report.top3,
            checked.report.se_drop, checked.report.f1_blk, checked.report.rmse, lr)
        if log_path:
            write_atomic(log_path, render_log(state.rows).encode("utf-8"))
        state.lr = plateau_lr(scheduler, val_loss)
    if state.best_epoch != select_checkpoint(state.val_history):
        raise ConsistencyError("Best epoch bookkeeping disagrees with the history",
                               expected=select_checkpoint(state.val_history), found=state.best_epoch)
    return TrainResult(state, best_params, weights)


# ---------------------------------------------------------------------------
# Checkpoint bundle
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    net: Module
    normalizer: Normalizer
    sidecar: dict

    @property
    def modality(self) -> str:
        return self.sidecar["modality"]


def save_bundle(out_dir: str, params: Mapping[str, np.ndarray], normalizer: Normalizer, cfg: RunConfig,
                labels, dataset_config_hash: str, best_epoch: int) -> dict:
    """Write checkpoint.bfck and its JSON sidecar; returns the sidecar."""
    payload = encode_checkpoint(params)
    write_atomic(os.path.join(out_dir, C.CHECKPOINT_NAME), payload)
    sidecar = {
        "d": cfg.d_model,
        "layers": cfg.layers,
        "heads": cfg.heads,
        "ffn_mult": cfg.ffn_mult,
        "modality": cfg.modality,
        "pose_residual": cfg.pose_residual,
        "normalizer": normalizer.to_dict(),
        "tau_db": labels.tau_db,
        "percentile": labels.percentile,
        "n0_dbm": labels.noise_dbm,
        "power_in_db": labels.power_in_db,
        "config_hash": config_hash(cfg),
        "dataset_hash": dataset_config_hash,
        "best_epoch": best_epoch,
        "checkpoint_id": file_digest(payload),
    }
    write_json(os.path.join(out_dir, C.CHECKPOINT_SIDECAR_NAME), sidecar)
    return sidecar


def load_bundle(run_dir: str, expected_dataset_hash: Optional[str] = None) -> TrainedModel:
    """Rebuild a trained network from a run directory, refusing mismatched datasets."""
    sidecar = read_json(os.path.join(run_dir, C.CHECKPOINT_SIDECAR_NAME))
    if expected_dataset_hash is not None and sidecar.get("dataset_hash") != expected_dataset_hash:
        raise ConsistencyError("Checkpoint was trained on a different dataset",
                               expected=expected_dataset_hash, found=sidecar.get("dataset_hash"))
    path = os.path.join(run_dir, C.CHECKPOINT_NAME)
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as e:
        raise DatasetIOError("Cannot read checkpoint", path=path, cause=e)
    params = decode_checkpoint(blob)
    digest = file_digest(blob)
    if digest != sidecar.get("checkpoint_id"):
        raise ConsistencyError("Checkpoint digest does not match its sidecar",
                               expected=sidecar.get("checkpoint_id"), found=digest)
    net = build_model(sidecar["modality"], sidecar["d"], sidecar["layers"], sidecar["heads"], sidecar["ffn_mult"],
                      pose_residual=sidecar["pose_residual"])
    net.load_state_dict(params)
    return TrainedModel(net, Normalizer.from_dict(sidecar["normalizer"]), sidecar)
