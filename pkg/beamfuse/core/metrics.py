# Evaluation metrics: Top-k beam accuracy, mean spectral-efficiency drop,
# blocked-class precision/recall/F1 and 2-D pose RMSE.

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from beamfuse.core import config as C
from beamfuse.core.errors import DataError, UsageError
from beamfuse.core.labeling import se_drop
from beamfuse.core.model import infer

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    top1: float
    top3: float
    se_drop: float
    accuracy_blk: float
    precision_blk: float
    recall_blk: float
    f1_blk: float
    f1_undefined: bool
    rmse: float
    count: int

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def table_row(self, model: str) -> Dict[str, object]:
        """One row in the comparison-table schema (percentages for accuracies and F1)."""
        return {
            "Model": model,
            "Top1[%]": round(100.0 * self.top1, 2),
            "Top3[%]": round(100.0 * self.top3, 2),
            "mean dSE": round(self.se_drop, 4),
            "F1_blk[%]": round(100.0 * self.f1_blk, 2),
            "RMSE[m]": round(self.rmse, 3),
        }


TABLE_COLUMNS = ("Model", "Top1[%]", "Top3[%]", "mean dSE", "F1_blk[%]", "RMSE[m]")


@dataclass
class BlockageScores:
    precision: float
    recall: float
    f1: float
    accuracy: float
    undefined: bool


def _aligned(name: str, *arrays) -> int:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise DataError(f"{name}: inputs have mismatched lengths {sorted(lengths)}")
    return lengths.pop()


def topk_accuracy(logits: np.ndarray, b_star: np.ndarray, k: int) -> float:
    """Fraction of rows whose true beam ranks within the top k.

    Ranking is stable by (-logit, index): a tied logit at a lower index
    ranks first.
    """
    logits = np.asarray(logits, dtype=np.float64)
    b_star = np.asarray(b_star, dtype=np.int64)
    n = _aligned("topk_accuracy", logits, b_star)
    beams = logits.shape[1]
    if k < 1 or k > beams:
        raise UsageError(f"k must lie in [1, {beams}], got {k}")
    if n == 0:
        raise DataError("topk_accuracy: empty input")
    target = logits[np.arange(n), b_star][:, None]
    index = np.arange(beams)[None, :]
    rank = np.sum((logits > target) | ((logits == target) & (index < b_star[:, None])), axis=1)
    return float(np.mean(rank < k))


def mean_se_drop(power: np.ndarray, b_hat: np.ndarray, noise_dbm: float = -90.0, in_db: bool = True) -> float:
    n = _aligned("mean_se_drop", power, b_hat)
    if n == 0:
        raise DataError("mean_se_drop: empty input")
    return float(np.mean(se_drop(np.asarray(power, dtype=np.float64), np.asarray(b_hat), noise_dbm, in_db)))


def blockage_f1(pred: np.ndarray, truth: np.ndarray) -> BlockageScores:
    """Blocked-class scores; F1 is 0 and flagged undefined when TP=FP=FN=0."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    n = _aligned("blockage_f1", pred, truth)
    if n == 0:
        raise DataError("blockage_f1: empty input")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    undefined = tp == 0 and fp == 0 and fn == 0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return BlockageScores(precision, recall, f1, float(np.mean(pred == truth)), undefined)


def pose_rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """sqrt of the mean squared Euclidean error per snapshot."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n = _aligned("pose_rmse", pred, truth)
    if n == 0:
        raise DataError("pose_rmse: empty input")
    if pred.shape != truth.shape or pred.shape[1] != C.POSE_DIM:
        raise DataError(f"pose_rmse: expected two ({n}, 2) arrays, got {pred.shape} and {truth.shape}")
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


@dataclass
class Predictions:
    """Per-snapshot network (or oracle) outputs for a split."""

    logits: np.ndarray
    b_hat: np.ndarray
    y_hat: np.ndarray
    pose: np.ndarray

    @classmethod
    def from_output(cls, output) -> "Predictions":
        return cls(
            logits=output.z,
            b_hat=np.argmax(output.z, axis=1),
            y_hat=(output.q >= 0.5).astype(np.uint8),
            pose=output.pose,
        )

    @classmethod
    def concat(cls, parts) -> "Predictions":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in ("logits", "b_hat", "y_hat", "pose")))


class OraclePredictor:
    """Reads the labels back: the upper bound every metric can reach."""

    def predict(self, b_star: np.ndarray, y_blk: np.ndarray, truth: np.ndarray) -> Predictions:
        n = len(b_star)
        logits = np.zeros((n, C.NUM_BEAMS))
        logits[np.arange(n), b_star] = 1.0
        return Predictions(logits, np.asarray(b_star).copy(), np.asarray(y_blk).copy(),
                           np.asarray(truth, dtype=np.float64).copy())


def evaluate(pred: Predictions, b_star: np.ndarray, y_blk: np.ndarray, power: np.ndarray,
             truth: np.ndarray, noise_dbm: float = -90.0, in_db: bool = True) -> MetricReport:
    """All metrics for one split in one pass."""
    n = _aligned("evaluate", pred.logits, b_star, y_blk, power, truth)
    if n == 0:
        raise DataError("Cannot evaluate an empty split")
    blk = blockage_f1(pred.y_hat, y_blk)
    return MetricReport(
        top1=topk_accuracy(pred.logits, b_star, 1),
        top3=topk_accuracy(pred.logits, b_star, 3),
        se_drop=mean_se_drop(power, pred.b_hat, noise_dbm, in_db),
        accuracy_blk=blk.accuracy,
        precision_blk=blk.precision,
        recall_blk=blk.recall,
        f1_blk=blk.f1,
        f1_undefined=blk.undefined,
        rmse=pose_rmse(pred.pose, truth),
        count=n,
    )


def report(net, data, normalizer, batch_size: int = 256,
           noise_dbm: float = -90.0, in_db: bool = True) -> Tuple[MetricReport, Predictions]:
    """Run the network over a split and score it."""
    if len(data) == 0:
        raise DataError("Cannot report on an empty split")
    parts = []
    for start in range(0, len(data), batch_size):
        rows = np.arange(start, min(start + batch_size, len(data)))
        parts.append(Predictions.from_output(infer(net, data.inputs_for(rows), normalizer)))
    predictions = Predictions.concat(parts)
    return evaluate(predictions, data.b_star, data.y_blk, data.power, data.truth, noise_dbm, in_db), predictions


def oracle_report(data, noise_dbm: float = -90.0, in_db: bool = True,
                  predictor: Optional[OraclePredictor] = None) -> MetricReport:
    predictor = predictor or OraclePredictor()
    pred = predictor.predict(data.b_star, data.y_blk, data.truth)
    return evaluate(pred, data.b_star, data.y_blk, data.power, data.truth, noise_dbm, in_db)
