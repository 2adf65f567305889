# Multimodal beam / blockage / pose network.
#
# Five encoders map camera, LiDAR, radar, GNSS and mmWave-history inputs to
# d-wide tokens. FusionNet prepends a learnable CLS token, adds a type
# embedding per slot, runs pre-norm Transformer layers and reads the three
# linear heads off the CLS position. UnimodalNet keeps one encoder and
# swaps fusion for a small MLP trunk.
#
# Networks consume numpy inputs already standardised by a Normalizer fitted
# on the training split; pose is regressed in standardised coordinates.
# Networks that see the GNSS reading predict pose as a correction added to
# that reading (pose_residual), so a fresh network reproduces GNSS.

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from beamfuse.core import config as C
from beamfuse.core import functional as F
from beamfuse.core.errors import ConsistencyError, DataError, ShapeError, UsageError
from beamfuse.core.tensor import Tensor, no_grad, parameter

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6
POINT_SCALE_M = 80.0
EMBED_INIT_SCALE = 0.02
Q_EPS = 1e-7

# Input key of the GNSS reading in standardised pose coordinates
POSE_ANCHOR = "pose_anchor"


class Module:
    """Container walking its attributes for parameters, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(arrays):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ConsistencyError("Checkpoint parameters do not match the network",
                                   expected=missing[:3], found=extra[:3])
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ConsistencyError(f"Shape of {name}", expected=p.shape, found=arrays[name].shape)
            p.data = np.ascontiguousarray(arrays[name], dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self


def _walk(prefix: str, value) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield prefix, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix + ".")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{prefix}.{key}", item)
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            yield from _walk(f"{prefix}.{index}", item)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero: bool = False):
        init = np.zeros((in_features, out_features), np.float32) if zero else _uniform(rng, (in_features, out_features), in_features)
        self.weight = parameter(init)
        self.bias = parameter(np.zeros(out_features, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 2, padding: int = 1):
        fan_in = in_channels * kernel * kernel
        self.weight = parameter(_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = parameter(np.zeros(out_channels, np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gamma = parameter(np.ones(width, np.float32))
        self.beta = parameter(np.zeros(width, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def params(self) -> F.AttentionParams:
        return F.AttentionParams(self.q.weight, self.q.bias, self.k.weight, self.k.bias,
                                 self.v.weight, self.v.bias, self.o.weight, self.o.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return F.multi_head_attention(x, self.heads, self.params())


class TransformerLayer(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, d: int, heads: int, ffn_mult: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff1 = Linear(d, ffn_mult * d, rng)
        self.ff2 = Linear(ffn_mult * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = F.add(x, self.attn(self.norm1(x)))
        return F.add(x, self.ff2(F.relu(self.ff1(self.norm2(x)))))


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------

def _expect(op: str, array: np.ndarray, tail: Tuple[int, ...]) -> None:
    if array.ndim != len(tail) + 1 or array.shape[1:] != tail:
        raise ShapeError(op, ("N",) + tail, array.shape)


class ImageEncoder(Module):
    """Three stride-2 conv blocks (16/32/64), global average pool, linear to d."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.conv1 = Conv2d(C.IMAGE_SHAPE[0], 16, rng)
        self.conv2 = Conv2d(16, 32, rng)
        self.conv3 = Conv2d(32, 64, rng)
        self.proj = Linear(64, d, rng)

    def __call__(self, image: np.ndarray) -> Tensor:
        _expect("encode_image", image, C.IMAGE_SHAPE)
        x = Tensor(image)
        for conv in (self.conv1, self.conv2, self.conv3):
            x = F.relu(conv(x))
        return self.proj(F.mean(x, axis=(2, 3)))


class PointEncoder(Module):
    """Shared per-point MLP followed by an elementwise max over points."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc1 = Linear(3, 64, rng)
        self.fc2 = Linear(64, d, rng)

    def point_features(self, points: np.ndarray) -> Tensor:
        x = Tensor(points / np.asarray(POINT_SCALE_M, dtype=points.dtype))
        return self.fc2(F.relu(self.fc1(x)))

    def __call__(self, points: np.ndarray) -> Tensor:
        if points.ndim != 3 or points.shape[2] != 3 or points.shape[1] < 1:
            raise ShapeError("encode_pointcloud", ("N", "P>=1", 3), points.shape)
        return F.max(self.point_features(points), axis=1)


class RadarEncoder(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.conv1 = Conv2d(1, 16, rng)
        self.conv2 = Conv2d(16, 32, rng)
        self.proj = Linear(32, d, rng)

    def __call__(self, radar: np.ndarray) -> Tensor:
        _expect("encode_radar", radar, C.RADAR_SHAPE)
        x = Tensor(radar.reshape(radar.shape[0], 1, *C.RADAR_SHAPE))
        x = F.relu(self.conv2(F.relu(self.conv1(x))))
        return self.proj(F.mean(x, axis=(2, 3)))


class GnssEncoder(Module):
    """2 -> 64 -> d MLP with a per-feature normalisation layer in between.

    The normalisation has no running statistics, so it behaves the same for
    a batch of one at evaluation time.
    """

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc1 = Linear(C.GNSS_DIM, 64, rng)
        self.norm = LayerNorm(64)
        self.fc2 = Linear(64, d, rng)

    def __call__(self, gnss_std: np.ndarray) -> Tensor:
        _expect("encode_gnss", gnss_std, (C.GNSS_DIM,))
        if not np.all(np.isfinite(gnss_std)):
            raise DataError("encode_gnss: non-finite GNSS input")
        return self.fc2(F.relu(self.norm(self.fc1(Tensor(gnss_std)))))


class MmwaveEncoder(Module):
    """Previous power sweep (z-scored, plus missing flag) through 65 -> 128 -> d."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc1 = Linear(C.NUM_BEAMS + 1, 128, rng)
        self.fc2 = Linear(128, d, rng)

    def __call__(self, history: np.ndarray) -> Tensor:
        _expect("encode_mmwave", history, (C.NUM_BEAMS + 1,))
        return self.fc2(F.relu(self.fc1(Tensor(history))))


ENCODERS = {
    "camera": ImageEncoder,
    "lidar": PointEncoder,
    "radar": RadarEncoder,
    "gps": GnssEncoder,
    "mmwave": MmwaveEncoder,
}


# ---------------------------------------------------------------------------
# Input statistics
# ---------------------------------------------------------------------------

def _stats(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return mean, std


@dataclass
class Normalizer:
    """Training-split statistics for GNSS, mmWave history and pose."""

    gnss_mean: np.ndarray
    gnss_std: np.ndarray
    power_mean: np.ndarray
    power_std: np.ndarray
    pose_mean: np.ndarray
    pose_std: np.ndarray

    @classmethod
    def fit(cls, gnss: np.ndarray, prev_power: np.ndarray, truth: np.ndarray) -> "Normalizer":
        present = prev_power[np.any(prev_power != 0, axis=1)]
        if len(present) == 0:
            present = np.zeros((1, C.NUM_BEAMS))
        gnss_mean, gnss_std = _stats(gnss)
        power_mean, power_std = _stats(present)
        pose_mean, pose_std = _stats(truth)
        return cls(gnss_mean, gnss_std, power_mean, power_std, pose_mean, pose_std)

    def standardize_gnss(self, gnss: np.ndarray) -> np.ndarray:
        return (np.asarray(gnss, np.float64) - self.gnss_mean) / self.gnss_std

    def prepare_mmwave(self, prev_power: np.ndarray) -> np.ndarray:
        """z-scored history with a trailing missing flag; all-zero rows (t=1) bypass the z-score."""
        prev = np.asarray(prev_power, np.float64)
        missing = np.all(prev == 0, axis=1)
        z = (prev - self.power_mean) / self.power_std
        z[missing] = 0.0
        return np.concatenate([z, missing[:, None].astype(np.float64)], axis=1)

    def standardize_pose(self, pose: np.ndarray) -> np.ndarray:
        return (np.asarray(pose, np.float64) - self.pose_mean) / self.pose_std

    def destandardize_pose(self, pose_std: np.ndarray) -> np.ndarray:
        return np.asarray(pose_std, np.float64) * self.pose_std + self.pose_mean

    def to_dict(self) -> Dict[str, List[float]]:
        return {name: [float(v) for v in getattr(self, name)] for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, document: Mapping[str, Sequence[float]]) -> "Normalizer":
        return cls(**{name: np.asarray(document[name], dtype=np.float64) for name in cls.__dataclass_fields__})


def prepare_inputs(arrays: Mapping[str, np.ndarray], normalizer: Normalizer,
                   dtype=np.float32) -> Dict[str, np.ndarray]:
    """Model-ready inputs keyed by modality from raw snapshot arrays.

    `arrays` holds image, lidar, radar, gnss and prev_power for a batch.
    Besides the five modalities the result carries POSE_ANCHOR.
    """
    return {
        "camera": np.ascontiguousarray(arrays["image"], dtype=dtype),
        "lidar": np.ascontiguousarray(arrays["lidar"], dtype=dtype),
        "radar": np.ascontiguousarray(arrays["radar"], dtype=dtype),
        "gps": normalizer.standardize_gnss(arrays["gnss"]).astype(dtype),
        "mmwave": normalizer.prepare_mmwave(arrays["prev_power"]).astype(dtype),
        POSE_ANCHOR: normalizer.standardize_pose(arrays["gnss"]).astype(dtype),
    }


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

@dataclass
class HeadOutputs:
    """Raw head tensors of a forward pass (still attached to the graph)."""

    beam_logits: Tensor
    blk_logit: Tensor
    pose_std: Tensor


@dataclass
class ModelOutput:
    z: np.ndarray
    v: np.ndarray
    pose: np.ndarray
    pi: np.ndarray
    q: np.ndarray


class Heads(Module):
    """Beam, blockage and pose heads, zero-initialised so a fresh net is uninformative."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.beam = Linear(d, C.NUM_BEAMS, rng, zero=True)
        self.blk = Linear(d, 1, rng, zero=True)
        self.pose = Linear(d, C.POSE_DIM, rng, zero=True)

    def __call__(self, h: Tensor, anchor: Optional[np.ndarray] = None) -> HeadOutputs:
        blk = self.blk(h)
        pose = self.pose(h)
        if anchor is not None:
            pose = F.add(pose, Tensor(np.asarray(anchor, dtype=pose.dtype)))
        return HeadOutputs(self.beam(h), F.reshape(blk, (blk.shape[0],)), pose)


class FusionNet(Module):
    def __init__(self, d: int = 64, layers: int = 2, heads: int = 4, ffn_mult: int = 4, seed: int = 0,
                 pose_residual: bool = True):
        if d % heads:
            raise ShapeError("FusionNet", f"d divisible by {heads}", d)
        rng = np.random.default_rng(seed)
        self.d = d
        self.modality = C.FUSION_MODALITY
        self.pose_residual = pose_residual
        self.encoders = {name: ENCODERS[name](d, rng) for name in C.MODALITIES}
        self.cls_token = parameter((rng.standard_normal(d) * EMBED_INIT_SCALE).astype(np.float32))
        self.type_embeddings = parameter(
            (rng.standard_normal((len(C.TOKEN_TYPES), d)) * EMBED_INIT_SCALE).astype(np.float32))
        self.layers = [TransformerLayer(d, heads, ffn_mult, rng) for _ in range(layers)]
        self.heads = Heads(d, rng)

    def encode(self, inputs: Mapping[str, np.ndarray]) -> List[Tensor]:
        return [self.encoders[name](inputs[name]) for name in C.MODALITIES]

    def fuse(self, tokens: Sequence[Tensor], slot_types: Optional[Sequence[int]] = None) -> Tensor:
        """CLS output after the Transformer over [CLS, tokens...].

        `slot_types` gives the type-embedding row of each modality token
        (defaults to the modality order).
        """
        if len(tokens) != len(C.MODALITIES):
            raise ShapeError("fuse", len(C.MODALITIES), len(tokens))
        slot_types = list(range(len(C.MODALITIES))) if slot_types is None else list(slot_types)
        n = tokens[0].shape[0]
        cls = F.add(Tensor(np.zeros((n, self.d), dtype=self.cls_token.dtype)), self.cls_token)
        slots = [(cls, C.TOKEN_TYPES.index("cls"))] + list(zip(tokens, slot_types))
        typed = [
            F.reshape(F.add(token, F.select(self.type_embeddings, 0, kind)), (n, 1, self.d))
            for token, kind in slots
        ]
        x = F.concat(typed, axis=1)
        for layer in self.layers:
            x = layer(x)
        return F.select(x, 1, 0)

    def __call__(self, inputs: Mapping[str, np.ndarray]) -> HeadOutputs:
        anchor = inputs[POSE_ANCHOR] if self.pose_residual else None
        return self.heads(self.fuse(self.encode(inputs)), anchor)


class UnimodalNet(Module):
    """One encoder, a two-layer d -> d MLP trunk and the shared heads."""

    def __init__(self, modality: str, d: int = 64, seed: int = 0, pose_residual: bool = True):
        if modality not in ENCODERS:
            raise UsageError(f"Unknown modality '{modality}' (expected one of {', '.join(C.MODALITIES)})")
        rng = np.random.default_rng(seed)
        self.d = d
        self.modality = modality
        self.pose_residual = pose_residual and modality == "gps"
        self.encoder = ENCODERS[modality](d, rng)
        self.trunk1 = Linear(d, d, rng)
        self.trunk2 = Linear(d, d, rng)
        self.heads = Heads(d, rng)

    def __call__(self, inputs: Mapping[str, np.ndarray]) -> HeadOutputs:
        h = F.relu(self.trunk1(self.encoder(inputs[self.modality])))
        anchor = inputs[POSE_ANCHOR] if self.pose_residual else None
        return self.heads(F.relu(self.trunk2(h)), anchor)


def unimodal_variant(modality: str, d: int = 64, seed: int = 0, pose_residual: bool = True) -> UnimodalNet:
    return UnimodalNet(modality, d, seed, pose_residual)


def build_model(modality: str, d: int = 64, layers: int = 2, heads: int = 4,
                ffn_mult: int = 4, seed: int = 0, pose_residual: bool = True) -> Module:
    if modality == C.FUSION_MODALITY:
        net = FusionNet(d, layers, heads, ffn_mult, seed, pose_residual)
    else:
        net = unimodal_variant(modality, d, seed, pose_residual)
    logger.debug("Built %s network with %d parameters", modality, net.num_parameters())
    return net


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def to_output(heads: HeadOutputs, normalizer: Normalizer) -> ModelOutput:
    """Probabilities and metric pose from raw heads; q is kept inside [Q_EPS, 1 - Q_EPS]."""
    z = heads.beam_logits.data.astype(np.float64)
    v = heads.blk_logit.data.astype(np.float64)
    shifted = np.exp(z - z.max(axis=1, keepdims=True))
    return ModelOutput(
        z=z,
        v=v,
        pose=normalizer.destandardize_pose(heads.pose_std.data),
        pi=shifted / shifted.sum(axis=1, keepdims=True),
        q=np.clip(F.stable_sigmoid(v), Q_EPS, 1.0 - Q_EPS),
    )


def infer(net: Module, inputs: Mapping[str, np.ndarray], normalizer: Normalizer) -> ModelOutput:
    with no_grad():
        return to_output(net(inputs), normalizer)


def decide(output: ModelOutput) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hard decisions: argmax beam (lowest index on ties), blocked iff q >= 0.5, pose in metres."""
    b_hat = np.argmax(output.z, axis=1)
    y_hat = (output.q >= 0.5).astype(np.uint8)
    return b_hat, y_hat, output.pose


def predict(net: Module, inputs: Mapping[str, np.ndarray], normalizer: Normalizer):
    return decide(infer(net, inputs, normalizer))


@dataclass
class SplitData:
    """A split's model inputs, labels and ground truth, row-aligned."""

    indices: np.ndarray
    inputs: Dict[str, np.ndarray]
    b_star: np.ndarray
    y_blk: np.ndarray
    power: np.ndarray
    truth: np.ndarray
    pose_std: np.ndarray
    seq_ids: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def inputs_for(self, rows: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: array[rows] for name, array in self.inputs.items()}


def make_split_data(dataset, labels, indices: np.ndarray, normalizer: Normalizer,
                    dtype=np.float32) -> SplitData:
    indices = np.asarray(indices, dtype=np.int64)
    arrays = {
        "image": dataset.image[indices],
        "lidar": dataset.lidar[indices],
        "radar": dataset.radar[indices],
        "gnss": dataset.gnss[indices],
        "prev_power": dataset.prev_power[indices],
    }
    truth = np.asarray(dataset.truth[indices], dtype=np.float64)
    return SplitData(
        indices=indices,
        inputs=prepare_inputs(arrays, normalizer, dtype),
        b_star=np.asarray(labels.b_star[indices], dtype=np.int64),
        y_blk=np.asarray(labels.y_blk[indices], dtype=np.uint8),
        power=np.asarray(dataset.power[indices], dtype=np.float64),
        truth=truth,
        pose_std=normalizer.standardize_pose(truth).astype(dtype),
        seq_ids=dataset.seq_ids[indices],
        t=np.asarray(dataset.t[indices], dtype=np.int64),
    )
