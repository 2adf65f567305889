# Differentiable operations on Tensors.
#
# Broadcasting is limited to a python scalar or a trailing vector applied
# over leading dimensions (bias-add, per-feature scale); anything else is a
# ShapeError. Loss reductions accumulate in float64 and return a scalar
# of the input dtype.

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from beamfuse.core.errors import ConfigError, DataError, NumericError, ShapeError, UsageError
from beamfuse.core.tensor import Tensor, record

Operand = Union[Tensor, float, int]

LAYER_NORM_EPS = 1e-5


def _check_finite(op: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{op}: non-finite input")


def _reduce_trailing(grad: np.ndarray, width: int) -> np.ndarray:
    return grad.reshape(-1, width).sum(axis=0)


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "trailing"
    raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        value = float(b)
        return record(a.data + np.asarray(value, dtype=a.dtype), (a,), "add_scalar", lambda g: (g,))
    kind = _broadcast_kind("add", a, b)

    def backward(g):
        gb = g if kind == "same" else _reduce_trailing(g, b.shape[0])
        return g, gb

    return record(a.data + b.data, (a, b), "add", backward)


def sub(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    kind = _broadcast_kind("sub", a, b)

    def backward(g):
        gb = -g if kind == "same" else -_reduce_trailing(g, b.shape[0])
        return g, gb

    return record(a.data - b.data, (a, b), "sub", backward)


def mul(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        value = np.asarray(float(b), dtype=a.dtype)
        return record(a.data * value, (a,), "mul_scalar", lambda g: (g * value,))
    kind = _broadcast_kind("mul", a, b)

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        if kind == "trailing":
            gb = _reduce_trailing(gb, b.shape[0])
        return ga, gb

    return record(a.data * b.data, (a, b), "mul", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a may carry leading batch dims against a 2-D b, or both share them."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", "rank >= 2", (a.shape, b.shape))
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            raise ShapeError("matmul", f"(..., {b.shape[0]})", a.shape)
        k, n = b.shape

        def backward(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

        return record(a.data @ b.data, (a, b), "matmul", backward)
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward_batched(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return record(a.data @ b.data, (a, b), "bmm", backward_batched)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: (g * mask,))


def stable_sigmoid(values: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = stable_sigmoid(x.data).astype(x.dtype)
    return record(out, (x,), "sigmoid", lambda g: (g * out * (1 - out),))


def _axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record(np.asarray(out, dtype=x.dtype), (x,), "sum", backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def max(x: Tensor, axis: int) -> Tensor:  # noqa: A001 - mirrors numpy
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return record(out, (x,), "max", backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return record(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(x.data.transpose(axes)), (x,), "transpose",
                  lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Take one slice along an axis, dropping that axis."""
    axis = axis % x.ndim

    def backward(g):
        grad = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return record(np.ascontiguousarray(np.take(x.data, index, axis=axis)), (x,), "select", backward)


def softmax(z: Tensor) -> Tensor:
    """Softmax over the last dimension, stabilised by max-subtraction."""
    if z.ndim < 1 or z.shape[-1] < 1:
        raise ShapeError("softmax", "(..., B>=1)", z.shape)
    _check_finite("softmax", z.data)
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=-1, keepdims=True)).astype(z.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record(out, (z,), "softmax", backward)


def log_softmax(z: Tensor) -> Tensor:
    _check_finite("log_softmax", z.data)
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = (shifted - lse).astype(z.dtype)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return record(out, (z,), "log_softmax", backward)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over rows of -log softmax(logits)[target], via a fused log-sum-exp."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy", "(N, B)", logits.shape)
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    n, classes = logits.shape
    if target.shape[0] != n:
        raise ShapeError("cross_entropy", (n,), target.shape)
    if np.any(target < 0) or np.any(target >= classes):
        raise UsageError(f"cross_entropy: target index outside [0, {classes})")
    _check_finite("cross_entropy", logits.data)
    z = logits.data.astype(np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - shifted[rows, target])
    probs = np.exp(shifted - lse[:, None])

    def backward(g):
        grad = probs.copy()
        grad[rows, target] -= 1.0
        return ((grad * (float(g) / n)).astype(logits.dtype),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), "cross_entropy", backward)


def bce_with_logits(v: Tensor, y, pos_weight: float = 1.0) -> Tensor:
    """Mean of w_t * BCE(sigmoid(v_t), y_t) with w_t = pos_weight for positives."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if v.data.reshape(-1).shape != y.shape:
        raise ShapeError("bce_with_logits", y.shape, v.shape)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("bce_with_logits: targets must be 0 or 1")
    if pos_weight <= 0:
        raise UsageError("bce_with_logits: pos_weight must be positive")
    _check_finite("bce_with_logits", v.data)
    logits = v.data.astype(np.float64).reshape(-1)
    weights = np.where(y == 1, pos_weight, 1.0)
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    loss = np.mean(weights * (softplus - y * logits))
    n = y.shape[0]

    def backward(g):
        grad = weights * (stable_sigmoid(logits) - y) * (float(g) / n)
        return (grad.reshape(v.shape).astype(v.dtype),)

    return record(np.asarray(loss, dtype=v.dtype), (v,), "bce_with_logits", backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    target_tensor = target if isinstance(target, Tensor) else None
    target_data = target.data if target_tensor is not None else np.asarray(target)
    if pred.shape != target_data.shape:
        raise ShapeError("mse", pred.shape, target_data.shape)
    diff = pred.data.astype(np.float64) - target_data.astype(np.float64)
    loss = np.mean(diff * diff)
    n = diff.size

    def backward(g):
        grad = 2.0 * diff * (float(g) / n)
        return (grad.astype(pred.dtype), None if target_tensor is None else (-grad).astype(target_data.dtype))

    inputs = (pred,) if target_tensor is None else (pred, target_tensor)
    return record(np.asarray(loss, dtype=pred.dtype), inputs, "mse", lambda g: backward(g)[:len(inputs)])


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last dimension to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", (d,), (gamma.shape, beta.shape))
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    x_hat = centred * inv_std
    out = x_hat * gamma.data + beta.data

    def backward(g):
        g_hat = g * gamma.data
        gx = inv_std / d * (
            d * g_hat
            - g_hat.sum(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return gx, _reduce_trailing(g * x_hat, d), _reduce_trailing(g, d)

    return record(out.astype(x.dtype), (x, gamma, beta), "layer_norm", backward)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over (N, C, H, W) inputs via an im2col product."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", f"(N, {weight.shape[1] if weight.ndim == 4 else '?'}, H, W)", x.shape)
    n, c, h, w = x.shape
    out_c, _, kh, kw = weight.shape
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError("conv2d", (out_c,), bias.shape)
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d", "input larger than kernel", x.shape)
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : stride * out_h : stride, : stride * out_w : stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    flat_w = weight.data.reshape(out_c, -1)
    out = cols @ flat_w.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, out_h, out_w, out_c).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, out_c)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ flat_w).reshape(n, out_h, out_w, c, kh, kw)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gpad[:, :, padding : padding + h, padding : padding + w]
        grads: List[Optional[np.ndarray]] = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, "conv2d", backward)


@dataclass
class AttentionParams:
    """Projection weights of one multi-head self-attention block (x @ W + b)."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def multi_head_attention(x: Tensor, heads: int, params: AttentionParams,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over (L, d) or (N, L, d) inputs.

    No positional information is added here, so the op is permutation
    equivariant over tokens.
    """
    if x.ndim not in (2, 3):
        raise ShapeError("multi_head_attention", "(L, d) or (N, L, d)", x.shape)
    unbatched = x.ndim == 2
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    n, length, d = x.shape
    if heads < 1 or d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads", "heads")
    if length < 1:
        raise ShapeError("multi_head_attention", "L >= 1", x.shape)
    head_dim = d // heads

    def split_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (n, length, heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(linear(x, params.wq, params.bq))
    k = split_heads(linear(x, params.wk, params.bk))
    v = split_heads(linear(x, params.wv, params.bv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    weights = softmax(scores)
    context = transpose(matmul(weights, v), (0, 2, 1, 3))
    out = linear(reshape(context, (n, length, d)), params.wo, params.bo)
    if unbatched:
        out = reshape(out, (length, d))
    if return_weights:
        return out, weights
    return out
