# Unit tests for the numerics layer including:
# - Gradients of every differentiable op against finite differences
# - Fused losses and their edge cases
# - Graph bookkeeping (accumulation, no_grad, scalar-only backward)
# - AdamW, global-norm clipping and the checkpoint format
# - The portable random generator

import math

import numpy as np
import pytest

from beamfuse.core import functional as F
from beamfuse.core.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from beamfuse.core.errors import ConfigError, DatasetIOError, DataError, NumericError, ShapeError, UsageError
from beamfuse.core.optim import OptimState, adamw_step, clip_global_norm, global_norm
from beamfuse.core.rng import Xoshiro256pp, splitmix64
from beamfuse.core.tensor import Graph, Tensor, no_grad, parameter
from beamfuse.tests.helpers import check_gradients, randn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param64(rng, *shape, scale=1.0):
    return parameter(randn(rng, *shape, scale=scale))


def test_elementwise_and_broadcast_gradients(rng):
    a = param64(rng, 3, 4)
    b = param64(rng, 3, 4)
    bias = param64(rng, 4)
    weight = Tensor(randn(rng, 3, 4))
    check_gradients(lambda: F.sum(F.mul(F.add(F.mul(a, b), bias), weight)), [a, b, bias])
    check_gradients(lambda: F.sum(F.mul(F.sub(a, bias), weight)), [a, bias])
    check_gradients(lambda: F.mean(F.mul(F.add(a, 2.5), 3.0)), [a])


def test_matmul_linear_gradients(rng):
    x = param64(rng, 2, 3, 4)
    w = param64(rng, 4, 5)
    b = param64(rng, 5)
    weight = Tensor(randn(rng, 2, 3, 5))
    check_gradients(lambda: F.sum(F.mul(F.linear(x, w, b), weight)), [x, w, b])
    p = param64(rng, 2, 3, 4)
    q = param64(rng, 2, 4, 2)
    batched_weight = Tensor(randn(rng, 2, 3, 2))
    check_gradients(lambda: F.sum(F.mul(F.matmul(p, q), batched_weight)), [p, q])


def test_activation_gradients(rng):
    values = rng.uniform(0.2, 1.5, size=(3, 5)) * rng.choice([-1.0, 1.0], size=(3, 5))
    x = parameter(values)
    weight = Tensor(randn(rng, 3, 5))
    check_gradients(lambda: F.sum(F.mul(F.relu(x), weight)), [x])
    check_gradients(lambda: F.sum(F.mul(F.sigmoid(x), weight)), [x])


def test_reduction_and_shape_gradients(rng):
    x = param64(rng, 2, 3, 4)
    y = param64(rng, 2, 2, 4)
    weight = Tensor(randn(rng, 4, 3, 2))
    w_feature = Tensor(randn(rng, 4))
    w_rows = Tensor(randn(rng, 2, 4))
    w_flat = Tensor(randn(rng, 2, 20))
    check_gradients(lambda: F.sum(F.mul(F.transpose(x, (2, 1, 0)), weight)), [x])
    check_gradients(lambda: F.sum(F.mul(F.mean(x, axis=(0, 1)), w_feature)), [x])
    check_gradients(lambda: F.sum(F.mul(F.max(x, axis=1), w_rows)), [x])
    check_gradients(lambda: F.sum(F.mul(F.reshape(F.concat([x, y], axis=1), (2, 20)), w_flat)), [x, y])
    check_gradients(lambda: F.sum(F.mul(F.select(x, 1, 2), w_rows)), [x])


def test_softmax_family_gradients(rng):
    z = param64(rng, 4, 6)
    weight = Tensor(randn(rng, 4, 6))
    check_gradients(lambda: F.sum(F.mul(F.softmax(z), weight)), [z])
    check_gradients(lambda: F.sum(F.mul(F.log_softmax(z), weight)), [z])
    target = np.array([0, 5, 2, 2])
    check_gradients(lambda: F.cross_entropy(z, target), [z])


def test_binary_and_regression_loss_gradients(rng):
    v = param64(rng, 6)
    y = np.array([0, 1, 1, 0, 0, 1])
    check_gradients(lambda: F.bce_with_logits(v, y, pos_weight=3.0), [v])
    pred = param64(rng, 5, 2)
    target = randn(rng, 5, 2)
    check_gradients(lambda: F.mse(pred, target), [pred])


def test_float32_gradients_at_coarse_step(rng):
    x = Tensor(rng.uniform(0.5, 1.0, size=(1, 3)).astype(np.float32))
    w = parameter(rng.uniform(-0.1, 0.1, size=(3, 2)).astype(np.float32))
    b = parameter(rng.uniform(-0.05, 0.05, size=2).astype(np.float32))
    target = np.full((1, 2), -1.2, dtype=np.float32)
    check_gradients(lambda: F.mse(F.linear(x, w, b), target), [w, b], tol=1e-3, eps=1e-3)
    z = parameter(np.array([[0.2, -0.3, 0.4]], dtype=np.float32))
    check_gradients(lambda: F.cross_entropy(z, [1]), [z], tol=1e-3, eps=1e-3)
    v = parameter(np.array([0.3, -0.4], dtype=np.float32))
    check_gradients(lambda: F.bce_with_logits(v, [0, 1], pos_weight=2.0), [v], tol=1e-3, eps=1e-3)
    assert w.grad.dtype == np.float32 and z.grad.dtype == np.float32


def test_layer_norm_gradients(rng):
    x = param64(rng, 3, 5, scale=2.0)
    gamma = parameter(rng.uniform(0.5, 1.5, size=5))
    beta = param64(rng, 5)
    weight = Tensor(randn(rng, 3, 5))
    check_gradients(lambda: F.sum(F.mul(F.layer_norm(x, gamma, beta), weight)), [x, gamma, beta])


def test_conv2d_gradients(rng):
    x = param64(rng, 2, 3, 6, 5)
    w = param64(rng, 4, 3, 3, 3, scale=0.5)
    b = param64(rng, 4)
    weight = Tensor(randn(rng, 2, 4, 3, 3))
    check_gradients(lambda: F.sum(F.mul(F.conv2d(x, w, b, stride=2, padding=1), weight)), [x, w, b])


def attention_params(rng, d):
    names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
    return F.AttentionParams(*(param64(rng, d, d, scale=0.4) if n.startswith("w") else param64(rng, d, scale=0.1)
                               for n in names))


def test_attention_gradients(rng):
    params = attention_params(rng, 8)
    x = param64(rng, 2, 3, 8)
    weight = Tensor(randn(rng, 2, 3, 8))
    tensors = [x, params.wq, params.bq, params.wk, params.wv, params.wo, params.bo]
    check_gradients(lambda: F.sum(F.mul(F.multi_head_attention(x, 2, params), weight)), tensors)


def test_attention_is_permutation_equivariant(rng):
    params = attention_params(rng, 8)
    x = Tensor(randn(rng, 4, 8))
    order = np.array([2, 0, 3, 1])
    with no_grad():
        out = F.multi_head_attention(x, 2, params).data
        permuted = F.multi_head_attention(Tensor(x.data[order]), 2, params).data
    np.testing.assert_allclose(permuted, out[order], atol=1e-12)


def test_attention_weights_are_row_stochastic(rng):
    params = attention_params(rng, 8)
    _, weights = F.multi_head_attention(Tensor(randn(rng, 5, 8)), 4, params, return_weights=True)
    assert weights.shape == (1, 4, 5, 5)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_rejects_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        F.multi_head_attention(Tensor(randn(rng, 3, 6)), 4, attention_params(rng, 6))


def test_cross_entropy_of_uniform_logits_is_log_classes():
    loss = F.cross_entropy(Tensor(np.zeros((5, 64))), np.arange(5))
    assert abs(loss.item() - math.log(64)) < 1e-6


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(UsageError):
        F.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])


def test_softmax_is_stable_and_rejects_nan():
    out = F.softmax(Tensor(np.array([[1000.0, 1000.0]])))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])
    with pytest.raises(NumericError):
        F.softmax(Tensor(np.array([[0.0, np.nan]])))


def test_bce_matches_closed_form():
    v = Tensor(np.array([0.0, 2.0]))
    loss = F.bce_with_logits(v, [1, 0], pos_weight=2.0)
    expected = (2.0 * math.log(2.0) + math.log1p(math.exp(2.0))) / 2
    assert abs(loss.item() - expected) < 1e-9
    with pytest.raises(DataError):
        F.bce_with_logits(v, [0.5, 1])


def test_shape_mismatches_raise():
    with pytest.raises(ShapeError):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 1, 3, 3))), None)


def test_gradients_accumulate_over_reuse():
    x = parameter(np.array([1.5, -2.0]))
    F.sum(F.add(F.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_requires_scalar_with_graph():
    x = parameter(np.ones(3))
    with pytest.raises(UsageError):
        F.mul(x, 2.0).backward()
    with pytest.raises(UsageError):
        F.sum(Tensor(np.ones(3))).backward()


def test_no_grad_records_nothing():
    x = parameter(np.ones(3))
    with no_grad():
        y = F.sum(F.mul(x, 2.0))
    assert y.node is None and not y.requires_grad
    z = F.sum(F.mul(x, 2.0))
    assert len(Graph.from_output(z)) == 3


def test_tensor_defaults_to_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


def test_adamw_first_step_moves_by_learning_rate():
    p = parameter(np.array([1.0, -1.0, 0.5]))
    state = OptimState.create({"p": p}, lr=0.1, weight_decay=0.0)
    adamw_step({"p": p}, {"p": np.array([0.3, -2.0, 0.0])}, state)
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.5], atol=1e-6)
    assert state.step == 1


def test_adamw_decay_is_decoupled():
    p = parameter(np.array([2.0]))
    state = OptimState.create({"p": p}, lr=0.1, weight_decay=0.5)
    adamw_step({"p": p}, {"p": None}, state)
    np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])


def test_zero_learning_rate_keeps_parameters():
    p = parameter(np.array([0.25, -3.0]))
    state = OptimState.create({"p": p}, lr=0.0)
    adamw_step({"p": p}, {"p": np.array([1.0, 1.0])}, state)
    np.testing.assert_array_equal(p.data, [0.25, -3.0])


def test_clip_global_norm(rng):
    grads = {"a": randn(rng, 10) * 5, "b": randn(rng, 3, 3) * 5, "c": None}
    before = {k: None if v is None else np.abs(v).copy() for k, v in grads.items()}
    scale = clip_global_norm(grads, 1.0)
    assert scale < 1.0
    assert global_norm(grads) <= 1.0 + 1e-6
    for key in ("a", "b"):
        assert np.all(np.abs(grads[key]) <= before[key] + 1e-12)
    small = {"a": np.array([0.1, 0.2])}
    assert clip_global_norm(small, 1.0) == 1.0
    np.testing.assert_array_equal(small["a"], [0.1, 0.2])
    with pytest.raises(UsageError):
        clip_global_norm(small, 0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"enc.weight": randn(rng, 3, 4).astype(np.float32), "scalar": np.array(1.5, dtype=np.float32)}
    path = str(tmp_path / "model.bfck")
    payload = save_checkpoint(path, params)
    assert payload.startswith(b"BFCK1")
    loaded = load_checkpoint(path)
    assert list(loaded) == list(params)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])
    assert encode_checkpoint(loaded) == payload


def test_checkpoint_rejects_corruption():
    payload = encode_checkpoint({"w": np.ones((2, 2), dtype=np.float32)})
    with pytest.raises(DatasetIOError):
        decode_checkpoint(b"XXXXX" + payload[5:])
    with pytest.raises(DatasetIOError):
        decode_checkpoint(payload[:-3])
    with pytest.raises(DatasetIOError):
        decode_checkpoint(payload + b"\x00")


def test_splitmix_reference_value():
    _, value = splitmix64(0)
    assert value == 0xE220A8397B1DCDAF


def test_generator_is_deterministic_and_bounded():
    a = Xoshiro256pp.for_stream(42, 1)
    b = Xoshiro256pp.for_stream(42, 1)
    c = Xoshiro256pp.for_stream(42, 2)
    first = [a.next_u64() for _ in range(5)]
    assert first == [b.next_u64() for _ in range(5)]
    assert first != [c.next_u64() for _ in range(5)]
    draws = [a.random() for _ in range(1000)]
    assert min(draws) >= 0.0 and max(draws) < 1.0
    assert all(0 <= a.integer(7) < 7 for _ in range(200))


def test_generator_normals_have_unit_scale():
    values = Xoshiro256pp(9).normals(4000)
    assert abs(values.mean()) < 0.1
    assert abs(values.std() - 1.0) < 0.1


def test_shuffle_is_a_permutation():
    items = list(range(20))
    Xoshiro256pp(3).shuffle(items)
    assert sorted(items) == list(range(20))
    assert items != list(range(20))
