import gc

import numpy as np
import pytest

from transamba.core.functional import (
    binary_cross_entropy_with_logits,
    conv1d_causal,
    conv2d,
    gelu,
    layer_norm,
    softmax,
)
from transamba.core.gradcheck import gradcheck
from transamba.core.tensor import (
    AllocationTracker,
    Tensor,
    concat,
    matmul,
    no_grad,
    stack,
    take_along_axis,
    use_dtype,
)

TOL = 1e-5


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def weighted_sum(out, rng):
    # random fixed projection makes every output entry matter
    w = Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


def test_matmul_examples():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    col = Tensor([[3.0], [4.0]])
    assert np.array_equal(matmul(eye, col).data, [[3.0], [4.0]])
    assert matmul(Tensor([[1.0, 2.0]]), col).item() == 11.0


def test_matmul_matches_triple_loop(rng, f64):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.allclose((Tensor(a) @ Tensor(b)).data, expected, rtol=1e-12, atol=1e-12)


def test_matmul_shape_mismatch_is_descriptive():
    with pytest.raises(ValueError, match="inner extents 3 != 4"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_softmax_examples(f64):
    assert np.allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    assert np.allclose(softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    assert np.allclose(softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75])


def test_softmax_rows_sum_to_one(rng):
    out = softmax(Tensor(rng.normal(scale=5.0, size=(7, 11))), axis=-1).data
    assert np.all(out > 0)
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_backward_examples(f64):
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    y = Tensor([2.0, -1.0], requires_grad=True)
    (y * y).sum().backward()
    assert np.array_equal(y.grad, [4.0, -2.0])


def test_backward_needs_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_backward_consumes_graph_unless_retained(f64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward(retain_graph=True)
    loss.backward()
    # leaf gradients accumulate across the two passes
    assert np.array_equal(x.grad, [4.0, 8.0])
    with pytest.raises(RuntimeError, match="consumed"):
        loss.backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y.is_leaf


def test_use_dtype_rejects_other_types():
    with pytest.raises(ValueError):
        with use_dtype(np.int32):
            pass


def test_use_dtype_selects_parameter_precision():
    assert Tensor([1.0]).dtype == np.float32
    with use_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_reshape_transpose_round_trip_is_bit_exact(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    y = x.transpose(2, 0, 3, 1).reshape(4, 30).reshape(4, 2, 5, 3).transpose(1, 3, 0, 2)
    assert np.array_equal(y.data, x.data)


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: a / (b * b + 1.0),
    ],
)
def test_binary_ops_gradcheck_with_broadcasting(op, rng, f64):
    a = leaf(rng, 3, 4)
    b = leaf(rng, 1, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    errors = gradcheck(lambda: (op(a, b) * w).sum(), {"a": a, "b": b})
    assert max(errors.values()) < TOL


@pytest.mark.parametrize(
    "op",
    [
        lambda x: x.exp(),
        lambda x: x.sigmoid(),
        lambda x: x.silu(),
        lambda x: x.softplus(),
        lambda x: gelu(x),
        lambda x: (x * x + 1.0).log(),
        lambda x: (x * x + 1.0) ** -0.5,
        lambda x: softmax(x, axis=-1),
    ],
)
def test_elementwise_gradcheck(op, rng, f64):
    x = leaf(rng, 3, 5)
    w = Tensor(rng.normal(size=(3, 5)))
    assert gradcheck(lambda: (op(x) * w).sum(), [x])["0"] < TOL


@pytest.mark.parametrize(
    "op",
    [
        lambda x, y: x + y,
        lambda x, y: x - y,
        lambda x, y: x * y,
        lambda x, y: x / (y * y + 1.0),
        lambda x, y: x.exp() * y,
        lambda x, y: x.sigmoid() + y.softplus(),
        lambda x, y: x.silu() * gelu(y),
        lambda x, y: (x * x + 1.0).log() + (y * y + 1.0) ** -0.5,
    ],
)
def test_gradcheck_every_entry(op, rng, f64):
    # inputs and weights kept positive so no true gradient entry is near zero
    a = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, size=(1, 4)), requires_grad=True)
    w = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
    errors = gradcheck(lambda: (op(a, b) * w).sum(), {"a": a, "b": b}, per_entry=True)
    assert max(errors.values()) < TOL


def test_per_entry_error_sees_small_gradients(f64):
    # d/dx x^3 by central difference is 3x^2 + h^2
    x = Tensor([1.0, 1e-3], requires_grad=True)
    whole = gradcheck(lambda: (x * x * x).sum(), [x])["0"]
    entry = gradcheck(lambda: (x * x * x).sum(), [x], per_entry=True)["0"]
    assert whole == pytest.approx(1e-6 / 3, rel=1e-3)
    assert entry == pytest.approx(1e-6 / 4e-6, rel=1e-2)


def test_shape_ops_gradcheck(rng, f64):
    x = leaf(rng, 2, 3, 4)
    y = leaf(rng, 2, 3, 4)
    w = Tensor(rng.normal(size=(2, 6, 4)))

    def fn():
        mixed = concat([x.transpose(0, 2, 1).reshape(2, 3, 4), y[:, ::-1, :]], axis=1)
        return (mixed * w).sum() + stack([x, y], axis=1)[:, 1, 0, :].mean() + x.flip(2).swapaxes(0, 1).sum()

    errors = gradcheck(fn, {"x": x, "y": y})
    assert max(errors.values()) < TOL


def test_take_along_axis_and_expand_gradcheck(rng, f64):
    x = leaf(rng, 3, 5)
    order = np.argsort(rng.normal(size=(3, 5)), axis=-1)
    c = leaf(rng, 1, 1, 4)
    w = Tensor(rng.normal(size=(3, 5)))
    v = Tensor(rng.normal(size=(2, 3, 4)))
    errors = gradcheck(
        lambda: (take_along_axis(x, order, axis=-1) * w).sum() + (c.expand(2, 3, 4) * v).sum(),
        {"x": x, "c": c},
    )
    assert max(errors.values()) < TOL


def test_layer_norm_gradcheck(rng, f64):
    x = leaf(rng, 4, 6)
    weight = leaf(rng, 6)
    bias = leaf(rng, 6)
    errors = gradcheck(lambda: weighted_sum(layer_norm(x, weight, bias), np.random.default_rng(0)), [x, weight, bias])
    assert max(errors.values()) < TOL


def test_conv1d_causal_gradcheck_and_causality(rng, f64):
    x = leaf(rng, 2, 6, 3)
    weight = leaf(rng, 3, 4)
    bias = leaf(rng, 3)
    errors = gradcheck(lambda: weighted_sum(conv1d_causal(x, weight, bias), np.random.default_rng(1)), [x, weight, bias])
    assert max(errors.values()) < TOL

    base = conv1d_causal(x, weight, bias).data
    bumped = x.data.copy()
    bumped[:, 3, :] += 1.0
    out = conv1d_causal(Tensor(bumped), weight, bias).data
    assert np.array_equal(out[:, :3], base[:, :3])
    assert not np.allclose(out[:, 3:], base[:, 3:])


def test_conv2d_gradcheck_and_same_padding(rng, f64):
    x = leaf(rng, 2, 3, 4, 4)
    weight = leaf(rng, 1, 3, 3, 3)
    bias = leaf(rng, 1)
    assert conv2d(x, weight, bias).shape == (2, 1, 4, 4)
    errors = gradcheck(lambda: weighted_sum(conv2d(x, weight, bias), np.random.default_rng(2)), [x, weight, bias])
    assert max(errors.values()) < TOL


def test_conv2d_matches_direct_loop(rng, f64):
    x = rng.normal(size=(1, 2, 3, 3))
    w = rng.normal(size=(1, 2, 3, 3))
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 1, 3, 3))
    for i in range(3):
        for j in range(3):
            expected[0, 0, i, j] = (padded[0, :, i : i + 3, j : j + 3] * w[0]).sum()
    assert np.allclose(conv2d(Tensor(x), Tensor(w)).data, expected)


def test_bce_with_logits_examples(f64):
    zero = Tensor([0.0])
    assert binary_cross_entropy_with_logits(zero, np.array([1.0])).item() == pytest.approx(np.log(2.0))
    weighted = binary_cross_entropy_with_logits(zero, np.array([1.0]), pos_weight=3.0)
    assert weighted.item() == pytest.approx(3.0 * np.log(2.0))


def test_bce_rejects_non_binary_labels():
    from transamba.core.errors import DataError

    with pytest.raises(DataError):
        binary_cross_entropy_with_logits(Tensor([0.0, 1.0]), np.array([0.0, 2.0]))


def test_allocation_tracker_returns_to_baseline():
    with AllocationTracker() as tracker:
        a = Tensor(np.zeros((100, 10)))
        b = a + a
        assert tracker.live_bytes == 2 * a.data.nbytes
        del a, b
        gc.collect()
    assert tracker.live_bytes == 0
    assert tracker.peak_bytes == 2 * 100 * 10 * 4


def test_allocation_tracker_peak_is_monotone():
    peaks = []
    with AllocationTracker() as tracker:
        for size in (10, 1000, 10):
            t = Tensor(np.zeros(size))
            peaks.append(tracker.peak_bytes)
            assert tracker.peak_bytes >= tracker.live_bytes
            del t
    assert peaks == sorted(peaks)
