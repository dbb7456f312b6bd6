import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axialhc import tensorcore as tc
from axialhc.errors import ContractError, DimensionError
from axialhc.tensorcore import Tensor

from oracles import affine_loops, conv_loops, gradient_errors


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# -- conv2d ---------------------------------------------------------------------
def test_conv_pointwise_scaling():
    out = tc.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
    assert out.shape == (1, 1, 3, 3)
    assert np.all(out.data == 2.0)


def test_conv_full_window_sum():
    x = np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3)
    out = tc.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 45.0


def test_conv_matches_nested_loops(f64, rng):
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    got = tc.conv2d(Tensor(x), Tensor(k), (2, 2), (1, 1)).data
    assert np.max(np.abs(got - conv_loops(x, k, (2, 2), (1, 1)))) <= 1e-12


@pytest.mark.parametrize("kernel,stride,pad", [((3, 1), (2, 1), (1, 0)), ((1, 3), (1, 2), (0, 1)),
                                               ((1, 1), (2, 2), (0, 0)), ((2, 3), (1, 3), (2, 1))])
def test_conv_asymmetric_shapes_match_loops(f64, rng, kernel, stride, pad):
    x = rng.standard_normal((2, 2, 7, 6))
    k = rng.standard_normal((3, 2) + kernel)
    got = tc.conv2d(Tensor(x), Tensor(k), stride, pad).data
    assert np.max(np.abs(got - conv_loops(x, k, stride, pad))) <= 1e-12


def test_conv_reference_matches_loops(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    k = rng.standard_normal((2, 2, 3, 3))
    assert np.allclose(tc.conv2d_reference(x, k, (1, 2), (1, 1)), conv_loops(x, k, (1, 2), (1, 1)), atol=1e-12)


def test_conv_errors():
    with pytest.raises(DimensionError):
        tc.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(DimensionError):
        tc.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))), padding=(1, 1))
    with pytest.raises(ContractError):
        tc.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 1, 1))), stride=(0, 1))


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), kh=st.integers(1, 3), kw=st.integers(1, 3),
       sh=st.integers(1, 3), sw=st.integers(1, 3), ph=st.integers(0, 2), pw=st.integers(0, 2))
def test_conv_output_size(h, w, kh, kw, sh, sw, ph, pw):
    if kh > h + 2 * ph or kw > w + 2 * pw:
        return
    out = tc.conv2d(Tensor(np.ones((1, 1, h, w))), Tensor(np.ones((1, 1, kh, kw))), (sh, sw), (ph, pw))
    assert out.shape == (1, 1, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_conv_linearity(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 2, 2, 6, 6))
    k = Tensor(r.standard_normal((3, 2, 3, 3)))
    lhs = tc.conv2d(Tensor(a * x + b * y), k, (1, 1), (1, 1)).data
    rhs = a * tc.conv2d(Tensor(x), k, (1, 1), (1, 1)).data + b * tc.conv2d(Tensor(y), k, (1, 1), (1, 1)).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


# -- affine ---------------------------------------------------------------------
def test_affine_identity():
    out = tc.matmul_affine(Tensor(np.array([[3.0, 4.0]])), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert out.data.tolist() == [[3.0, 4.0]]


def test_affine_hand_arithmetic():
    out = tc.matmul_affine(Tensor(np.array([[2.0, 3.0]])), Tensor(np.array([[1.0, 1.0], [1.0, -1.0]])),
                           Tensor(np.array([1.0, 0.0])))
    assert out.data.tolist() == [[6.0, -1.0]]


def test_affine_matches_loops(f64, rng):
    w, x, b = rng.standard_normal((5, 7)), rng.standard_normal((3, 7)), rng.standard_normal(5)
    got = tc.matmul_affine(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.max(np.abs(got - affine_loops(x, w, b))) <= 1e-12
    assert np.allclose(tc.affine_reference(x, w, b), got, atol=1e-12)


def test_affine_dimension_error():
    with pytest.raises(DimensionError):
        tc.matmul_affine(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(4)))


# -- backward -------------------------------------------------------------------
def test_backward_of_sum_is_ones():
    x = leaf(np.random.default_rng(0).standard_normal((2, 3, 4)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_of_square():
    x = leaf([1.0, 2.0, 3.0])
    (x * x).sum().backward()
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        (x * x).backward()


def test_backward_accumulates_and_is_deterministic(f64, rng):
    x = leaf(rng.standard_normal((2, 2, 5, 5)))
    k = leaf(rng.standard_normal((3, 2, 3, 3)))

    def loss():
        return tc.relu(tc.conv2d(x, k, (1, 1), (1, 1))).sum()

    loss().backward()
    first = (x.grad.copy(), k.grad.copy())
    loss().backward()
    assert np.allclose(x.grad, 2 * first[0]) and np.allclose(k.grad, 2 * first[1])
    x.zero_grad()
    k.zero_grad()
    loss().backward()
    assert np.array_equal(x.grad, first[0]) and np.array_equal(k.grad, first[1])


def test_shared_subgraph_visited_once(f64):
    x = leaf([1.0, 2.0])
    y = x * x
    z = (y + y).sum()  # y feeds two edges of the same node
    order = tc.topological_order(z)
    ids = [id(t) for t in order]
    assert len(ids) == len(set(ids))
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            assert pos[id(p)] < pos[id(t)]
    z.backward()
    assert x.grad.tolist() == [4.0, 8.0]


def test_reshape_preserves_size():
    x = Tensor(np.arange(12.0))
    assert x.reshape(3, 4).shape == (3, 4)
    with pytest.raises(ValueError):
        x.reshape(5, 3)


# -- pointwise suite ------------------------------------------------------------
def test_relu():
    assert tc.relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data.tolist() == [0.0, 0.0, 2.0]


def _bn(x, training=True):
    c = x.shape[1]
    return tc.batchnorm(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c)), np.zeros(c), np.ones(c), training)


def test_batchnorm_constant_channel_is_zero():
    out = _bn(np.full((4, 2, 3, 3), 7.5))
    assert np.all(out.data == 0.0)


def test_batchnorm_normalizes_batch(f64, rng):
    x = 3.0 + 2.0 * rng.standard_normal((8, 3, 4, 4))
    out = _bn(x).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batchnorm_running_stats_and_eval(f64, rng):
    x = 1.0 + rng.standard_normal((6, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    tc.batchnorm(Tensor(x), g, b, rm, rv, True, momentum=0.1)
    count = 6 * 9
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1))
    out = tc.batchnorm(Tensor(x), g, b, rm, rv, False).data
    assert np.allclose(out, (x - rm.reshape(1, -1, 1, 1)) / np.sqrt(rv.reshape(1, -1, 1, 1) + 1e-5))


def test_batchnorm_errors():
    with pytest.raises(ContractError):
        _bn(np.zeros((0, 2, 3, 3)))
    with pytest.raises(ContractError):
        tc.batchnorm(Tensor(np.ones((2, 1, 2, 2))), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                     np.zeros(1), np.ones(1), True, eps=0.0)


def test_cross_entropy_of_uniform_logits():
    loss = tc.softmax_cross_entropy(Tensor(np.zeros((5, 10))), np.arange(5))
    assert loss.data.item() == pytest.approx(math.log(10), abs=1e-6)
    assert loss.data.item() == pytest.approx(2.302585, abs=1e-6)


def test_global_avg_pool():
    x = np.arange(2 * 3 * 4 * 4, dtype=float).reshape(2, 3, 4, 4)
    out = tc.global_avg_pool(Tensor(x))
    assert out.shape == (2, 3)
    assert np.allclose(out.data, x.mean(axis=(2, 3)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.01, 50.0))
def test_softmax_rows_and_cross_entropy_sign(seed, scale):
    r = np.random.default_rng(seed)
    logits = scale * r.standard_normal((4, 7))
    assert np.max(np.abs(tc.softmax(logits).sum(axis=1) - 1.0)) <= 1e-12
    loss = tc.softmax_cross_entropy(Tensor(logits), r.integers(0, 7, 4))
    assert loss.data.item() >= 0.0


# -- gradient checks ------------------------------------------------------------
def _assert_grads(loss_fn, tensors, rng, tol=1e-4):
    errors = gradient_errors(loss_fn, tensors, rng)
    assert max(errors) <= tol, f"max relative error {max(errors):.3g}"


@pytest.mark.parametrize("stride,pad", [((1, 1), (1, 1)), ((2, 2), (1, 1)), ((2, 1), (0, 1))])
def test_grad_conv2d(f64, rng, stride, pad):
    x, k = leaf(rng.standard_normal((2, 3, 6, 6))), leaf(rng.standard_normal((4, 3, 3, 3)))
    proj = rng.standard_normal(tc.conv2d(x, k, stride, pad).shape)
    _assert_grads(lambda: (tc.conv2d(x, k, stride, pad) * Tensor(proj)).sum(), [x, k], rng)


def test_grad_affine(f64, rng):
    x, w, b = leaf(rng.standard_normal((3, 5))), leaf(rng.standard_normal((4, 5))), leaf(rng.standard_normal(4))
    proj = Tensor(rng.standard_normal((3, 4)))
    _assert_grads(lambda: (tc.matmul_affine(x, w, b) * proj).sum(), [x, w, b], rng)


@pytest.mark.parametrize("training", [True, False])
def test_grad_batchnorm(f64, rng, training):
    x = leaf(rng.standard_normal((4, 3, 3, 3)))
    g, b = leaf(rng.uniform(0.5, 1.5, 3)), leaf(rng.standard_normal(3))
    rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
    proj = Tensor(rng.standard_normal(x.shape))

    def loss():
        # copies keep the running statistics fixed across finite-difference probes
        return (tc.batchnorm(x, g, b, rm.copy(), rv.copy(), training) * proj).sum()

    _assert_grads(loss, [x, g, b], rng)


def test_grad_relu_pool_and_cross_entropy(f64, rng):
    x = rng.standard_normal((3, 4, 3, 3))
    x[np.abs(x) < 1e-2] = 0.5  # keep away from the kink
    x = leaf(x)
    labels = np.array([0, 3, 1])
    _assert_grads(lambda: tc.softmax_cross_entropy(tc.global_avg_pool(tc.relu(x)), labels), [x], rng)


def test_grad_generic_ops(f64, rng):
    a, b = leaf(rng.standard_normal((2, 3))), leaf(rng.standard_normal((3,)))
    c = leaf(rng.standard_normal((3, 2, 4)))

    def loss():
        s = tc.stack([a * b, a + b], axis=0)  # broadcast in both ops
        e = tc.einsum("kij,jbl->kibl", s, c)
        cat = tc.concat([tc.reshape(e, (2, -1)), tc.transpose(tc.reshape(a, (3, 2)))], axis=1)
        return (cat * cat).mean() - tc.neg(tc.matmul(a, tc.reshape(b, (3, 1)))).sum()

    _assert_grads(loss, [a, b, c], rng)


# -- precision and instrumentation ------------------------------------------------
def test_default_precision_is_32_bit():
    assert tc.get_default_dtype() == np.float32
    assert Tensor(np.array([1, 2])).dtype == np.float32
    with tc.precision(np.float64):
        assert Tensor(np.array([1, 2])).dtype == np.float64
    assert tc.get_default_dtype() == np.float32


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with tc.no_grad():
        y = x * x
    assert not y.requires_grad


def test_op_counter_counts_conv_macs(rng):
    x, k = Tensor(rng.standard_normal((1, 2, 5, 5))), Tensor(rng.standard_normal((3, 2, 3, 3)))
    with tc.count_ops() as counter:
        out = tc.conv2d(x, k, (1, 1), (1, 1))
    assert counter.macs == 5 * 5 * 3 * 2 * 3 * 3
    assert np.allclose(out.data, conv_loops(x.data, k.data, (1, 1), (1, 1)), atol=1e-5)
