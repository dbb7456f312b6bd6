import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axialhc import hyperalgebra as ha
from axialhc import tensorcore as tc
from axialhc.errors import ConfigurationError
from axialhc.layers import PHMDense, QConv2d, VConv2d
from axialhc.tensorcore import Tensor

from oracles import conv_windows, hamilton, phm_loops

finite = st.floats(-10, 10, allow_nan=False)
quats = st.tuples(finite, finite, finite, finite).map(lambda c: ha.Quaternion(*c))

ONE, I, J, K = (ha.Quaternion(*row) for row in np.eye(4))


# -- Hamilton product -----------------------------------------------------------
@given(quats)
def test_real_unit_is_identity(q):
    assert ONE * q == q


def test_unit_relations():
    assert I * J == K and J * K == I and K * I == J
    assert J * I == ha.Quaternion(0, 0, 0, -1)
    for u in (I, J, K):
        assert u * u == ha.Quaternion(-1, 0, 0, 0)


@settings(max_examples=200)
@given(quats, quats)
def test_norm_is_multiplicative(p, q):
    assert abs((p * q).norm() - p.norm() * q.norm()) <= 1e-10 * max(1.0, p.norm() * q.norm())


@settings(max_examples=100)
@given(quats, quats)
def test_product_matches_independent_formula(p, q):
    assert np.allclose((p * q).as_array(), hamilton(p.as_array(), q.as_array()), atol=1e-10)


def test_product_is_associative(rng):
    for _ in range(100):
        p, q, r = (ha.Quaternion(*rng.standard_normal(4)) for _ in range(3))
        assert np.allclose(((p * q) * r).as_array(), (p * (q * r)).as_array(), atol=1e-10)


# -- quaternion weight matrix -------------------------------------------------------
def test_structure_reads_off_the_four_output_rows():
    # rows are outputs (r, i, j, k), columns inputs (r, i, j, k); entry names the filter and sign
    rows = [["+r", "-i", "-j", "-k"],
            ["+i", "+r", "+k", "-j"],
            ["+j", "-k", "+r", "+i"],
            ["+k", "+j", "-i", "+r"]]
    comp = {"r": 0, "i": 1, "j": 2, "k": 3}
    expected = np.zeros((4, 4, 4))
    for a, row in enumerate(rows):
        for b, entry in enumerate(row):
            expected[comp[entry[1]], a, b] = 1.0 if entry[0] == "+" else -1.0
    assert np.array_equal(ha.QUATERNION_STRUCTURE, expected)


def _delta(shape):
    k = np.zeros(shape)
    k[..., 0, 0] = 1.0
    return k


def test_real_identity_kernel_gives_identity():
    z = np.zeros((2, 2, 1, 1))
    w = ha.quaternion_weight_matrix(ha.QuaternionKernel(np.eye(2).reshape(2, 2, 1, 1), z, z, z))
    assert np.array_equal(w[:, :, 0, 0], np.eye(8))


def test_i_kernel_maps_pure_j_input_to_negative_k():
    z = np.zeros((1, 1, 1, 1))
    w = ha.quaternion_weight_matrix(ha.QuaternionKernel(z, _delta((1, 1, 1, 1)), z, z))[:, :, 0, 0]
    x = np.array([0.0, 0.0, 1.0, 0.0])  # pure j
    assert np.array_equal(w @ x, [0.0, 0.0, 0.0, -1.0])


def _quaternion_conv_terms(x, kernels, pad):
    """Output rows of the quaternion convolution, sixteen real convolutions written one by one."""
    mr, mi, mj, mk = (x[:, c::4] for c in range(4))
    fr, fi, fj, fk = kernels
    c = lambda m, f: conv_windows(m, f, pad)  # noqa: E731
    rows = [
        c(mr, fr) - c(mi, fi) - c(mj, fj) - c(mk, fk),
        c(mi, fr) + c(mr, fi) + c(mj, fk) - c(mk, fj),
        c(mj, fr) + c(mr, fj) + c(mk, fi) - c(mi, fk),
        c(mk, fr) + c(mr, fk) + c(mi, fj) - c(mj, fi),
    ]
    n, g, h, w = rows[0].shape
    return np.stack(rows, axis=2).reshape(n, 4 * g, h, w)


def test_quaternion_conv_equals_term_expansion(f64, rng):
    worst = 0.0
    for trial in range(100):
        cin, cout = 4 * int(rng.integers(1, 3)), 4 * int(rng.integers(1, 3))
        kernel = [(3, 3), (1, 1), (3, 1)][trial % 3]
        pad = (kernel[0] // 2, kernel[1] // 2)
        layer = QConv2d(cin, cout, kernel, (1, 1), pad, rng)
        x = rng.standard_normal((2, cin, 5, 4))
        got = layer(Tensor(x)).data
        want = _quaternion_conv_terms(x, [p.data for p in layer.kernels()], pad)
        worst = max(worst, np.max(np.abs(got - want)))
    assert worst <= 1e-10


# -- vectormap weight matrix ----------------------------------------------------------
def test_vectormap_identity():
    z = np.zeros((1, 1, 1, 1))
    w = ha.vectormap_weight_matrix(ha.VectormapKernel(_delta((1, 1, 1, 1)), z, z, np.ones((3, 3))))
    assert np.array_equal(w[:, :, 0, 0], np.eye(3))


def test_vectormap_initial_scale_sign_pattern():
    z = np.zeros((1, 1, 1, 1))
    w = ha.vectormap_weight_matrix(ha.VectormapKernel(z, _delta((1, 1, 1, 1)), z, ha.VECTORMAP_L_INIT))
    assert np.array_equal(w[:, :, 0, 0], [[0, 1, 0], [0, 0, 1], [-1, 0, 0]])


def test_vectormap_initial_scale_values():
    assert np.array_equal(ha.VECTORMAP_L_INIT, [[1, 1, 1], [-1, 1, 1], [-1, 1, 1]])


def test_vectormap_conv_equals_row_expansion(f64, rng):
    worst = 0.0
    for trial in range(100):
        cin, cout = 3 * int(rng.integers(1, 3)), 3 * int(rng.integers(1, 3))
        kernel = [(3, 3), (3, 1), (1, 3), (1, 1)][trial % 4]
        pad = (kernel[0] // 2, kernel[1] // 2)
        layer = VConv2d(cin, cout, kernel, (1, 1), pad, rng)
        layer.scale.data = rng.standard_normal((3, 3))
        x = rng.standard_normal((2, cin, 4, 5))
        got = layer(Tensor(x)).data
        a, b, c = (p.data for p in layer.kernels())
        s = layer.scale.data
        x1, x2, x3 = (x[:, i::3] for i in range(3))
        conv = lambda m, f: conv_windows(m, f, pad)  # noqa: E731
        rows = [s[0, 0] * conv(x1, a) + s[0, 1] * conv(x2, b) + s[0, 2] * conv(x3, c),
                s[1, 0] * conv(x1, c) + s[1, 1] * conv(x2, a) + s[1, 2] * conv(x3, b),
                s[2, 0] * conv(x1, b) + s[2, 1] * conv(x2, c) + s[2, 2] * conv(x3, a)]
        n, g, h, w = rows[0].shape
        want = np.stack(rows, axis=2).reshape(n, 3 * g, h, w)
        worst = max(worst, np.max(np.abs(got - want)))
    assert worst <= 1e-10


# -- Kronecker and PHM -------------------------------------------------------------
def test_kronecker_examples(rng):
    q = rng.standard_normal((2, 3))
    z = np.zeros_like(q)
    assert np.array_equal(ha.kronecker(np.eye(2), q), np.block([[q, z], [z, q]]))
    assert np.array_equal(ha.kronecker(np.array([[0, 1], [1, 0]]), q), np.block([[z, q], [q, z]]))


def test_kronecker_vec_identity(rng):
    worst = 0.0
    for _ in range(100):
        a, b, c, d = rng.integers(1, 5, size=4)
        p, q, x = rng.standard_normal((a, b)), rng.standard_normal((c, d)), rng.standard_normal((d, b))
        lhs = ha.kronecker(p, q) @ x.reshape(-1, order="F")
        rhs = (q @ x @ p.T).reshape(-1, order="F")
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    assert worst <= 1e-10


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 1000))
def test_kronecker_matches_numpy(a, b, c, d, seed):
    r = np.random.default_rng(seed)
    p, q = r.standard_normal((a, b)), r.standard_normal((c, d))
    assert np.array_equal(ha.kronecker(p, q), np.kron(p, q))


def test_phm_synthesis_matches_loops(rng):
    for n in (1, 2, 4, 5):
        a = rng.standard_normal((n, 3, 2))
        i = rng.standard_normal((n, n, n))
        b = rng.standard_normal(3 * n)
        h = ha.phm_synthesize(ha.PHMWeight(n, a, i, b))
        assert h.shape == (3 * n, 2 * n)
        x = rng.standard_normal((4, 2 * n))
        assert np.allclose(x @ h.T + b, phm_loops(a, i, x, b), atol=1e-12)


def test_phm_n1_is_affine_exactly(f64, rng):
    for _ in range(100):
        d, k = (int(v) for v in rng.integers(1, 9, size=2))
        w = ha.PHMWeight(1, rng.standard_normal((1, k, d)), np.ones((1, 1, 1)), rng.standard_normal(k))
        layer = PHMDense.from_weight(w)
        x = rng.standard_normal((3, d))
        got = layer(Tensor(x)).data
        want = tc.matmul_affine(Tensor(x), Tensor(w.a[0]), Tensor(w.b)).data
        assert np.array_equal(got, want)


def test_phm_n4_hamilton_is_quaternion_dense(f64, rng):
    worst = 0.0
    for _ in range(100):
        ko, di = (int(v) for v in rng.integers(1, 4, size=2))
        a = rng.standard_normal((4, ko, di))
        layer = PHMDense.from_weight(ha.PHMWeight(4, a, ha.init_phm_structure(4, rng), np.zeros(4 * ko)))
        x = rng.standard_normal((2, 4 * di))
        got = layer(Tensor(x)).data
        want = np.zeros_like(got)
        for row in range(2):
            for o in range(ko):
                acc = np.zeros(4)
                for i in range(di):
                    acc += hamilton(x[row, i::di], a[:, o, i])  # components live in contiguous blocks
                want[row, o::ko] = acc
        worst = max(worst, np.max(np.abs(got - want)))
    assert worst <= 1e-10


def test_phm_shape_errors(rng):
    with pytest.raises(ConfigurationError):
        ha.check_phm_shape(5, 12, 10)
    with pytest.raises(ConfigurationError):
        ha.phm_synthesize(ha.PHMWeight(2, np.zeros((3, 1, 1)), np.zeros((2, 2, 2)), np.zeros(2)))
    with pytest.raises(ConfigurationError):
        PHMDense(10, 7, 5, rng)


# -- initializers -----------------------------------------------------------------
def test_quaternion_init_variance(rng):
    fan_in, fan_out = 40.0, 60.0
    kernel = ha.init_quaternion_kernel((200, 200), fan_in, fan_out, rng)
    target = 1.0 / (2.0 * (fan_in + fan_out))
    variances = [np.var(c) for c in kernel.components()]
    assert np.mean(variances) == pytest.approx(target, rel=0.03)
    # the real lane carries half the energy, the imaginary lanes share the rest equally
    assert variances[0] == pytest.approx(2 * target, rel=0.05)
    assert np.mean(variances[1:]) == pytest.approx(2 * target / 3, rel=0.05)


def test_quaternion_init_modulus_scale(rng):
    sigma = 1.0 / math.sqrt(2.0 * (10 + 10))
    kernel = ha.init_quaternion_kernel((300, 300), 10, 10, rng)
    modulus2 = sum(c ** 2 for c in kernel.components())
    # chi with four degrees of freedom: E[|w|^2] = 4 sigma^2
    assert modulus2.mean() == pytest.approx(4 * sigma ** 2, rel=0.02)


def test_vectormap_init(rng):
    vk = ha.init_vectormap((4, 5, 3, 3), 45, 36, rng)
    assert np.array_equal(vk.scale, ha.VECTORMAP_L_INIT)
    assert all(c.shape == (4, 5, 3, 3) for c in vk.components())


def test_phm_structure_init(rng):
    assert np.array_equal(ha.init_phm_structure(4, rng), ha.QUATERNION_STRUCTURE)
    assert np.array_equal(ha.init_phm_structure(1, rng), np.ones((1, 1, 1)))
    w = ha.init_phm(5, 10, 20, rng)
    assert w.a.shape == (5, 2, 4) and w.i.shape == (5, 5, 5) and w.b.shape == (10,)
    assert ha.phm_synthesize(w).shape == (10, 20)
