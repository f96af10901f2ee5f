import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from sdtgan import tensor as tc
from sdtgan import tsr
from sdtgan.checks import REGISTRY
from sdtgan.gradcheck import finite_diff_check
from sdtgan.tensor import DimensionError, Tape, Tensor


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# ---- forward values

def test_matmul_identity_and_hand_case():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(tc.matmul(T(np.eye(3)), T(x)).data, x)
    out = tc.matmul(T([[1, 2], [3, 4]]), T([[1], [1]])).data
    np.testing.assert_array_equal(out, [[3], [7]])


def test_matmul_shape_error_names_both():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_softmax_cases():
    np.testing.assert_allclose(tc.softmax_axis(T([[2.0, 2.0, 2.0, 2.0]]), 1).data, 0.25)
    np.testing.assert_allclose(tc.softmax_axis(T([0.0, np.log(3.0)]), 0).data, [0.25, 0.75], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-80, 80)))
def test_softmax_rows_sum_to_one(x):
    y = tc.softmax_axis(T(x), -1).data
    assert np.all(np.isfinite(y)) and np.all(y >= 0)
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-6)


def test_mean_axis():
    np.testing.assert_array_equal(tc.mean_axis(T([[1, 3], [5, 7]]), 0).data, [3, 5])
    np.testing.assert_array_equal(tc.mean_axis(T(np.full((2, 3, 4), 2.5)), 1).data, np.full((2, 4), 2.5))


def test_add_zero_and_log_exp_inverse():
    x = np.linspace(-10, 10, 41)
    np.testing.assert_array_equal(tc.add(T(x), T(np.zeros_like(x))).data, x)
    np.testing.assert_allclose(tc.log(tc.exp(T(x))).data, x, atol=1e-6)


def test_broadcast_error():
    with pytest.raises(DimensionError):
        tc.add(T(np.ones((2, 3))), T(np.ones((4,))))


def test_l2_normalize():
    np.testing.assert_allclose(tc.l2_normalize(T([3.0, 4.0]), 0).data, [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(tc.l2_normalize(T(u), 0).data, u)
    # zero vectors pass through instead of producing NaN
    assert np.all(tc.l2_normalize(T(np.zeros((2, 3))), -1).data == 0)


def test_conv_identity_and_box_sum():
    x = np.random.default_rng(0).standard_normal((5, 6, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0] = np.eye(3)
    np.testing.assert_allclose(tc.conv2d(T(x), T(k), 1).data, x)
    ones = tc.conv2d(T(np.ones((6, 6, 1))), T(np.ones((3, 3, 1, 1))), 1).data
    np.testing.assert_array_equal(ones[1:-1, 1:-1, 0], 9.0)


def test_conv_stride_and_upsample_shapes():
    x = T(np.ones((2, 8, 8, 3)))
    assert tc.conv2d(x, T(np.ones((3, 3, 3, 5))), 2).shape == (2, 4, 4, 5)
    up = tc.upsample_nearest(T(np.arange(4.0).reshape(2, 2, 1)), 2).data
    np.testing.assert_array_equal(up[:, :, 0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_rank_limit():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_reshape_transpose_roundtrip(a, b, c):
    x = T(np.random.default_rng(a * 16 + b * 4 + c).standard_normal((a, b, c)))
    y = tc.reshape(tc.reshape(x, (a * b * c,)), (a, b, c))
    np.testing.assert_array_equal(y.data, x.data)
    z = tc.transpose(tc.transpose(x, (2, 0, 1)), (1, 2, 0))
    np.testing.assert_array_equal(z.data, x.data)


# ---- backward

def test_backward_simple_cases():
    x = T(np.arange(6.0).reshape(2, 3), grad=True)
    with Tape() as tape:
        loss = tc.sum_axis(x)
    np.testing.assert_array_equal(tc.backward(tape, loss)[x], np.ones((2, 3)))
    with Tape() as tape:
        loss = tc.sum_axis(tc.mul(x, x))
    np.testing.assert_array_equal(tape.backward(loss)[x], 2 * x.data)


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    x = T(rng.standard_normal((4, 6)), grad=True)
    w = T(rng.standard_normal((6, 3)), grad=True)

    def run():
        with Tape() as tape:
            loss = tc.logsumexp(tc.matmul(tc.softmax_axis(x, 1), w), 1)
            loss = tc.sum_axis(loss)
        g = tape.backward(loss)
        return g[x], g[w]

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_backward_requires_scalar():
    x = T(np.ones(3), grad=True)
    with Tape() as tape:
        y = tc.mul(x, 2.0)
    with pytest.raises(DimensionError):
        tape.backward(y)


def test_untracked_inputs_get_no_gradient():
    x = T(np.ones(3), grad=True)
    c = T(np.ones(3))
    with Tape() as tape:
        loss = tc.sum_axis(tc.mul(x, c))
    grads = tape.backward(loss)
    assert x in grads and c not in grads


def test_default_precision_is_float32():
    assert Tensor([1.0, 2.0]).data.dtype == np.float32
    with tc.precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64


# ---- finite-difference harness

def test_fd_quadratic_and_constant():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    assert finite_diff_check(lambda: tc.sum_axis(tc.mul(p, p)), [p]) < 1e-6
    assert finite_diff_check(lambda: tc.sum_axis(tc.mul(Tensor([1.0, 1.0]), 3.0)), [p]) == 0.0


def test_fd_restores_parameter_dtype():
    p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    finite_diff_check(lambda: tc.sum_axis(tc.exp(p)), [p])
    assert p.data.dtype == np.float32


PRIMITIVES = [name for name, chk in REGISTRY.items() if chk.scope == "tensor"]


@pytest.mark.parametrize("name", PRIMITIVES)
@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients(name, seed):
    chk = REGISTRY[name]
    assert chk.run(seed) < chk.tol


def test_fd_detects_corrupted_gradient():
    assert REGISTRY["matmul"].run(0, analytic_scale=1.5) > 0.1


# ---- TSR format

@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_tsr_roundtrip(arr):
    out = tsr.loads(tsr.dumps(arr))
    assert out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()


def test_tsr_layout():
    buf = tsr.dumps(np.array([[1.0, 2.0]], dtype=np.float32))
    assert buf[:4] == b"TSR1" and buf[4] == 2
    assert buf[5:13] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(buf[13:], "<f4").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("buf", [b"", b"XXXX\x01\x02\x00\x00\x00", b"TSR1\x01\x05\x00\x00\x00" + b"\x00" * 8])
def test_tsr_rejects_bad_input(buf):
    with pytest.raises(tsr.TSRFormatError):
        tsr.loads(buf)
