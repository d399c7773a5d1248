import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradcheck import check
from semiadv.nncore import (
    Adam,
    BCE_EPS,
    ParamStore,
    Tensor,
    adam_step,
    avg_pool2d,
    binary_cross_entropy,
    concat,
    conv2d,
    dense,
    flatten,
    kernels,
    l2_normalize,
    leaky_relu,
    max_pool2d,
    sigmoid,
    softmax_cross_entropy,
    square,
    sum_per_sample,
    upsample_nearest2d,
)


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def brute_conv(x, w, b):
    """Sliding-window oracle for stride-1 zero-padded convolution."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((n, k, h, wd))
    for i in range(n):
        for o in range(k):
            for y in range(h):
                for z in range(wd):
                    out[i, o, y, z] = np.sum(xp[i, :, y:y + kh, z:z + kw] * w[o]) + b[o]
    return out


# conv2d ------------------------------------------------------------------------

def test_conv_zero_input_gives_bias():
    out = conv2d(T(np.zeros((1, 1, 3, 3))), T(np.random.default_rng(0).normal(size=(1, 1, 3, 3))), T([0.7]))
    assert np.all(out.data == 0.7)


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(conv2d(T(x), T(k), T([0.0])).data, x)


def test_conv_ones_kernel_on_2x2():
    # every position of a 2x2 map sees all four pixels through a 3x3 window
    x = np.array([[1.0, 2], [3, 4]]).reshape(1, 1, 2, 2)
    out = conv2d(T(x), T(np.ones((1, 1, 3, 3))), T([0.0])).data
    np.testing.assert_array_equal(out[0, 0], [[10, 10], [10, 10]])
    np.testing.assert_allclose(out, brute_conv(x, np.ones((1, 1, 3, 3)), [0.0]))


@pytest.mark.parametrize("c,k", [(3, 5), (5, 2), (4, 4), (2, 1), (7, 3)])
def test_conv_matches_sliding_window(c, k):
    rng = np.random.default_rng(c * 10 + k)
    x = rng.normal(size=(2, c, 6, 5))
    w = rng.normal(size=(k, c, 3, 3))
    b = rng.normal(size=k)
    np.testing.assert_allclose(conv2d(T(x), T(w), T(b)).data, brute_conv(x, w, b), atol=1e-12)


def test_conv_5x5_kernel():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(1, 2, 7, 7)), rng.normal(size=(3, 2, 5, 5)), np.zeros(3)
    np.testing.assert_allclose(conv2d(T(x), T(w), T(b)).data, brute_conv(x, w, b), atol=1e-12)


def test_conv_linearity():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 1, 3, 6, 6)).astype(np.float32)
    w = T(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
    a, b = 0.7, -1.3
    lhs = conv2d(Tensor(a * x + b * y), w).data
    rhs = a * conv2d(Tensor(x), w).data + b * conv2d(Tensor(y), w).data
    assert np.max(np.abs(lhs - rhs)) < 1e-5


@pytest.mark.parametrize(
    "xs,ks,msg",
    [
        ((1, 3, 4, 4), (2, 2, 3, 3), "channel"),
        ((1, 2, 4, 4), (2, 2, 2, 2), "odd"),
        ((2, 4, 4), (2, 2, 3, 3), "4-d"),
    ],
)
def test_conv_shape_errors(xs, ks, msg):
    with pytest.raises(ValueError, match=msg):
        conv2d(T(np.zeros(xs)), T(np.zeros(ks)))


# elementwise and pooling ----------------------------------------------------

def test_leaky_relu_values():
    out = leaky_relu(T([2.0, 0.0, -3.0]), 0.2).data
    np.testing.assert_allclose(out, [2.0, 0.0, -0.6])
    with pytest.raises(ValueError):
        leaky_relu(T([1.0]), 1.5)


def test_pool_values():
    x = T(np.array([[1.0, 3], [5, 7]]).reshape(1, 1, 2, 2))
    assert avg_pool2d(x).data.item() == 4.0
    assert max_pool2d(x).data.item() == 7.0


def test_max_pool_ceil_mode_chain():
    x = T(np.zeros((1, 1, 224, 224)))
    sizes = []
    for _ in range(6):
        x = max_pool2d(x, ceil_mode=True)
        sizes.append(x.shape[-1])
    assert sizes == [112, 56, 28, 14, 7, 4]


def test_max_pool_ceil_replicates_border():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = max_pool2d(T(x), ceil_mode=True).data[0, 0]
    np.testing.assert_array_equal(out, [[4, 5], [7, 8]])
    assert max_pool2d(T(x)).shape == (1, 1, 1, 1)


def test_avg_pool_rejects_odd():
    with pytest.raises(ValueError):
        avg_pool2d(T(np.zeros((1, 1, 3, 4))))


def test_upsample_values():
    np.testing.assert_array_equal(upsample_nearest2d(T([[[[5.0]]]])).data, np.full((1, 1, 2, 2), 5.0))
    assert upsample_nearest2d(T(np.zeros((1, 2, 56, 56)))).shape == (1, 2, 112, 112)
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(upsample_nearest2d(T(x), 3).data[0, 0, :3, :3], np.zeros((3, 3)))


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float32, (2, 3, 4, 4), elements=st.floats(-1e3, 1e3, width=32)))
def test_pool_upsample_round_trip(x):
    np.testing.assert_array_equal(avg_pool2d(Tensor(upsample_nearest2d(Tensor(x)).data)).data, x)


def test_pool_upsample_round_trip_8x8():
    x = np.random.default_rng(3).normal(size=(1, 1, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(avg_pool2d(upsample_nearest2d(Tensor(x))).data, x)


def test_l2_normalize_unit_rows():
    out = l2_normalize(T([[3.0, 4.0], [0.0, 2.0]])).data
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 1.0]])


def test_dense_values():
    np.testing.assert_array_equal(dense(T([[1.0, 2]]), T(np.eye(2)), T([3.0, 3])).data, [[4, 5]])
    x = np.random.default_rng(4).normal(size=(2, 3))
    w = np.random.default_rng(5).normal(size=(3, 4))
    naive = np.array([[sum(x[i, k] * w[k, j] for k in range(3)) for j in range(4)] for i in range(2)])
    np.testing.assert_allclose(dense(T(x), T(w)).data, naive, atol=1e-12)
    with pytest.raises(ValueError, match="inner"):
        dense(T(np.zeros((2, 3))), T(np.zeros((4, 2))))


def test_sigmoid_values():
    assert sigmoid(T([0.0])).data[0] == 0.5
    assert abs(sigmoid(T([20.0])).data[0] - 1) < 1e-6
    assert abs(sigmoid(T([1.0])).data[0] - 0.7310585786300049) < 1e-12


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, 6, elements=st.floats(-80, 80, width=32)))
def test_sigmoid_open_interval(x):
    out = sigmoid(Tensor(x)).data.astype(np.float64)
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0) & (out <= 1))


def test_sigmoid_strict_range_float64():
    out = sigmoid(T(np.linspace(-30, 30, 61))).data
    assert np.all((out > 0) & (out < 1))


def test_bce_values():
    assert binary_cross_entropy(1.0, T([1 - BCE_EPS])).item() < 1e-6
    assert abs(binary_cross_entropy(0.5, T([0.5])).item() - np.log(2)) < 1e-12
    assert abs(binary_cross_entropy(1.0, T([0.9])).item() - 0.10536051565782628) < 1e-12
    assert np.isfinite(binary_cross_entropy(1.0, T([0.0])).item())
    # summed, not averaged
    assert abs(binary_cross_entropy(0.5, T([0.5, 0.5])).item() - 2 * np.log(2)) < 1e-12


# backward ----------------------------------------------------------------------

def test_backward_sum_and_square():
    x = T(np.zeros((2, 3)), grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = T([1.0, -2.0], grad=True)
    square(y).sum().backward()
    np.testing.assert_array_equal(y.grad, [2.0, -4.0])


def test_backward_non_scalar_raises():
    x = T(np.ones(3), grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_frozen_leaf_passes_gradient_but_stores_none():
    x = T(np.ones((1, 1, 4, 4)), grad=True)
    w = T(np.ones((1, 1, 3, 3)))
    conv2d(x, w).sum().backward()
    assert w.grad is None
    assert x.grad is not None and np.all(x.grad > 0)


def test_shared_node_gradients_accumulate():
    x = T([3.0], grad=True)
    (x * x + x).sum().backward()
    assert x.grad[0] == 7.0


RNG = np.random.default_rng(1234)
GRAD_CASES = {
    "conv2d_wide": (lambda x, w, b: square(conv2d(x, w, b)).sum(),
                    [RNG.normal(size=(2, 2, 4, 4)), RNG.normal(size=(3, 2, 3, 3)), RNG.normal(size=3)]),
    "conv2d_narrow": (lambda x, w, b: square(conv2d(x, w, b)).sum(),
                      [RNG.normal(size=(2, 3, 4, 4)), RNG.normal(size=(1, 3, 3, 3)), RNG.normal(size=1)]),
    "leaky_relu": (lambda x: square(leaky_relu(x, 0.2)).sum(),
                   [RNG.uniform(0.1, 1, size=(4, 4)) * RNG.choice([-1, 1], size=(4, 4))]),
    "avg_pool2d": (lambda x: square(avg_pool2d(x)).sum(), [RNG.normal(size=(1, 2, 4, 4))]),
    "max_pool2d": (lambda x: square(max_pool2d(x)).sum(), [RNG.permutation(32).reshape(1, 2, 4, 4) * 0.1]),
    "max_pool2d_ceil": (lambda x: square(max_pool2d(x, ceil_mode=True)).sum(),
                        [RNG.permutation(25).reshape(1, 1, 5, 5) * 0.1]),
    "upsample": (lambda x: square(upsample_nearest2d(x)).sum(), [RNG.normal(size=(1, 2, 4, 4))]),
    "dense": (lambda x, w, b: square(dense(x, w, b)).sum(),
              [RNG.normal(size=(4, 4)), RNG.normal(size=(4, 3)), RNG.normal(size=3)]),
    "sigmoid": (lambda x: square(sigmoid(x)).sum(), [RNG.normal(size=(4, 4))]),
    "bce": (lambda p: binary_cross_entropy(RNG_T, sigmoid(p)), [RNG.normal(size=(4, 4))]),
    "softmax_ce": (lambda z: softmax_cross_entropy(z, [0, 2, 1, 2]), [RNG.normal(size=(4, 3))]),
    "concat_flatten": (lambda a, b: square(flatten(concat([a, b], axis=1))).sum(),
                       [RNG.normal(size=(2, 1, 2, 2)), RNG.normal(size=(2, 3, 2, 2))]),
    "l2_normalize": (lambda x: square(l2_normalize(x) - RNG_T).sum(), [RNG.normal(size=(4, 4))]),
    "sum_per_sample": (lambda x: square(sum_per_sample(x)).sum(), [RNG.normal(size=(4, 4))]),
    "mul_sub": (lambda a, b: square(a * b - b).sum(), [RNG.normal(size=(4, 4)), RNG.normal(size=(4, 4))]),
}
RNG_T = RNG.uniform(size=(4, 4))


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients(name):
    build, arrays = GRAD_CASES[name]
    assert check(build, arrays) < 1e-4


# Adam ----------------------------------------------------------------------------

def test_adam_first_step_hand_oracle():
    store = ParamStore()
    store.add("w", np.array([2.0]))
    store["w"].grad = np.array([1.0])
    adam_step(store, lr=0.1)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert abs(store["w"].data[0] - (2.0 - 0.1 / (1 + 1e-8))) < 1e-15


def test_adam_zero_grad_and_frozen_unchanged():
    store = ParamStore()
    store.add("a", np.array([1.0, 2.0]))
    store.add("b", np.array([3.0]), trainable=False)
    store["a"].grad = np.zeros(2)
    store["b"].grad = np.ones(1)
    before = store["b"].data.tobytes()
    Adam(store, lr=0.5).step()
    np.testing.assert_array_equal(store["a"].data, [1.0, 2.0])
    assert store["b"].data.tobytes() == before


def test_adam_missing_grad_raises():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(RuntimeError, match="'w'"):
        Adam(store).step()


def test_adam_two_runs_identical():
    def run():
        rng = np.random.default_rng(9)
        store = ParamStore()
        store.add("w", rng.normal(size=(5,)).astype(np.float32))
        opt = Adam(store, lr=0.01)
        for _ in range(20):
            store.zero_grad()
            w = store["w"]
            square(w * 3.0).sum().backward()
            opt.step()
        return store["w"].data.tobytes()

    assert run() == run()


# backends ------------------------------------------------------------------------

@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba backend disabled")
def test_numba_and_numpy_kernels_agree_bitwise():
    rng = np.random.default_rng(0)
    xpad = rng.normal(size=(2, 3, 8, 9)).astype(np.float32)
    cols_nb = kernels._im2col_nb(xpad, 3, 3, 6, 7)
    cols_np = kernels.im2col_numpy(xpad, 3, 3, 6, 7)
    assert cols_nb.tobytes() == np.ascontiguousarray(cols_np).tobytes()
    back_nb = kernels._col2im_nb(cols_nb, 3, 3, 3, 6, 7)
    back_np = np.ascontiguousarray(kernels.col2im_numpy(cols_np, 3, 3, 3, 6, 7))
    assert back_nb.tobytes() == back_np.tobytes()
    x = rng.normal(size=(2, 3, 6, 8)).astype(np.float32)
    (o1, i1), (o2, i2) = kernels._maxpool_nb(x), kernels.maxpool2x2_numpy(x)
    assert o1.tobytes() == np.ascontiguousarray(o2).tobytes()
    np.testing.assert_array_equal(i1, i2)
    g = rng.normal(size=o1.shape).astype(np.float32)
    assert kernels._maxpool_backward_nb(g, i1).tobytes() == np.ascontiguousarray(
        kernels.maxpool2x2_backward_numpy(g, i2)
    ).tobytes()


def test_backend_name():
    assert kernels.backend_name() in ("numba", "numpy")
