import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeops.rng import Prng
from plumeops.tensor import (
    KernelWeights,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    elementwise,
    maxpool2,
    precision64,
    reduce,
    sum_all,
    upsample_nearest,
    vjp,
)

from oracles import conv2d_ref, maxpool2_ref, mean_std_ref, upsample_ref

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def rand(shape, seed=0, bound=1.0):
    return Tensor(Prng(seed).fill(shape, bound))


def depthwise(arrs):
    return KernelWeights("depthwise", Parameter("w", np.stack(arrs)))


def pointwise(mat, bias=None):
    b = None if bias is None else Parameter("b", bias)
    return KernelWeights("pointwise", Parameter("w", mat), b)


class TestTensorInvariants:
    def test_rank_enforced(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3, 4)))

    def test_axes_at_least_one(self):
        with pytest.raises(ShapeError, match="height"):
            Tensor(np.zeros((1, 1, 0, 4)))

    def test_storage_is_float32(self):
        assert Tensor(np.zeros((1, 1, 2, 2))).data.dtype == np.float32

    def test_ops_preserve_finiteness(self):
        x = rand((2, 3, 6, 6), seed=1)
        for kind in ("sigmoid", "relu", "silu", "abs", "exp_neg"):
            assert np.isfinite(elementwise(x, kind).data).all()


class TestConv2d:
    def test_laplacian_of_constant_zero_interior(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        out = conv2d(x, depthwise([LAPLACIAN]))
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 0.0)
        # zero padding makes border entries negative
        assert (out.data[0, 0, 0] < 0).all()

    def test_impulse_reproduces_flipped_kernel(self):
        # correlation convention: the impulse response is the flipped kernel
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 2] = 1.0
        k = Prng(3).fill((3, 3), 1.0)
        out = conv2d(Tensor(x), depthwise([k]))
        assert np.allclose(out.data[0, 0, 1:4, 1:4], k[::-1, ::-1], atol=1e-6)

    def test_pointwise_identity(self):
        x = rand((2, 3, 5, 5), seed=2)
        out = conv2d(x, pointwise(np.eye(3)))
        assert np.array_equal(out.data, x.data)

    def test_matches_direct_summation(self):
        x = rand((1, 2, 6, 6), seed=4)
        k = Prng(5).fill((2, 3, 3), 1.0)
        out = conv2d(x, depthwise([k[0], k[1]]))
        for c in range(2):
            ref = conv2d_ref(x.data[0, c].astype(np.float64), k[c])
            assert np.allclose(out.data[0, c], ref, atol=1e-5)

    def test_dense_mode_matches_direct_summation(self):
        x = rand((1, 2, 5, 5), seed=6)
        w = Prng(7).fill((3, 2, 3, 3), 0.5)
        bias = Prng(8).fill((3,), 0.5)
        out = conv2d(x, KernelWeights("dense", Parameter("w", w), Parameter("b", bias)))
        for o in range(3):
            ref = sum(
                conv2d_ref(x.data[0, c].astype(np.float64), w[o, c]) for c in range(2)
            ) + bias[o]
            assert np.allclose(out.data[0, o], ref, atol=1e-5)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(ShapeError, match="channel"):
            conv2d(rand((1, 3, 4, 4)), pointwise(np.eye(2)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        prng = Prng(seed)
        x = Tensor(prng.fill((1, 2, 5, 5), 1.0))
        y = Tensor(prng.fill((1, 2, 5, 5), 1.0))
        w = KernelWeights("dense", Parameter("w", prng.fill((2, 2, 3, 3), 0.4)))
        mix = Tensor(a * x.data.astype(np.float64) + b * y.data.astype(np.float64))
        lhs = conv2d(mix, w).data
        rhs = a * conv2d(x, w).data.astype(np.float64) + b * conv2d(y, w).data
        assert np.allclose(lhs, rhs, atol=1e-5 * max(1.0, abs(a) + abs(b)))


class TestMaxpool2:
    def test_two_by_two_block(self):
        out = maxpool2(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)))
        assert out.data.reshape(()) == 4.0

    def test_constant_field(self):
        out = maxpool2(Tensor(np.full((1, 2, 6, 6), 3.5)))
        assert out.shape == (1, 2, 3, 3)
        assert np.all(out.data == np.float32(3.5))

    def test_matches_block_enumeration(self):
        x = rand((1, 1, 8, 8), seed=11)
        out = maxpool2(x)
        assert np.array_equal(out.data[0, 0], maxpool2_ref(x.data[0, 0]).astype(np.float32))

    def test_odd_trailing_dropped(self):
        x = rand((1, 1, 7, 5), seed=12)
        out = maxpool2(x)
        assert out.shape == (1, 1, 3, 2)
        assert np.array_equal(out.data[0, 0], maxpool2_ref(x.data[0, 0, :6, :4]).astype(np.float32))

    def test_pool_underflow(self):
        with pytest.raises(ShapeError, match="pool underflow"):
            maxpool2(Tensor(np.zeros((1, 1, 1, 4))))

    def test_output_equals_block_maxima_exactly(self):
        x = rand((2, 3, 10, 10), seed=13)
        out = maxpool2(x)
        blocks = x.data.reshape(2, 3, 5, 2, 5, 2).max(axis=(3, 5))
        assert np.array_equal(out.data, blocks)


class TestReduce:
    def test_constant_field(self):
        x = Tensor(np.full((1, 2, 4, 4), 2.25))
        assert np.allclose(reduce(x, "global_avg").data, 2.25)
        assert np.allclose(reduce(x, "channel_std").data, 0.0)

    def test_two_point_population_std(self):
        x = Tensor(np.array([0.0, 2.0]).reshape(1, 1, 1, 2))
        assert np.allclose(reduce(x, "global_avg").data, 1.0)
        assert np.allclose(reduce(x, "channel_std").data, 1.0)

    def test_matches_two_pass_accumulator(self):
        x = rand((2, 3, 4, 4), seed=21)
        avg = reduce(x, "global_avg").data
        std = reduce(x, "channel_std").data
        for b in range(2):
            for c in range(3):
                m, s = mean_std_ref(x.data[b, c])
                assert abs(avg[b, c, 0, 0] - m) < 1e-6
                assert abs(std[b, c, 0, 0] - s) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-10, 10))
    def test_std_shift_invariant(self, seed, shift):
        x = Prng(seed).fill((1, 2, 5, 5), 1.0)
        s1 = reduce(Tensor(x), "channel_std").data
        s2 = reduce(Tensor(x + shift), "channel_std").data
        assert np.allclose(s1, s2, atol=1e-6)


class TestElementwise:
    def test_sigmoid_of_zero_exact(self):
        out = elementwise(Tensor(np.zeros((1, 1, 1, 1))), "sigmoid")
        assert out.data.reshape(()) == 0.5

    def test_relu(self):
        x = Tensor(np.array([-3.0, 3.0]).reshape(1, 1, 1, 2))
        assert np.array_equal(
            elementwise(x, "relu").data.reshape(-1), np.float32([0.0, 3.0])
        )

    def test_silu_zero(self):
        assert elementwise(Tensor(np.zeros((1, 1, 1, 1))), "silu").data.reshape(()) == 0.0

    def test_silu_is_x_times_sigmoid(self):
        x = rand((1, 1, 4, 4), seed=31)
        lhs = elementwise(x, "silu").data
        rhs = x.data * elementwise(x, "sigmoid").data
        assert np.allclose(lhs, rhs, atol=1e-6)

    def test_abs_and_exp_neg(self):
        x = Tensor(np.array([-3.0, 2.0]).reshape(1, 1, 1, 2))
        assert np.array_equal(
            elementwise(x, "abs").data.reshape(-1), np.float32([3.0, 2.0])
        )
        assert np.allclose(
            elementwise(x, "exp_neg").data.reshape(-1),
            np.exp([3.0, -2.0]),
            rtol=1e-6,
        )

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown"):
            elementwise(rand((1, 1, 2, 2)), "tanh")


class TestUpsampleNearest:
    def test_single_pixel(self):
        out = upsample_nearest(Tensor(np.full((1, 1, 1, 1), 7.0)), 2, 2)
        assert np.all(out.data == 7.0)

    def test_factor_two_blocks(self):
        x = rand((1, 1, 2, 2), seed=41)
        out = upsample_nearest(x, 4, 4)
        for i in range(4):
            for j in range(4):
                assert out.data[0, 0, i, j] == x.data[0, 0, i // 2, j // 2]

    def test_matches_index_map(self):
        x = rand((1, 1, 3, 3), seed=42)
        out = upsample_nearest(x, 5, 5)
        assert np.array_equal(out.data[0, 0], upsample_ref(x.data[0, 0], 5, 5).astype(np.float32))

    def test_shrink_rejected(self):
        with pytest.raises(ShapeError):
            upsample_nearest(rand((1, 1, 4, 4)), 2, 4)


class TestVjp:
    def test_identity_pointwise_passes_cotangent(self):
        x = rand((1, 3, 4, 4), seed=51)
        out = conv2d(x, pointwise(np.eye(3)))
        g = Prng(52).fill((1, 3, 4, 4), 1.0)
        grads = vjp(out.node, g)
        assert np.allclose(grads[0], g, atol=1e-6)

    def test_maxpool_routes_to_argmax(self):
        x = Tensor(np.array([[1.0, 2.0], [4.0, 3.0]]).reshape(1, 1, 2, 2))
        out = maxpool2(x)
        (gx,) = vjp(out.node, np.full((1, 1, 1, 1), 5.0))
        assert np.array_equal(gx[0, 0], np.array([[0.0, 0.0], [5.0, 0.0]]))

    def test_maxpool_tie_break_first_row_major(self):
        x = Tensor(np.full((1, 1, 2, 2), 1.5))
        (gx,) = vjp(maxpool2(x).node, np.ones((1, 1, 1, 1)))
        assert np.array_equal(gx[0, 0], np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_cotangent_shape_mismatch(self):
        out = maxpool2(rand((1, 1, 4, 4)))
        with pytest.raises(ShapeError, match="cotangent"):
            vjp(out.node, np.ones((1, 1, 4, 4)))

    @pytest.mark.parametrize(
        "build",
        [
            lambda x, prng: conv2d(
                x, KernelWeights("depthwise", Parameter("w", prng.fill((2, 3, 3), 0.4)))
            ),
            lambda x, prng: conv2d(
                x,
                KernelWeights(
                    "dense",
                    Parameter("w", prng.fill((3, 2, 3, 3), 0.3)),
                    Parameter("b", prng.fill((3,), 0.3)),
                ),
            ),
            lambda x, prng: conv2d(
                x, KernelWeights("pointwise", Parameter("w", prng.fill((4, 2), 0.5)))
            ),
            lambda x, prng: maxpool2(x),
            lambda x, prng: reduce(x, "global_avg"),
            lambda x, prng: reduce(x, "channel_std"),
            lambda x, prng: upsample_nearest(x, 9, 13),
            lambda x, prng: elementwise(x, "sigmoid"),
            lambda x, prng: elementwise(x, "silu"),
            lambda x, prng: elementwise(x, "exp_neg"),
        ],
        ids=[
            "depthwise", "dense", "pointwise", "maxpool2", "global_avg",
            "channel_std", "upsample", "sigmoid", "silu", "exp_neg",
        ],
    )
    def test_input_vjp_matches_finite_differences(self, build):
        # h and tolerance from the analysis module contract
        h, tol = 1e-3, 1e-3
        with precision64():
            prng = Prng(99)
            xdat = prng.fill((1, 2, 6, 6), 1.0)
            x = Tensor(xdat)
            out = build(x, Prng(100))
            cot = Prng(101).fill(out.shape, 1.0)
            grads = backward(out, cot)
            gx = grads.wrt(x).reshape(-1)

            def loss(arr):
                return float((build(Tensor(arr), Prng(100)).data * cot).sum())

            flat = xdat.reshape(-1)
            for i in range(0, flat.size, 7):  # subsample coordinates
                orig = flat[i]
                flat[i] = orig + h
                fp = loss(xdat)
                flat[i] = orig - h
                fm = loss(xdat)
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                assert abs(gx[i] - fd) / max(abs(gx[i]), abs(fd), 1e-8) <= tol


class TestTape:
    def test_replay_is_bit_exact(self):
        x = rand((1, 2, 6, 6), seed=61)
        w = KernelWeights("dense", Parameter("w", Prng(62).fill((2, 2, 3, 3), 0.4)))
        out = elementwise(conv2d(maxpool2(x), w), "silu")
        node = out.node
        assert np.array_equal(node.replay(), out.data)

    def test_backward_accumulates_forks(self):
        # y = x + x should give input gradient 2
        from plumeops.tensor import add

        x = rand((1, 1, 3, 3), seed=63)
        grads = backward(sum_all(add(x, x)), np.ones((1, 1, 1, 1)))
        assert np.allclose(grads.wrt(x), 2.0)

    def test_disconnected_leaf_gets_zeros(self):
        x = rand((1, 1, 3, 3), seed=64)
        other = rand((1, 1, 3, 3), seed=65)
        grads = backward(sum_all(elementwise(x, "silu")), np.ones((1, 1, 1, 1)))
        assert np.all(grads.wrt(other) == 0.0)
