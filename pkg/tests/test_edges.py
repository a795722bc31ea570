import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plumeops.analysis import grad_check
from plumeops.edges import (
    SOBEL_0,
    SOBEL_45,
    SOBEL_90,
    SOBEL_135,
    AgpeoParams,
    DirectionalBank,
    GaborBank,
    agpeo,
    build_pyramid,
    directional_gradient,
    laplacian_edge,
    normalized_gradient,
    phase_congruency,
    sobel_edge,
)
from plumeops.rng import Prng
from plumeops.tensor import ShapeError, Tensor

from oracles import conv2d_ref, maxpool2_ref


def rand(shape, seed=0):
    return Tensor(Prng(seed).fill(shape, 1.0))


class TestDirectionalBank:
    def test_kernels_sum_to_zero(self):
        for k in DirectionalBank().kernels:
            assert k.sum() == 0.0

    def test_subset_configurations(self):
        assert len(DirectionalBank((0,)).kernels) == 1
        assert len(DirectionalBank((0, 90)).kernels) == 2
        with pytest.raises(ValueError):
            DirectionalBank((30,))


class TestDirectionalGradient:
    def test_constant_field_zero_interior(self):
        # zero-sum kernels null constants; borders see the zero padding
        out = directional_gradient(Tensor(np.full((1, 2, 6, 6), 4.2)))
        assert np.all(out.data[:, :, 1:-1, 1:-1] == 0.0)

    def test_vertical_step_edge_response(self):
        # columns 0..2 are 0, columns 3..5 are 1; interior edge response is 4
        x = np.zeros((1, 1, 6, 6))
        x[0, 0, :, 3:] = 1.0
        out = directional_gradient(Tensor(x))
        assert np.allclose(out.data[0, 0, 1:-1, 2], 4.0)
        assert np.allclose(out.data[0, 0, 1:-1, 3], 4.0)

    def test_matches_bruteforce_four_orientations(self):
        x = rand((1, 1, 6, 6), seed=1)
        out = directional_gradient(x)
        planes = [
            np.abs(conv2d_ref(x.data[0, 0].astype(np.float64), k))
            for k in (SOBEL_0, SOBEL_45, SOBEL_90, SOBEL_135)
        ]
        assert np.allclose(out.data[0, 0], np.max(planes, axis=0), atol=1e-5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.1, 50.0))
    def test_contrast_equivariance(self, seed, a):
        x = Prng(seed).fill((1, 1, 5, 5), 1.0)
        g1 = directional_gradient(Tensor(x)).data.astype(np.float64)
        g2 = directional_gradient(Tensor(a * x)).data.astype(np.float64)
        assert np.allclose(g2, a * g1, rtol=1e-4, atol=1e-5 * a)


class TestGaborBank:
    def test_default_wavelengths(self):
        assert GaborBank().wavelengths == (3.0, 6.0, 12.0)
        assert GaborBank.with_scales(2).wavelengths == (3.0, 6.0)

    def test_odd_kernels_zero_mean(self):
        for o in GaborBank().odd:
            assert abs(o.sum()) < 1e-12

    def test_quadrature_pairs_orthogonal(self):
        bank = GaborBank()
        for e, o in zip(bank.even, bank.odd):
            assert abs((e * o).sum()) < 1e-3

    def test_unit_l2(self):
        bank = GaborBank()
        for k in bank.even + bank.odd:
            assert np.isclose((k**2).sum(), 1.0)


class TestPhaseCongruency:
    def test_single_scale_saturates(self):
        bank = GaborBank.with_scales(1)
        x = rand((1, 1, 12, 12), seed=2)
        p = phase_congruency(x, bank)
        amp = np.hypot(
            conv2d_ref(x.data[0, 0].astype(np.float64), bank.even[0]),
            conv2d_ref(x.data[0, 0].astype(np.float64), bank.odd[0]),
        )
        strong = amp > 1e-2
        assert np.all(p.data[0, 0][strong] > 0.99)

    def test_opposite_responses_cancel(self):
        base = GaborBank.with_scales(1)
        mirrored = GaborBank(wavelengths=(3.0, 3.0))
        object.__setattr__(mirrored, "even", (base.even[0], -base.even[0]))
        object.__setattr__(mirrored, "odd", (base.odd[0], -base.odd[0]))
        p = phase_congruency(rand((1, 1, 8, 8), seed=3), mirrored)
        assert np.all(p.data < 1e-6)

    def test_zero_input_zero(self):
        p = phase_congruency(Tensor(np.zeros((1, 1, 8, 8))))
        assert np.all(p.data == 0.0)

    def test_bounded_in_unit_interval(self):
        for seed in range(50):
            p = phase_congruency(rand((1, 1, 16, 16), seed=seed))
            assert p.data.min() >= 0.0 and p.data.max() < 1.0

    def test_contrast_invariance_at_high_gain(self):
        x = rand((1, 1, 12, 12), seed=4)
        p1 = phase_congruency(x).data.astype(np.float64)
        for a in (10.0, 100.0):
            pa = phase_congruency(Tensor(a * x.data)).data.astype(np.float64)
            assert np.abs(pa - p1).max() <= 1e-3


class TestAgpeo:
    def test_gradient_only_endpoint_bitwise(self):
        x = rand((1, 1, 12, 12), seed=5)
        e0 = agpeo(x, AgpeoParams.from_alpha(1.0))
        assert np.array_equal(e0.data, normalized_gradient(x).data)

    def test_phase_only_endpoint_bitwise(self):
        x = rand((1, 1, 12, 12), seed=6)
        e0 = agpeo(x, AgpeoParams.from_alpha(0.0))
        assert np.array_equal(e0.data, phase_congruency(x).data)

    def test_midpoint_arithmetic(self):
        x = rand((1, 1, 8, 8), seed=7)
        p = AgpeoParams.from_alpha(0.5)
        e0 = agpeo(x, p).data.astype(np.float64)
        g = normalized_gradient(x).data.astype(np.float64)
        pc = phase_congruency(x).data.astype(np.float64)
        assert np.allclose(e0, 0.5 * g + 0.5 * pc, atol=1e-6)

    def test_alpha_initialization(self):
        assert abs(AgpeoParams.init(0.7).alpha() - 0.7) < 1e-12

    def test_output_between_components(self):
        x = rand((1, 2, 10, 10), seed=8)
        p = AgpeoParams.init(0.7)
        e0 = agpeo(x, p).data.astype(np.float64)
        g = normalized_gradient(x).data.astype(np.float64)
        pc = phase_congruency(x).data.astype(np.float64)
        lo = np.minimum(g, pc) - 1e-6
        hi = np.maximum(g, pc) + 1e-6
        assert np.all(e0 >= lo) and np.all(e0 <= hi)
        assert e0.min() >= 0.0 and e0.max() <= 1.0

    def test_alpha_logit_gradient(self):
        x = rand((1, 2, 8, 8), seed=9)
        p = AgpeoParams.init(0.7)
        report = grad_check(
            lambda: agpeo(x, p), [("alpha_logit", p.alpha_logit)]
        )
        assert report.all_pass


class TestBuildPyramid:
    def test_zero_levels(self):
        e0 = Tensor(np.clip(rand((1, 1, 8, 8), seed=10).data, 0, 1))
        pyr = build_pyramid(e0, 0)
        assert len(pyr.levels) == 1 and len(pyr.projected) == 1

    def test_constant_identity_projection(self):
        e0 = Tensor(np.full((1, 1, 16, 16), 0.25))
        pyr = build_pyramid(e0, 3)
        for level, proj in zip(pyr.levels, pyr.projected):
            assert np.all(level.data == np.float32(0.25))
            assert np.all(proj.data == np.float32(0.25))

    def test_matches_iterated_bruteforce_maxima(self):
        e0 = Tensor(np.abs(Prng(11).fill((1, 1, 16, 16), 1.0)))
        pyr = build_pyramid(e0, 3)
        dims = [(16, 16), (8, 8), (4, 4), (2, 2)]
        ref = e0.data[0, 0].astype(np.float64)
        for i, level in enumerate(pyr.levels):
            assert (level.h, level.w) == dims[i]
            if i > 0:
                ref = maxpool2_ref(ref)
                assert np.allclose(level.data[0, 0], ref, atol=1e-7)

    def test_level_dims_floor_halving(self):
        e0 = Tensor(np.clip(np.abs(Prng(12).fill((1, 1, 24, 20), 1.0)), 0, 1))
        pyr = build_pyramid(e0, 2)
        for i, level in enumerate(pyr.levels):
            assert (level.h, level.w) == (24 // 2**i, 20 // 2**i)

    def test_too_small_rejected(self):
        e0 = Tensor(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ShapeError, match="too small"):
            build_pyramid(e0, 3)

    def test_out_of_range_base_rejected(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            build_pyramid(Tensor(np.full((1, 1, 8, 8), 1.5)), 1)


class TestBaselines:
    def test_constant_zero_interior(self):
        c = Tensor(np.full((1, 1, 6, 6), 3.0))
        assert np.all(sobel_edge(c).data[:, :, 1:-1, 1:-1] == 0.0)
        assert np.all(laplacian_edge(c).data[:, :, 1:-1, 1:-1] == 0.0)

    def test_linear_ramp_laplacian_interior_zero(self):
        ramp = np.tile(np.arange(8.0), (8, 1)).reshape(1, 1, 8, 8)
        out = laplacian_edge(Tensor(ramp))
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 0.0, atol=1e-5)

    def test_step_edge_matches_hand_convolution(self):
        x = np.zeros((1, 1, 6, 6))
        x[0, 0, :, 3:] = 1.0
        out = sobel_edge(Tensor(x))
        gx = conv2d_ref(x[0, 0], SOBEL_0)
        gy = conv2d_ref(x[0, 0], SOBEL_90)
        assert np.allclose(out.data[0, 0], np.hypot(gx, gy), atol=1e-5)
