"""
Unit tests for base distributions, invertible layers and flow architectures
"""
import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.engine import ParameterStore, Tape, Tensor, ops, precision
from src.exceptions import ShapeError
from src.flows import (
    BaseDistribution,
    CouplingLayer,
    DownsampleLayer,
    FlattenLayer,
    PermutationLayer,
    UpsampleLayer,
    build_cs_multiscale,
    build_dense,
    build_iunet,
    build_multiscale,
    log_density_normal,
    log_density_radial,
)
from src.flows.base import radial_constant
from src.flows.rearrange import depth_to_space, space_to_depth
from src.models.core import DenseSpec, IUNetSpec, MultiScaleSpec
from tests.conftest import jacobian, randomize


class TestBaseDistributions:
    """Test standard normal and radial Gaussian densities"""

    def test_normal_at_origin(self):
        """Test log N(0; 0, I) in two dimensions"""
        assert log_density_normal(np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_radial_in_one_dimension_is_normal(self):
        """Test the radial density equals the normal for n = 1"""
        z = np.array([0.7])
        assert log_density_radial(z) == pytest.approx(log_density_normal(z), abs=1e-12)

    def test_radial_origin_is_minus_infinity(self):
        """Test the radial density is -inf at the origin"""
        assert log_density_radial(np.zeros(2)) == -np.inf

    def test_radial_unit_norm_in_three_dimensions(self):
        """n = 3, |z| = 1 gives ln(sqrt(2)/(sqrt(pi) 4 pi)) - 1/2"""
        z = np.array([1.0, 0.0, 0.0])
        assert log_density_radial(z) == pytest.approx(-3.2568, abs=1e-4)
        assert radial_constant(3) - 0.5 == pytest.approx(log_density_radial(z), abs=1e-12)

    def test_radial_density_integrates_to_one(self):
        """Polar quadrature of the 2D radial density"""
        def integrand(r):
            return 2 * math.pi * r * math.exp(log_density_radial(np.array([r, 0.0])))

        total, _ = integrate.quad(integrand, 0.0, 12.0)
        assert total == pytest.approx(1.0, rel=0.02)

    def test_radial_sample_norms_are_half_normal(self):
        """Mean radius of radial samples is sqrt(2/pi)"""
        base = BaseDistribution('radial-gaussian', 16)
        samples = base.sample(100_000, np.random.default_rng(0))
        radius = np.linalg.norm(samples, axis=1)
        assert radius.mean() == pytest.approx(math.sqrt(2 / math.pi), rel=0.01)

    def test_radial_sampler_agrees_with_density(self):
        """n = 3: log-densities of sampled points match draws from the density's own radial law (KS at 1%)"""
        base = BaseDistribution('radial-gaussian', 3)
        constructed = log_density_radial(base.sample(5000, np.random.default_rng(11)))

        # inverse-CDF draws of the radius from S_3 r^2 p(r e_1), direction irrelevant by symmetry
        radii = np.linspace(1e-6, 9.0, 40_001)
        axis = np.stack([radii, np.zeros_like(radii), np.zeros_like(radii)], axis=1)
        marginal = 4 * math.pi * radii ** 2 * np.exp(log_density_radial(axis))
        cdf = integrate.cumulative_trapezoid(marginal, radii, initial=0.0)
        assert cdf[-1] == pytest.approx(1.0, abs=1e-4)
        drawn = np.interp(np.random.default_rng(12).random(5000), cdf / cdf[-1], radii)
        reference = log_density_radial(np.stack([drawn, np.zeros(5000), np.zeros(5000)], axis=1))

        assert stats.ks_2samp(constructed, reference).pvalue > 0.01

    def test_normal_sample_moments(self):
        """Standard normal draws have zero mean"""
        base = BaseDistribution('standard-normal', 3)
        samples = base.sample(50_000, np.random.default_rng(1))
        assert samples.shape == (50_000, 3)
        np.testing.assert_allclose(samples.mean(axis=0), 0.0, atol=0.02)

    def test_recorded_log_prob_matches_reference(self, float64, rng):
        """The taped density agrees with the NumPy reference, origin included"""
        base = BaseDistribution('radial-gaussian', 4)
        z = rng.standard_normal((3, 4))
        z[1] = 0.0
        values = base.log_prob(Tensor(z)).data
        expected = log_density_radial(z)
        assert values[1] == -np.inf
        np.testing.assert_allclose(values[[0, 2]], expected[[0, 2]], rtol=1e-12)

    def test_log_prob_checks_dimension(self, float64):
        """Test a latent batch of the wrong width is rejected"""
        with pytest.raises(ValueError, match="latent batch"):
            BaseDistribution('standard-normal', 4).log_prob(Tensor(np.zeros((2, 3))))

    def test_invalid_kind(self):
        """Test an unknown base kind is rejected"""
        with pytest.raises(ValueError, match="Invalid base"):
            BaseDistribution('laplace', 2)


class TestCouplingLayer:
    """Test coupling invertibility and log-determinants"""

    @pytest.fixture
    def params(self, float64):
        return ParameterStore(seed=0, dtype=np.float64)

    def test_fresh_layer_is_identity(self, params, rng):
        """Test zero-initialised couplings start as the identity"""
        layer = CouplingLayer('c', params, (4, 4, 4))
        x = Tensor(rng.standard_normal((2, 4, 4, 4)))
        y, logdet = layer.forward(x, params)
        np.testing.assert_array_equal(y.data, x.data)
        np.testing.assert_array_equal(logdet.data, 0.0)

    @pytest.mark.parametrize("shape", [(4, 4, 4), (1, 4, 4), (8,)])
    def test_affine_round_trip(self, params, rng, shape):
        """Test affine inverse restores x and negates the log-det"""
        layer = CouplingLayer('c', params, shape, kind='affine')
        randomize(params, seed=1)
        x = Tensor(rng.standard_normal((3,) + shape))
        y, forward_logdet = layer.forward(x, params)
        restored, inverse_logdet = layer.inverse(y, params)
        assert np.max(np.abs(restored.data - x.data)) < 1e-10
        np.testing.assert_allclose(forward_logdet.data, -inverse_logdet.data, atol=1e-12)

    def test_single_channel_uses_checkerboard(self, params):
        """Test single-channel inputs get the checkerboard partition"""
        layer = CouplingLayer('c', params, (1, 4, 4))
        assert layer.partition.value == 'checkerboard'

    def test_checkerboard_keeps_passive_pixels(self, params, rng):
        """Test passive checkerboard pixels pass through unchanged"""
        layer = CouplingLayer('c', params, (1, 4, 4), parity=0)
        randomize(params, seed=2)
        x = Tensor(rng.standard_normal((1, 1, 4, 4)))
        y, _ = layer.forward(x, params)
        passive = layer._passive_mask.astype(bool)
        np.testing.assert_array_equal(y.data[passive], x.data[passive])

    @pytest.mark.parametrize("shape", [(8,), (2, 2, 2)])
    def test_logdet_matches_numeric_jacobian(self, params, rng, shape):
        """Reported log-det equals ln|det J| from central differences"""
        layer = CouplingLayer('c', params, shape, kind='affine', clamp=2.0, hidden=8)
        randomize(params, seed=3, scale=0.3)
        x0 = rng.standard_normal(int(np.prod(shape)))

        def f(flat):
            y, _ = layer.forward(Tensor(flat.reshape((1,) + shape)), params)
            return y.data.reshape(-1)

        _, logdet = layer.forward(Tensor(x0.reshape((1,) + shape)), params)
        _, expected = np.linalg.slogdet(jacobian(f, x0))
        assert logdet.data[0] == pytest.approx(expected, rel=1e-3, abs=1e-6)

    def test_additive_logdet_is_zero(self, params, rng):
        """Test additive couplings are volume preserving"""
        layer = CouplingLayer('c', params, (4, 2, 2), kind='additive')
        randomize(params, seed=4)
        y, logdet = layer.forward(Tensor(rng.standard_normal((2, 4, 2, 2))), params)
        np.testing.assert_array_equal(logdet.data, 0.0)

    def test_clamp_bounds_scales(self, params, rng):
        """Per-entry log scale never exceeds the clamp"""
        layer = CouplingLayer('c', params, (2,), kind='affine', clamp=0.5, hidden=4)
        randomize(params, seed=5, scale=10.0)
        _, logdet = layer.forward(Tensor(100 * rng.standard_normal((4, 2))), params)
        assert np.all(np.abs(logdet.data) <= 0.5 + 1e-12)

    def test_conditional_layer_needs_features(self, params, rng):
        """Test a conditional coupling refuses missing features"""
        layer = CouplingLayer('c', params, (2, 4, 4), cond_channels=3)
        with pytest.raises(ValueError, match="needs conditioning features"):
            layer.forward(Tensor(np.zeros((1, 2, 4, 4))), params)

    def test_feature_extent_mismatch(self, params):
        """Test features of the wrong extent are rejected"""
        layer = CouplingLayer('c', params, (2, 4, 4), cond_channels=3)
        with pytest.raises(ShapeError):
            layer.forward(Tensor(np.zeros((1, 2, 4, 4))), params, Tensor(np.zeros((1, 3, 2, 2))))

    def test_features_change_the_output(self, params, rng):
        """Test the coupling output depends on h"""
        layer = CouplingLayer('c', params, (2, 4, 4), cond_channels=3)
        randomize(params, seed=6)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        first, _ = layer.forward(x, params, Tensor(np.zeros((1, 3, 4, 4))))
        second, _ = layer.forward(x, params, Tensor(np.ones((1, 3, 4, 4))))
        assert not np.allclose(first.data, second.data)

    def test_memory_efficient_gradients_match(self, params, rng):
        """Recomputing activations in backward gives the stored-activation gradients"""
        layer = CouplingLayer('c', params, (2, 4, 4), cond_channels=2, hidden=6)
        randomize(params, seed=7)
        x = rng.standard_normal((2, 2, 4, 4))
        h = rng.standard_normal((2, 2, 4, 4))

        def gradients(memory_efficient):
            layer.memory_efficient = memory_efficient
            params.zero_grad()
            x_leaf = Tensor(x, requires_grad=True)
            h_leaf = Tensor(h, requires_grad=True)
            with Tape() as tape:
                y, logdet = layer.forward(x_leaf, params, h_leaf)
                loss = ops.add(ops.sum(ops.square(y)), ops.sum(logdet))
            tape.backward(loss, store=params)
            return tape.grad(x_leaf), tape.grad(h_leaf), {n: params.grads[n].copy() for n in layer.param_names}

        stored = gradients(False)
        recomputed = gradients(True)
        np.testing.assert_allclose(recomputed[0], stored[0], atol=1e-10)
        np.testing.assert_allclose(recomputed[1], stored[1], atol=1e-10)
        for name in layer.param_names:
            np.testing.assert_allclose(recomputed[2][name], stored[2][name], atol=1e-10)


class TestRearrangement:
    """Test volume-preserving layers"""

    def test_space_to_depth_order(self, float64):
        """Test the 2x2 block order of space-to-depth"""
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(space_to_depth(x).data.reshape(-1), [1.0, 2.0, 3.0, 4.0])

    def test_depth_to_space_inverts(self, float64, rng):
        """Test depth-to-space undoes space-to-depth"""
        x = Tensor(rng.standard_normal((2, 3, 4, 6)))
        np.testing.assert_array_equal(depth_to_space(space_to_depth(x)).data, x.data)

    def test_haar_of_constant(self, float64):
        """A constant image has only an average band of value 2v"""
        layer = DownsampleLayer('d', 'haar')
        y, logdet = layer.forward(Tensor(np.full((1, 1, 4, 4), 3.0)), None)
        assert y.shape == (1, 4, 2, 2)
        np.testing.assert_allclose(y.data[0, 0], 6.0)
        np.testing.assert_allclose(y.data[0, 1:], 0.0, atol=1e-15)
        np.testing.assert_array_equal(logdet.data, 0.0)

    @pytest.mark.parametrize("kind", ['haar', 'checkerboard'])
    def test_downsample_round_trip(self, float64, rng, kind):
        """Test downsampling is orthogonal and invertible"""
        layer = DownsampleLayer('d', kind)
        x = Tensor(rng.standard_normal((2, 2, 4, 4)))
        y, _ = layer.forward(x, None)
        restored, _ = layer.inverse(y, None)
        np.testing.assert_allclose(restored.data, x.data, atol=1e-14)
        assert np.linalg.norm(y.data) == pytest.approx(np.linalg.norm(x.data))

    def test_upsample_inverts_downsample(self, float64, rng):
        """Test the upsampling layer mirrors downsampling"""
        x = Tensor(rng.standard_normal((1, 4, 2, 2)))
        up, _ = UpsampleLayer('u').forward(x, None)
        assert up.shape == (1, 1, 4, 4)
        down, _ = DownsampleLayer('d').forward(up, None)
        np.testing.assert_allclose(down.data, x.data, atol=1e-14)

    def test_odd_extent_rejected(self, float64):
        """Test odd extents cannot be downsampled"""
        with pytest.raises(ShapeError, match="even"):
            DownsampleLayer('d').forward(Tensor(np.zeros((1, 1, 3, 4))), None)

    def test_orthogonal_mix_preserves_norm(self, float64, rng):
        """Test the orthogonal channel mix preserves norms and inverts"""
        layer = PermutationLayer('p', 6, 'fixed-orthogonal-mix', seed=3)
        x = Tensor(rng.standard_normal((2, 6, 3, 3)))
        y, _ = layer.forward(x, None)
        np.testing.assert_allclose(np.linalg.norm(y.data.reshape(2, -1), axis=1),
                                   np.linalg.norm(x.data.reshape(2, -1), axis=1))
        restored, _ = layer.inverse(y, None)
        np.testing.assert_allclose(restored.data, x.data, atol=1e-13)

    def test_shuffle_is_a_non_identity_permutation(self):
        """Test the shuffle is a proper permutation"""
        layer = PermutationLayer('p', 5, 'random-shuffle', seed=0)
        assert not np.array_equal(layer.matrix, np.eye(5))
        np.testing.assert_array_equal(layer.matrix.sum(axis=0), 1.0)

    def test_flatten_round_trip(self, float64, rng):
        """Test flatten reshapes and restores"""
        layer = FlattenLayer('f', (2, 3, 3))
        x = Tensor(rng.standard_normal((4, 2, 3, 3)))
        y, _ = layer.forward(x, None)
        assert y.shape == (4, 18)
        np.testing.assert_array_equal(layer.inverse(y, None)[0].data, x.data)


class TestArchitectures:
    """Test whole-model passes and builders"""

    def test_multiscale_dimension_and_round_trip(self, float64, rng):
        """Test the multi-scale flow keeps the dimension and inverts"""
        params = ParameterStore(seed=0, dtype=np.float64)
        model = build_multiscale(MultiScaleSpec(input_shape=(1, 16, 16), scales=2, hidden_channels=8), params)
        assert model.dim == 256
        assert len(model.latent_layout) == 2
        randomize(params, seed=1, scale=0.05)
        x = Tensor(rng.standard_normal((2, 1, 16, 16)))
        assert model.round_trip_residual(x) < 1e-10

    def test_multiscale_requires_divisible_extent(self):
        """Test extents must divide by 2^scales"""
        with pytest.raises(ShapeError, match="divisible"):
            build_multiscale(MultiScaleSpec(input_shape=(1, 6, 6), scales=2))

    def test_multiscale_with_dense_tail(self, float64, rng):
        """Test the optional dense tail inverts"""
        params = ParameterStore(seed=0, dtype=np.float64)
        spec = MultiScaleSpec(input_shape=(1, 8, 8), scales=1, hidden_channels=4, final_dense=2)
        model = build_multiscale(spec, params)
        randomize(params, seed=2, scale=0.05)
        assert model.round_trip_residual(Tensor(rng.standard_normal((2, 1, 8, 8)))) < 1e-10

    def test_conditional_multiscale_slots(self, float64, rng):
        """Test one conditioning slot per scale at the scale's extent"""
        params = ParameterStore(seed=0, dtype=np.float64)
        spec = MultiScaleSpec(input_shape=(1, 8, 8), scales=2, hidden_channels=4, cond_channels=3)
        model = build_multiscale(spec, params)
        assert [(s.channels, s.extent) for s in model.slots] == [(3, (8, 8)), (3, (4, 4))]
        randomize(params, seed=3, scale=0.05)
        h = [Tensor(rng.standard_normal((2, 3, 8, 8))), Tensor(rng.standard_normal((2, 3, 4, 4)))]
        assert model.round_trip_residual(Tensor(rng.standard_normal((2, 1, 8, 8))), h) < 1e-10
        with pytest.raises(ValueError, match="conditioning features"):
            model.forward(Tensor(np.zeros((1, 1, 8, 8))))

    def test_cs_appendix_dimension(self):
        """Test the CS layout factors out 656 then 128 dimensions"""
        model = build_cs_multiscale(repeats=1, hidden=4, dense_hidden=8, cond_channels=0)
        assert model.dim == 784
        assert model.latent_layout == [(656,), (128,)]

    def test_iunet_round_trip(self, float64, rng):
        """Test the iUNet inverts with affine couplings"""
        params = ParameterStore(seed=0, dtype=np.float64)
        model = build_iunet(IUNetSpec(input_shape=(1, 8, 8), scales=3, coupling='affine', hidden_channels=4), params)
        assert model.dim == 64
        randomize(params, seed=4, scale=0.05)
        assert model.round_trip_residual(Tensor(rng.standard_normal((2, 1, 8, 8)))) < 1e-10

    def test_likelihood_from_both_directions(self, float64, rng):
        """Test likelihood from x and from its latent agree"""
        params = ParameterStore(seed=0, dtype=np.float64)
        model = build_multiscale(MultiScaleSpec(input_shape=(1, 8, 8), scales=2, hidden_channels=4,
                                                base='radial-gaussian'), params)
        randomize(params, seed=5, scale=0.05)
        x = Tensor(rng.standard_normal((3, 1, 8, 8)))
        z, _ = model.forward(x)
        np.testing.assert_allclose(model.log_likelihood_from_latent(z).data, model.log_likelihood(x).data, atol=1e-8)

    def test_identity_flow_likelihood_at_origin(self, float64):
        """A fresh dense flow is volume preserving: log p(0) = -2 ln(2 pi) in 4 dimensions"""
        model = build_dense(DenseSpec(dim=4, couplings=2, hidden=8))
        value = model.log_likelihood(Tensor(np.zeros((1, 4)))).data[0]
        assert value == pytest.approx(-2 * math.log(2 * math.pi), abs=1e-10)

    def test_trace_sums_to_total_logdet(self, float64, rng):
        """Test per-layer log-dets sum to the total"""
        params = ParameterStore(seed=0, dtype=np.float64)
        model = build_dense(DenseSpec(dim=4, couplings=3, hidden=8), params)
        randomize(params, seed=6)
        trace = []
        _, logdet = model.forward(Tensor(rng.standard_normal((2, 4))), trace=trace)
        assert len(trace) == len(model.layers)
        np.testing.assert_allclose(sum(t.data for t in trace), logdet.data, atol=1e-12)

    def test_sample_shape(self, float64):
        """Test samples come back in image shape"""
        model = build_multiscale(MultiScaleSpec(input_shape=(1, 8, 8), scales=1, hidden_channels=4))
        assert model.sample(3, np.random.default_rng(0)).shape == (3, 1, 8, 8)

    def test_unconditional_rejects_features(self, float64):
        """Test an unconditional flow refuses features"""
        model = build_dense(DenseSpec(dim=2, couplings=1, hidden=4))
        with pytest.raises(ValueError, match="Unconditional"):
            model.forward(Tensor(np.zeros((1, 2))), [Tensor(np.zeros((1, 3)))])

    def test_manifest_lists_every_step(self):
        """Test the manifest has one line per step"""
        model = build_dense(DenseSpec(dim=4, couplings=2, hidden=8))
        manifest = model.manifest()
        assert manifest.startswith('architecture dense\n')
        assert manifest.count('\nstep ') == len(model.steps)


LAYER_CASES = {
    'affine-conditional': (lambda p: CouplingLayer('c', p, (2, 4, 4), kind='affine', hidden=6, cond_channels=2),
                           (2, 4, 4), (2, 4, 4)),
    'additive-conditional': (lambda p: CouplingLayer('c', p, (2, 4, 4), kind='additive', hidden=6, cond_channels=2),
                             (2, 4, 4), (2, 4, 4)),
    'affine-checkerboard': (lambda p: CouplingLayer('c', p, (1, 4, 4), kind='affine', hidden=6), (1, 4, 4), None),
    'affine-flat': (lambda p: CouplingLayer('c', p, (6,), kind='affine', hidden=8), (6,), None),
    'haar': (lambda p: DownsampleLayer('d', 'haar'), (2, 4, 4), None),
    'checkerboard': (lambda p: DownsampleLayer('d', 'checkerboard'), (2, 4, 4), None),
    'upsample': (lambda p: UpsampleLayer('u'), (4, 2, 2), None),
    'orthogonal-mix': (lambda p: PermutationLayer('p', 4, 'fixed-orthogonal-mix', seed=2), (4, 3, 3), None),
    'shuffle': (lambda p: PermutationLayer('p', 4, 'random-shuffle', seed=2), (4, 3, 3), None),
    'flatten': (lambda p: FlattenLayer('f', (2, 3, 3)), (2, 3, 3), None),
}

TOLERANCES = [(np.float32, 1e-4), (np.float64, 1e-10)]


class TestInvertibility:
    """Test inverse(forward(x)) = x over many random inputs, parameters and features"""

    @pytest.mark.parametrize("dtype, tolerance", TOLERANCES)
    @pytest.mark.parametrize("case", sorted(LAYER_CASES))
    def test_every_layer_over_100_triples(self, case, dtype, tolerance):
        """10 parameter draws with 10 (x, h) pairs each"""
        factory, shape, cond_shape = LAYER_CASES[case]
        worst = 0.0
        with precision(dtype):
            params = ParameterStore(seed=0, dtype=dtype)
            layer = factory(params)
            for draw in range(10):
                randomize(params, seed=draw, scale=0.1)
                rng = np.random.default_rng(100 + draw)
                x = Tensor(rng.standard_normal((10,) + shape).astype(dtype))
                h = Tensor(rng.standard_normal((10,) + cond_shape).astype(dtype)) if cond_shape else None
                y, forward_logdet = layer.forward(x, params, h)
                restored, inverse_logdet = layer.inverse(y, params, h)
                worst = max(worst, float(np.max(np.abs(restored.data - x.data))))
                np.testing.assert_allclose(forward_logdet.data, -inverse_logdet.data, atol=10 * tolerance)
        assert worst <= tolerance

    @pytest.mark.parametrize("dtype, tolerance", TOLERANCES)
    @pytest.mark.parametrize("architecture", ['multiscale', 'iunet'])
    def test_three_scale_models_on_16x16(self, architecture, dtype, tolerance):
        """100 random inputs under each of 5 parameter draws"""
        worst = 0.0
        with precision(dtype):
            for draw in range(5):
                params = ParameterStore(seed=draw, dtype=dtype)
                if architecture == 'multiscale':
                    model = build_multiscale(MultiScaleSpec(input_shape=(1, 16, 16), scales=3, hidden_channels=8,
                                                            seed=draw), params)
                else:
                    model = build_iunet(IUNetSpec(input_shape=(1, 16, 16), scales=3, coupling='affine',
                                                  hidden_channels=8, seed=draw), params)
                randomize(params, seed=draw, scale=0.05)
                x = np.random.default_rng(draw).standard_normal((100, 1, 16, 16)).astype(dtype)
                worst = max(worst, model.round_trip_residual(Tensor(x)))
        assert worst <= tolerance
