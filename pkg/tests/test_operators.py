"""
Unit tests for measurement operators, inversion layers and noise models
"""
import numpy as np
import pytest

from src.data import disk, generate_phantoms
from src.exceptions import MeasurementMismatchError
from src.operators import (
    FourierOperator,
    MatrixOperator,
    RadonOperator,
    add_relative_gaussian_noise,
    forward_difference,
    forward_difference_adjoint,
    gaussian_matrix,
    make_mask,
    poisson_lowdose_noise,
    zero_filled_ifft,
)
from src.services.metrics import psnr


def _adjoint_gap(operator, rng):
    x = rng.standard_normal(operator.image_shape)
    y = rng.standard_normal(operator.measurement_shape)
    lhs = np.sum(operator.forward(x) * y)
    rhs = np.sum(x * operator.adjoint(y))
    return abs(lhs - rhs) / max(abs(lhs), 1e-12)


class TestMatrixOperator:
    """Test Gaussian compressed-sensing operators"""

    def test_entry_variance(self):
        """Test matrix entries have variance 1/m"""
        operator = gaussian_matrix(100, 400, seed=0)
        assert operator.matrix.var() == pytest.approx(1 / 100, rel=0.05)
        assert operator.kind == 'gaussian'

    def test_same_seed_same_matrix(self):
        """Test the matrix is reproducible from the seed"""
        np.testing.assert_array_equal(gaussian_matrix(8, 16, seed=3).matrix, gaussian_matrix(8, 16, seed=3).matrix)
        assert not np.array_equal(gaussian_matrix(8, 16, seed=3).matrix, gaussian_matrix(8, 16, seed=4).matrix)

    def test_adjoint(self, rng):
        """Test <Ax, y> = <x, A^T y> for the matrix operator"""
        operator = gaussian_matrix(12, 16, seed=1, image_shape=(4, 4))
        assert _adjoint_gap(operator, rng) < 1e-12

    def test_batched_forward(self, rng):
        """Test batched forward equals per-image forward"""
        operator = gaussian_matrix(6, 16, image_shape=(4, 4))
        x = rng.standard_normal((3, 4, 4))
        np.testing.assert_allclose(operator.forward(x)[1], operator.forward(x[1]))

    def test_pseudo_inverse_is_minimum_norm(self, rng):
        """A^+ y equals the SVD pseudo-inverse, i.e. the projection onto the row space"""
        operator = gaussian_matrix(8, 16, seed=2)
        x = rng.standard_normal(16)
        y = operator.forward(x)
        estimate = operator.pseudo_inverse(y)
        np.testing.assert_allclose(estimate, np.linalg.pinv(operator.matrix) @ y, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(operator.forward(estimate), y, atol=1e-6)

    def test_pseudo_inverse_of_identity(self, rng):
        """Test the pseudo-inverse of the identity returns y"""
        operator = MatrixOperator(np.eye(5))
        y = rng.standard_normal(5)
        np.testing.assert_allclose(operator.approximate_inverse(y), y, atol=1e-10)

    def test_tall_matrix_least_squares(self, rng):
        """Test tall matrices give the least-squares solution"""
        matrix = rng.standard_normal((20, 5))
        y = rng.standard_normal(20)
        estimate = MatrixOperator(matrix).pseudo_inverse(y)
        np.testing.assert_allclose(estimate, np.linalg.lstsq(matrix, y, rcond=None)[0], rtol=1e-5, atol=1e-8)

    def test_tv_inverse_keeps_constants(self):
        """Constant images have zero gradient, so the TV solve returns them exactly"""
        operator = MatrixOperator(np.eye(16), image_shape=(4, 4), inversion='tv', tv_lambda=0.5)
        estimate = operator.approximate_inverse(np.full(16, 3.0))
        np.testing.assert_allclose(estimate, 3.0, atol=1e-5)

    def test_tv_inverse_smooths_noise(self, rng):
        """Test the TV solve has less total variation than its input"""
        operator = MatrixOperator(np.eye(64), image_shape=(8, 8), inversion='tv', tv_lambda=1.0)
        noisy = rng.standard_normal(64)
        estimate = operator.approximate_inverse(noisy)
        assert np.abs(forward_difference(estimate)).sum() < np.abs(forward_difference(noisy.reshape(8, 8))).sum()

    def test_invalid_inversion(self):
        """Test FBP is refused for matrix operators"""
        with pytest.raises(ValueError, match="not available"):
            MatrixOperator(np.eye(4), inversion='fbp')

    def test_measurement_mismatch(self):
        """Test measurements of the wrong length are rejected"""
        operator = gaussian_matrix(8, 16)
        with pytest.raises(MeasurementMismatchError):
            operator.approximate_inverse(np.zeros(5))

    def test_difference_adjoint(self, rng):
        """Test the forward-difference adjoint identity"""
        x = rng.standard_normal((5, 6))
        g = rng.standard_normal((2, 5, 6))
        assert np.sum(forward_difference(x) * g) == pytest.approx(np.sum(x * forward_difference_adjoint(g)))


class TestRadonOperator:
    """Test the parallel-beam projector and filtered back-projection"""

    def test_adjoint(self, rng):
        """Test the backprojection is the transpose of the projector"""
        operator = RadonOperator(12, 10)
        assert _adjoint_gap(operator, rng) < 1e-10

    def test_default_detector_count_covers_diagonal(self):
        """Test the default detector row spans the image diagonal"""
        operator = RadonOperator(64, 90)
        assert operator.n_detectors == 91
        assert operator.measurement_shape == (90, 91)

    def test_disk_chord_profile(self):
        """Sinogram of a centered disk follows 2 sqrt(R^2 - s^2) at every angle"""
        radius = 10.0
        operator = RadonOperator(32, 8)
        sinogram = operator.forward(disk(32, radius))
        inner = np.abs(operator.offsets) <= radius - 2
        expected = 2 * np.sqrt(radius ** 2 - operator.offsets[inner] ** 2)
        for row in sinogram:
            assert np.max(np.abs(row[inner] - expected)) <= 2.0
        outside = np.abs(operator.offsets) >= radius + 2
        assert np.all(sinogram[:, outside] == 0)

    def test_fbp_is_linear(self, rng):
        """Test FBP is linear in the sinogram"""
        operator = RadonOperator(16, 12)
        sinogram = rng.random(operator.measurement_shape)
        np.testing.assert_allclose(operator.fbp(2 * sinogram), 2 * operator.fbp(sinogram), atol=1e-12)

    @pytest.mark.slow
    def test_fbp_round_trip_quality(self):
        """Test noise-free FBP at 64x64 with 90 angles reaches 25 dB"""
        phantom = generate_phantoms('ellipses', 64, 1, seed=0)[0, 0]
        operator = RadonOperator(64, 90, n_detectors=95)
        reconstruction = operator.fbp(operator.forward(phantom))
        assert psnr(reconstruction, phantom) >= 25.0

    def test_invalid_attenuation(self):
        """Test zero attenuation is rejected"""
        with pytest.raises(ValueError, match="Attenuation"):
            RadonOperator(8, 4, attenuation=0)


class TestFourierOperator:
    """Test column masks and masked Fourier sampling"""

    def test_mask_budget_and_center_block(self):
        """Test the mask selects width/acceleration columns including the center"""
        mask = make_mask(32, center_fraction=0.08, acceleration=4, seed=0)
        assert mask.selected == 8
        assert mask.columns[15] and mask.columns[16]

    def test_full_sampling(self):
        """Test acceleration 1 selects every column"""
        assert make_mask(32, acceleration=1).selected == 32

    def test_mask_is_seeded(self):
        """Test masks are reproducible from the seed"""
        np.testing.assert_array_equal(make_mask(64, seed=5).columns, make_mask(64, seed=5).columns)

    def test_center_block_exceeding_budget(self):
        """Test a center block larger than the budget is rejected"""
        with pytest.raises(ValueError, match="exceeds the budget"):
            make_mask(32, center_fraction=0.5, acceleration=4)

    def test_full_mask_preserves_energy(self, rng):
        """Test the full mask is unitary and its inverse returns |x|"""
        operator = FourierOperator(make_mask(16, acceleration=1))
        x = rng.standard_normal((16, 16))
        y = operator.forward(x)
        assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x))
        np.testing.assert_allclose(operator.approximate_inverse(y), np.abs(x), atol=1e-12)

    def test_zero_filled_energy_does_not_grow(self, rng):
        """Test zero filling never adds energy"""
        mask = make_mask(16, acceleration=4, seed=1)
        operator = FourierOperator(mask)
        x = rng.standard_normal((16, 16))
        assert np.linalg.norm(zero_filled_ifft(operator.forward(x), mask)) <= np.linalg.norm(x) + 1e-12

    def test_adjoint(self, rng):
        """Test the masked Fourier adjoint identity"""
        operator = FourierOperator(make_mask(16, seed=2))
        assert _adjoint_gap(operator, rng) < 1e-12

    def test_rectangular_images(self, rng):
        """Test non-square images give (2, h, w) k-space"""
        operator = FourierOperator(make_mask(16, seed=0), height=8)
        assert operator.forward(rng.standard_normal((8, 16))).shape == (2, 8, 16)

    def test_k_space_width_mismatch(self):
        """Test k-space must match the mask width"""
        with pytest.raises(ValueError, match="does not fit"):
            zero_filled_ifft(np.zeros((2, 8, 8)), make_mask(16))


class TestNoise:
    """Test Gaussian and Poisson measurement noise"""

    def test_zero_level_returns_copy(self):
        """Test zero noise returns an unaliased copy"""
        y = np.arange(5.0)
        noisy = add_relative_gaussian_noise(y, 0.0)
        np.testing.assert_array_equal(noisy, y)
        assert noisy is not y

    def test_relative_level(self):
        """Test the noise norm is 10% of the signal norm"""
        y = np.random.default_rng(0).standard_normal(10_000)
        noisy = add_relative_gaussian_noise(y, 0.1, seed=1)
        assert np.linalg.norm(noisy - y) / np.linalg.norm(y) == pytest.approx(0.1, rel=0.03)

    def test_componentwise_keeps_zeros(self):
        """Test componentwise noise leaves zero entries alone"""
        y = np.array([0.0, 1.0, 0.0, 2.0])
        noisy = add_relative_gaussian_noise(y, 0.5, seed=0, mode='componentwise')
        assert noisy[0] == 0.0 and noisy[2] == 0.0

    def test_noise_is_seeded(self):
        """Test noise is reproducible from the seed"""
        y = np.ones(10)
        np.testing.assert_array_equal(add_relative_gaussian_noise(y, 0.1, seed=4),
                                      add_relative_gaussian_noise(y, 0.1, seed=4))

    def test_negative_level(self):
        """Test a negative level is rejected"""
        with pytest.raises(ValueError, match="non-negative"):
            add_relative_gaussian_noise(np.ones(3), -0.1)

    @pytest.mark.parametrize("attenuation", [1.0, 0.5])
    def test_high_dose_poisson_is_nearly_clean(self, attenuation):
        """Test high photon counts barely perturb the sinogram"""
        sinogram = np.linspace(0.0, 2.0, 50)
        noisy = poisson_lowdose_noise(sinogram, photon_count=1e8, seed=0, attenuation=attenuation)
        np.testing.assert_allclose(noisy, sinogram, atol=5e-3)

    def test_low_dose_poisson_is_noisier(self):
        """Test fewer photons give more noise"""
        sinogram = np.full(2000, 1.0)
        low = poisson_lowdose_noise(sinogram, photon_count=100, seed=0)
        high = poisson_lowdose_noise(sinogram, photon_count=10_000, seed=0)
        assert np.std(low) > np.std(high)

    def test_negative_sinogram(self):
        """Test negative line integrals are rejected"""
        with pytest.raises(ValueError, match="non-negative"):
            poisson_lowdose_noise(np.array([-1.0, 0.0]))
