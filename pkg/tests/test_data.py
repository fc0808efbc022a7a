"""
Unit tests for synthetic data generators and paired datasets
"""
import numpy as np
import pytest

from src.data import GaussianMixture2D, LinearGaussianProblem, PairedDataset, disk, generate_phantoms, sample_mixture
from src.engine import make_rng
from src.exceptions import CheckpointError


class TestPhantoms:
    """Test image phantom generators"""

    @pytest.mark.parametrize("kind", ['ellipses', 'shapes', 'digits-like'])
    def test_shape_and_range(self, kind):
        """Test phantoms have shape (count, 1, size, size) and values in [0, 1]"""
        images = generate_phantoms(kind, 16, 3, seed=0)
        assert images.shape == (3, 1, 16, 16)
        assert images.min() >= 0.0 and images.max() <= 1.0
        assert images.max() > 0.0

    def test_same_seed_same_images(self):
        """Test phantoms are reproducible from the seed"""
        np.testing.assert_array_equal(generate_phantoms('ellipses', 16, 2, seed=7),
                                      generate_phantoms('ellipses', 16, 2, seed=7))

    def test_smaller_set_is_a_prefix(self):
        """Image i depends only on (seed, kind, i)"""
        small = generate_phantoms('shapes', 16, 2, seed=1)
        large = generate_phantoms('shapes', 16, 5, seed=1)
        np.testing.assert_array_equal(small, large[:2])

    def test_toy_kinds_are_not_images(self):
        """Test toy kinds are refused by the image generator"""
        with pytest.raises(ValueError, match="not an image phantom"):
            generate_phantoms('gaussian-mixture-2d', 16, 1)

    def test_unknown_kind(self):
        """Test an unknown phantom kind is rejected"""
        with pytest.raises(ValueError, match="Invalid phantom kind"):
            generate_phantoms('faces', 16, 1)

    def test_invalid_count(self):
        """Test a zero count is rejected"""
        with pytest.raises(ValueError, match="count must be positive"):
            generate_phantoms('ellipses', 16, 0)

    def test_disk_area(self):
        """Test disk area approximates pi r^2"""
        image = disk(64, 10.0)
        assert image.sum() == pytest.approx(np.pi * 100, rel=0.03)


class TestGaussianMixture:
    """Test the 2D mixture density"""

    def test_density_integrates_to_one(self):
        """Test grid integral of the mixture density is one"""
        mixture = GaussianMixture2D()
        xs = np.linspace(-9.0, 9.0, 361)
        grid = np.stack(np.meshgrid(xs, xs, indexing='ij'), axis=-1).reshape(-1, 2)
        mass = np.exp(mixture.log_density(grid)).sum() * (xs[1] - xs[0]) ** 2
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_entropy_matches_monte_carlo(self):
        """Test quadrature entropy agrees with a Monte Carlo estimate"""
        mixture = GaussianMixture2D()
        samples = sample_mixture(20_000, seed=3, mixture=mixture)
        assert mixture.entropy() == pytest.approx(-mixture.log_density(samples).mean(), abs=0.05)

    def test_single_component_entropy(self):
        """Test one-component entropy equals the Gaussian formula"""
        covariance = np.array([[[1.0, 0.2], [0.2, 0.5]]])
        mixture = GaussianMixture2D(weights=[1.0], means=[[0.0, 0.0]], covariances=covariance)
        expected = 1 + np.log(2 * np.pi) + 0.5 * np.log(np.linalg.det(covariance[0]))
        assert mixture.entropy() == pytest.approx(expected, abs=1e-4)

    def test_sampling_is_seeded(self):
        """Test mixture samples are reproducible from the seed"""
        np.testing.assert_array_equal(sample_mixture(10, seed=2), sample_mixture(10, seed=2))

    def test_invalid_weights(self):
        """Test weights that do not sum to one are rejected"""
        with pytest.raises(ValueError, match="sum to one"):
            GaussianMixture2D(weights=[0.5, 0.6, 0.1])


class TestLinearGaussianProblem:
    """Test the closed-form linear-Gaussian posterior"""

    @pytest.fixture
    def problem(self):
        return LinearGaussianProblem.default(seed=0, noise_std=0.3)

    def test_posterior_matches_gaussian_conditioning(self, problem):
        """Test closed-form posterior against the Kalman-gain formula"""
        A, mu, sigma = problem.matrix, problem.prior_mean, problem.prior_covariance
        gain = sigma @ A.T @ np.linalg.inv(A @ sigma @ A.T + problem.noise_std ** 2 * np.eye(2))
        y = np.array([0.4, -1.2])
        np.testing.assert_allclose(problem.posterior_mean(y), mu + gain @ (y - A @ mu), atol=1e-12)
        np.testing.assert_allclose(problem.posterior_covariance, sigma - gain @ A @ sigma, atol=1e-12)

    def test_batched_posterior_mean(self, problem):
        """Test the posterior mean accepts a batch of measurements"""
        y = np.array([[0.1, 0.2], [1.0, -1.0]])
        np.testing.assert_allclose(problem.posterior_mean(y)[1], problem.posterior_mean(y[1]))

    def test_posterior_is_narrower_than_prior(self, problem):
        """Test observing y shrinks every marginal std"""
        assert np.all(problem.posterior_std() < np.sqrt(np.diag(problem.prior_covariance)))

    def test_sample_shapes(self, problem):
        """Test paired samples have matching counts"""
        x, y = problem.sample(5, make_rng(0, 'test'))
        assert x.shape == (5, 2) and y.shape == (5, 2)

    def test_invalid_noise(self):
        """Test zero noise std is rejected"""
        with pytest.raises(ValueError, match="positive"):
            LinearGaussianProblem(np.eye(2), np.zeros(2), np.eye(2), noise_std=0.0)

    def test_prior_dimension_mismatch(self):
        """Test the prior must match the operator's columns"""
        with pytest.raises(ValueError, match="2 columns"):
            LinearGaussianProblem(np.eye(2), np.zeros(3), np.eye(3))


class TestPairedDataset:
    """Test dataset splitting, batching and the on-disk layout"""

    @pytest.fixture
    def dataset(self):
        rng = np.random.default_rng(0)
        return PairedDataset(rng.random((10, 1, 4, 4)), rng.random((10, 8)), {'problem': 'cs'})

    def test_save_and_load(self, dataset, tmp_path):
        """Test the dataset directory layout round-trips"""
        dataset.save(tmp_path / 'data')
        loaded = PairedDataset.load(tmp_path / 'data')
        np.testing.assert_array_equal(loaded.x, dataset.x)
        np.testing.assert_array_equal(loaded.y, dataset.y)
        assert loaded.meta == {'problem': 'cs'}
        assert sorted(p.name for p in (tmp_path / 'data').iterdir()) == ['manifest.txt', 'x.frt', 'y.frt']

    def test_unconditional_layout(self, tmp_path):
        """Test unconditional datasets write no y.frt"""
        PairedDataset(np.zeros((3, 2))).save(tmp_path)
        loaded = PairedDataset.load(tmp_path)
        assert not loaded.conditional
        assert not (tmp_path / 'y.frt').exists()

    def test_missing_manifest(self, tmp_path):
        """Test loading without a manifest fails"""
        with pytest.raises(CheckpointError, match="manifest not found"):
            PairedDataset.load(tmp_path)

    def test_count_mismatch(self, dataset, tmp_path):
        """Test a manifest count that disagrees with x.frt fails"""
        dataset.save(tmp_path)
        manifest = tmp_path / 'manifest.txt'
        manifest.write_text(manifest.read_text().replace('count 10', 'count 11'))
        with pytest.raises(CheckpointError, match="11 samples"):
            PairedDataset.load(tmp_path)

    def test_split_is_seeded_and_disjoint(self, dataset):
        """Test the split is reproducible and loses no samples"""
        train_a, val_a = dataset.split(0.3, seed=1)
        train_b, _ = dataset.split(0.3, seed=1)
        assert len(train_a) == 7 and len(val_a) == 3
        np.testing.assert_array_equal(train_a.x, train_b.x)
        combined = np.concatenate([train_a.x, val_a.x]).reshape(10, -1)
        assert len(np.unique(combined, axis=0)) == 10

    def test_zero_fraction_validates_on_training_set(self, dataset):
        """Test fraction 0 reuses the training set for validation"""
        train_set, val_set = dataset.split(0.0)
        assert train_set is dataset and val_set is dataset

    def test_batches_cover_every_sample(self, dataset):
        """Test batches cover every index once, last batch short"""
        batches = list(dataset.batches(4))
        assert [len(b) for b in batches] == [4, 4, 2]
        np.testing.assert_array_equal(np.concatenate(batches), np.arange(10))

    def test_mismatched_counts(self):
        """Test signal and measurement counts must agree"""
        with pytest.raises(ValueError, match="3 signals but 2 measurements"):
            PairedDataset(np.zeros((3, 2)), np.zeros((2, 2)))

    def test_empty_dataset(self):
        """Test an empty dataset is rejected"""
        with pytest.raises(ValueError, match="at least one sample"):
            PairedDataset(np.zeros((0, 2)))
