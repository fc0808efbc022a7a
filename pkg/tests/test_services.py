"""
Unit tests for optimisation, training, checkpoints, inference and metrics
"""
import numpy as np
import pandas as pd
import pytest

from src.conditioning import Conditioner
from src.data import PairedDataset, sample_mixture
from src.engine import ParameterStore, save_archive
from src.exceptions import CheckpointError
from src.flows import build_dense, build_multiscale
from src.models.core import ConditionerSpec, DenseSpec, MultiScaleSpec, TrainConfig
from src.operators import MatrixOperator, gaussian_matrix
from src.services import (
    Adam,
    ArchiveCheckpointStore,
    PlateauScheduler,
    Trainer,
    adam_step,
    aggregate_metrics,
    metrics_table,
    posterior_samples,
    psnr,
    read_checkpoint,
    refine_sweep,
    sample_refine,
    ssim,
    train,
)
from src.services.metrics import format_summary, gaussian_window
from src.services.trainer import HISTORY_COLUMNS, dequantize
from tests.conftest import randomize


def _mixture_setup(seed=0, count=64):
    params = ParameterStore(seed=seed, dtype=np.float64)
    model = build_dense(DenseSpec(dim=2, couplings=4, hidden=16, seed=seed), params)
    dataset = PairedDataset(sample_mixture(count, seed=seed))
    return model, dataset


def _fast_config(**overrides):
    settings = dict(learning_rate=1e-2, epochs=3, batch_size=16, validation_fraction=0.25, seed=0)
    settings.update(overrides)
    return TrainConfig(**settings)


class TestAdam:
    """Test bias-corrected Adam updates"""

    def test_first_step_moves_by_learning_rate(self):
        """Test the first bias-corrected step has size lr"""
        params = ParameterStore(dtype=np.float64)
        params.create('w', (3,), init='zeros')
        params.accumulate('w', np.array([0.5, -2.0, 10.0]))
        adam_step(params, 1e-3)
        np.testing.assert_allclose(params.values['w'], [-1e-3, 1e-3, -1e-3], rtol=1e-4)
        assert params.step == 1

    def test_frozen_parameters_are_untouched(self):
        """Test frozen parameters keep their values"""
        params = ParameterStore(dtype=np.float64)
        params.create('cond.w', (2,), init='zeros')
        params.create('flow.w', (2,), init='zeros')
        params.freeze('cond.')
        params.grads['cond.w'] = np.ones(2)
        params.accumulate('flow.w', np.ones(2))
        Adam().step(params, 0.1)
        np.testing.assert_array_equal(params.values['cond.w'], 0.0)
        assert np.all(params.values['flow.w'] < 0)

    def test_step_counter_advances_without_gradient(self):
        """Test a step without gradients still counts"""
        params = ParameterStore(dtype=np.float64)
        params.create('w', (2,), init='zeros')
        adam_step(params, 1e-3)
        np.testing.assert_array_equal(params.values['w'], 0.0)
        assert params.step == 1

    def test_invalid_learning_rate(self):
        """Test a non-positive learning rate is rejected"""
        with pytest.raises(ValueError, match="positive"):
            adam_step(ParameterStore(), 0.0)


class TestPlateauScheduler:
    """Test plateau learning-rate reduction"""

    def test_two_reductions(self):
        """Test two reductions by 0.8 after two plateaus"""
        scheduler = PlateauScheduler(1e-4, factor=0.8, patience=2)
        scheduler.observe(1.0)
        reductions = [scheduler.observe(1.0) for _ in range(4)]
        assert reductions == [False, True, False, True]
        assert scheduler.learning_rate == pytest.approx(6.4e-5)

    def test_improvement_resets_patience(self):
        """Test an improvement resets the bad-epoch count"""
        scheduler = PlateauScheduler(1.0, factor=0.5, patience=2)
        for value in [3.0, 3.5, 2.0, 2.5]:
            scheduler.observe(value)
        assert scheduler.learning_rate == 1.0

    def test_state_round_trip(self):
        """Test scheduler state survives a round trip"""
        scheduler = PlateauScheduler(1.0, factor=0.5, patience=1)
        scheduler.observe(1.0)
        scheduler.observe(2.0)
        restored = PlateauScheduler(1.0, factor=0.5, patience=1)
        restored.load_state_dict(scheduler.state_dict())
        assert restored.state_dict() == scheduler.state_dict()

    def test_invalid_factor(self):
        """Test factor 1 is rejected"""
        with pytest.raises(ValueError, match="between 0 and 1"):
            PlateauScheduler(1.0, factor=1.0)


class TestCheckpoints:
    """Test checkpoint archives with JSON metadata"""

    def test_store_round_trip(self, tmp_path):
        """Test the store saves and loads arrays with metadata"""
        store = ArchiveCheckpointStore(tmp_path / 'checkpoints')
        assert not store.exists('last')
        store.save('last', {'param/w': np.arange(3.0)}, {'epoch': 4, 'history': [{'epoch': 0}]})
        arrays, meta = store.load('last')
        assert store.exists('last')
        assert meta == {'epoch': 4, 'history': [{'epoch': 0}]}
        np.testing.assert_array_equal(arrays['param/w'], np.arange(3.0))

    def test_missing_metadata(self, tmp_path):
        """Test an archive without metadata is refused"""
        save_archive(tmp_path / 'bare.ckpt', {'a': np.zeros(1)})
        with pytest.raises(CheckpointError, match="no metadata"):
            read_checkpoint(tmp_path / 'bare.ckpt')

    def test_corrupt_archive(self, tmp_path):
        """Test a corrupt archive is refused"""
        path = tmp_path / 'broken.ckpt'
        path.write_bytes(b'not a zip file')
        with pytest.raises(CheckpointError, match="corrupt"):
            read_checkpoint(path)


class TestTrainer:
    """Test maximum-likelihood training"""

    def test_dequantize(self):
        """Test zero variance is a no-op and 0.01 gives std 0.1"""
        x = np.zeros((1000, 2))
        assert dequantize(x, 0.0, np.random.default_rng(0)) is x
        noisy = dequantize(x, 0.01, np.random.default_rng(0))
        assert noisy.std() == pytest.approx(0.1, rel=0.1)

    def test_training_lowers_validation_nll(self, float64):
        """Test training improves validation NLL and fills the history"""
        model, dataset = _mixture_setup()
        trainer = Trainer(model, None, _fast_config(epochs=5))
        _, val_set = dataset.split(0.25, 0)
        before = trainer.evaluate(val_set)
        result = trainer.fit(dataset)
        assert result.best_val_nll < before
        assert list(result.history.columns) == HISTORY_COLUMNS
        assert result.epochs_run == 5

    def test_best_parameters_are_installed(self, float64):
        """Test the best parameters end up in the model"""
        model, dataset = _mixture_setup()
        result = train(model, None, dataset, _fast_config())
        for name in model.params:
            np.testing.assert_array_equal(model.params.values[name], result.params.values[name])

    def test_same_seed_same_run(self, float64):
        """Test two runs with one seed have equal histories"""
        first_model, dataset = _mixture_setup()
        second_model, _ = _mixture_setup()
        first = train(first_model, None, dataset, _fast_config())
        second = train(second_model, None, dataset, _fast_config())
        pd.testing.assert_frame_equal(first.history, second.history)

    def test_resume_matches_uninterrupted_run(self, float64, tmp_path):
        """Resuming after epoch 1 reproduces the uninterrupted three-epoch run"""
        full_model, dataset = _mixture_setup()
        full = train(full_model, None, dataset, _fast_config(epochs=3),
                     store=ArchiveCheckpointStore(tmp_path / 'full'))

        store = ArchiveCheckpointStore(tmp_path / 'split')
        first_model, _ = _mixture_setup()
        train(first_model, None, dataset, _fast_config(epochs=2), store=store)
        resumed_model, _ = _mixture_setup()
        resumed = train(resumed_model, None, dataset, _fast_config(epochs=3), store=store, resume=True)

        pd.testing.assert_frame_equal(resumed.history, full.history)
        for name in full.last_params:
            np.testing.assert_array_equal(resumed.last_params.values[name], full.last_params.values[name])

    def test_checkpoints_are_written(self, float64, tmp_path):
        """Test best and last checkpoints carry epoch and experiment"""
        model, dataset = _mixture_setup()
        store = ArchiveCheckpointStore(tmp_path)
        train(model, None, dataset, _fast_config(epochs=1), store=store, experiment={'config': 'x'})
        assert store.exists('best') and store.exists('last')
        _, meta = store.load('last')
        assert meta['epoch'] == 0
        assert meta['experiment'] == {'config': 'x'}

    def test_conditional_model_needs_conditioner(self, float64):
        """Test a conditional model refuses a missing conditioner"""
        model = build_dense(DenseSpec(dim=2, couplings=1, hidden=4, cond_features=3))
        with pytest.raises(ValueError, match="needs a conditioner"):
            Trainer(model, None, _fast_config())

    def test_conditional_weight_needs_unet(self, float64):
        """Test the conditional loss weight needs a unet conditioner"""
        params = ParameterStore(dtype=np.float64)
        model = build_multiscale(MultiScaleSpec(input_shape=(1, 8, 8), scales=1, hidden_channels=4,
                                                cond_channels=2), params)
        operator = gaussian_matrix(16, 64, image_shape=(8, 8), inversion='adjoint')
        cond = Conditioner(ConditionerSpec(trunk='cnn', channels=4), operator, model.slots, params)
        with pytest.raises(ValueError, match="requires a unet"):
            Trainer(model, cond, _fast_config(conditional_weight=0.1))

    def test_conditional_training_runs(self, float64):
        """Test conditional training with the unet loss stays finite and invertible"""
        params = ParameterStore(dtype=np.float64)
        model = build_multiscale(MultiScaleSpec(input_shape=(1, 8, 8), scales=2, hidden_channels=4,
                                                cond_channels=2), params)
        operator = gaussian_matrix(32, 64, image_shape=(8, 8), inversion='adjoint')
        cond = Conditioner(ConditionerSpec(trunk='unet', channels=4), operator, model.slots, params)
        x = np.random.default_rng(0).random((12, 1, 8, 8))
        dataset = PairedDataset(x, operator.forward(x.reshape(12, 8, 8)))
        result = train(model, cond, dataset, _fast_config(epochs=2, learning_rate=1e-3, batch_size=4,
                                                          conditional_weight=0.5))
        assert not result.aborted
        assert np.all(np.isfinite(result.history['train_nll']))
        assert np.all(result.history['roundtrip_residual'] < 1e-6)


class TestPosteriorSampling:
    """Test posterior sample summaries"""

    @pytest.fixture
    def conditional_setup(self, float64):
        params = ParameterStore(seed=1, dtype=np.float64)
        model = build_dense(DenseSpec(dim=2, couplings=2, hidden=8, cond_features=3), params)
        operator = MatrixOperator(np.eye(2), inversion='adjoint')
        cond = Conditioner(ConditionerSpec(trunk='dense', hidden=4), operator, model.slots, params)
        randomize(params, seed=2, scale=0.2)
        return model, cond

    def test_single_sample_has_zero_std(self, conditional_setup):
        """Test one sample gives zero std and itself as mean"""
        model, cond = conditional_setup
        summary = posterior_samples(model, cond, np.array([0.5, -0.5]), 1)
        assert summary.count == 1
        np.testing.assert_array_equal(summary.std, 0.0)
        np.testing.assert_array_equal(summary.mean, summary.samples[0])

    def test_samples_do_not_depend_on_workers(self, conditional_setup):
        """Test samples are identical for 1 and 4 workers"""
        model, cond = conditional_setup
        y = np.array([0.1, 0.2])
        serial = posterior_samples(model, cond, y, 10, seed=3, chunk_size=3, workers=1)
        parallel = posterior_samples(model, cond, y, 10, seed=3, chunk_size=3, workers=4)
        np.testing.assert_array_equal(serial.samples, parallel.samples)

    def test_keys_select_separate_streams(self, conditional_setup):
        """Test different keys draw different samples"""
        model, cond = conditional_setup
        y = np.array([0.1, 0.2])
        first = posterior_samples(model, cond, y, 4, seed=3, key=0)
        second = posterior_samples(model, cond, y, 4, seed=3, key=1)
        assert not np.array_equal(first.samples, second.samples)

    def test_conditional_model_needs_measurement(self, conditional_setup):
        """Test a conditional model needs y to sample"""
        model, cond = conditional_setup
        with pytest.raises(ValueError, match="needs a measurement"):
            posterior_samples(model, cond, None, 4)

    def test_std_uses_population_convention(self, float64):
        """Test the std divides by N"""
        model = build_dense(DenseSpec(dim=2, couplings=1, hidden=4))
        summary = posterior_samples(model, None, None, 50, seed=0)
        np.testing.assert_allclose(summary.std, summary.samples.std(axis=0, ddof=0))


class TestRefinement:
    """Test data-consistency refinement of posterior samples"""

    @pytest.fixture
    def setup(self, float64):
        params = ParameterStore(seed=0, dtype=np.float64)
        model = build_dense(DenseSpec(dim=4, couplings=2, hidden=8), params)
        randomize(params, seed=1, scale=0.1)
        operator = MatrixOperator(np.eye(4))
        y = np.array([1.0, -1.0, 0.5, 2.0])
        return model, operator, y

    def test_pure_data_term_shrinks_residual(self, setup):
        """Test lam = 0 halves the residual in 100 steps"""
        model, operator, y = setup
        result = sample_refine(model, None, operator, y, lam=0.0, iterations=100, lr=0.05, seed=2)
        assert len(result.objective) == 101
        assert result.data_residual[-1] <= 0.5 * result.data_residual[0]
        assert not result.stopped_early

    def test_likelihood_weight_keeps_objective_decreasing(self, setup):
        """Test the objective still decreases with a likelihood term"""
        model, operator, y = setup
        result = sample_refine(model, None, operator, y, lam=0.1, iterations=20, lr=0.01, seed=2)
        assert result.objective[-1] < result.objective[0]

    def test_zero_iterations_returns_the_sample(self, setup):
        """Test no iterations return the initial sample"""
        model, operator, y = setup
        result = sample_refine(model, None, operator, y, lam=1.0, iterations=0, seed=2)
        np.testing.assert_array_equal(result.refined, result.initial)

    def test_negative_weight(self, setup):
        """Test a negative weight is rejected"""
        model, operator, y = setup
        with pytest.raises(ValueError, match="non-negative"):
            sample_refine(model, None, operator, y, lam=-1.0)

    def test_sweep_rows(self, setup):
        """Test the sweep has one row per weight"""
        model, operator, y = setup
        table = refine_sweep(model, None, operator, y, lambdas=(0.0, 1.0), iterations=5, lr=0.01)
        assert list(table.columns) == ['lambda', 'objective', 'data_residual', 'log_likelihood', 'stopped_early']
        assert table['lambda'].tolist() == [0.0, 1.0]


class TestMetrics:
    """Test PSNR, SSIM and their tables"""

    def test_psnr_of_known_error(self):
        """Test PSNR with range 1 and MSE 0.01 is 20 dB"""
        reference = np.zeros((8, 8))
        reference[0, 0] = 1.0
        assert psnr(reference + 0.1, reference) == pytest.approx(20.0, abs=1e-10)

    def test_psnr_identical_images(self):
        """Test identical images give infinite PSNR"""
        image = np.random.default_rng(0).random((8, 8))
        assert psnr(image, image) == float('inf')

    def test_psnr_is_scale_invariant(self, rng):
        """Test PSNR is unchanged by joint scaling"""
        x, y = rng.random((8, 8)), rng.random((8, 8))
        assert psnr(2 * x, 2 * y) == pytest.approx(psnr(x, y))

    def test_external_range(self, rng):
        """Test the external range mode and its required value"""
        x = rng.random((8, 8))
        assert psnr(x + 0.1, x, range_mode='external', value=2.0) == pytest.approx(10 * np.log10(400))
        with pytest.raises(ValueError, match="positive data range"):
            psnr(x + 0.1, x, range_mode='external')

    def test_shape_mismatch(self):
        """Test images of different shapes are rejected"""
        with pytest.raises(ValueError, match="shapes differ"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_ssim_identity(self, rng):
        """Test SSIM(x, x) = 1"""
        image = rng.random((32, 32))
        assert ssim(image, image) == pytest.approx(1.0, abs=1e-9)

    def test_ssim_of_inverted_contrast_is_negative(self, rng):
        """Test inverted contrast gives negative SSIM"""
        image = rng.random((32, 32))
        assert ssim(1.0 - image, image) < 0

    def test_single_window_matches_formula(self, rng):
        """Test one 11x11 window against the SSIM formula"""
        x, y = rng.random((11, 11)), rng.random((11, 11))
        w = gaussian_window()
        peak = y.max() - y.min()
        c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
        mu_x, mu_y = np.sum(w * x), np.sum(w * y)
        var_x = np.sum(w * x * x) - mu_x ** 2
        var_y = np.sum(w * y * y) - mu_y ** 2
        cov = np.sum(w * x * y) - mu_x * mu_y
        expected = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
        assert ssim(x, y) == pytest.approx(expected, abs=1e-10)

    def test_ssim_needs_a_full_window(self):
        """Test images smaller than the window are rejected"""
        with pytest.raises(ValueError, match="smaller than"):
            ssim(np.zeros((8, 8)), np.ones((8, 8)))

    def test_table_and_summary(self):
        """Test mean and std rows and their printed form"""
        table = pd.DataFrame({'id': ['a', 'b'], 'psnr': [10.0, 20.0], 'ssim': [0.5, 0.7]})
        summary = aggregate_metrics(table)
        assert summary['psnr'].tolist() == [15.0, 5.0]
        assert summary['ssim'].tolist() == pytest.approx([0.6, 0.1])
        assert 'psnr: 15.00 ± 5.00' in format_summary(summary)

    def test_metrics_table_rows(self, rng):
        """Test one row per image in id order"""
        references = [rng.random((12, 12)) for _ in range(3)]
        table = metrics_table(references, references, ids=['a', 'b', 'c'])
        assert table['id'].tolist() == ['a', 'b', 'c']
        assert np.all(np.isinf(table['psnr']))
        np.testing.assert_allclose(table['ssim'], 1.0)

    def test_metrics_table_count_mismatch(self, rng):
        """Test reconstruction and reference counts must agree"""
        with pytest.raises(ValueError, match="reconstructions for"):
            metrics_table([np.zeros((12, 12))], [])
