"""
End-to-end quality checks on problems with known answers

These train real models and take minutes; run them with ``pytest -m slow``.
"""
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.conditioning import Conditioner
from src.config import config as app_config
from src.data import GaussianMixture2D, LinearGaussianProblem, PairedDataset, generate_phantoms, sample_mixture
from src.engine import ParameterStore, make_rng
from src.flows import build_dense, build_iunet, build_multiscale
from src.main import run
from src.models.core import ConditionerSpec, DenseSpec, IUNetSpec, MultiScaleSpec, TrainConfig
from src.operators import MatrixOperator, add_relative_gaussian_noise, gaussian_matrix
from src.services import Trainer, posterior_samples, sample_refine, train

pytestmark = pytest.mark.slow


def test_density_estimation_reaches_mixture_entropy(float64):
    """Held-out NLL of a dense flow on the 2D mixture comes within 0.2 nats of its entropy"""
    mixture = GaussianMixture2D()
    params = ParameterStore(seed=0, dtype=np.float64)
    model = build_dense(DenseSpec(dim=2, couplings=8, hidden=64, seed=0), params)
    config = TrainConfig(learning_rate=1e-3, epochs=40, batch_size=128, validation_fraction=0.2, seed=0)
    trainer = Trainer(model, None, config)
    trainer.fit(PairedDataset(sample_mixture(4000, seed=0, mixture=mixture)))

    held_out = PairedDataset(sample_mixture(2000, seed=1, mixture=mixture))
    assert trainer.evaluate(held_out) <= mixture.entropy() + 0.2


def test_linear_gaussian_posterior_matches_closed_form(float64):
    """Posterior mean within 10% and std within 25% of the closed form at 10^4 samples"""
    problem = LinearGaussianProblem.default(seed=0, noise_std=0.3)
    x, y = problem.sample(4000, make_rng(0, 'acceptance'))
    params = ParameterStore(seed=0, dtype=np.float64)
    model = build_dense(DenseSpec(dim=2, couplings=6, hidden=32, cond_features=16, seed=0), params)
    operator = MatrixOperator(problem.matrix, inversion='pseudo-inverse')
    cond = Conditioner(ConditionerSpec(trunk='dense', hidden=32), operator, model.slots, params)
    config = TrainConfig(learning_rate=2e-3, epochs=40, batch_size=128, validation_fraction=0.1, seed=0)
    train(model, cond, PairedDataset(x, y), config)

    for target in (problem.prior_mean, problem.prior_mean + np.array([0.5, 0.5])):
        measurement = problem.matrix @ target
        summary = posterior_samples(model, cond, measurement, 10_000, seed=1)
        expected_mean = problem.posterior_mean(measurement)
        expected_std = problem.posterior_std()
        assert np.linalg.norm(summary.mean - expected_mean) <= 0.1 * np.linalg.norm(expected_mean)
        np.testing.assert_allclose(summary.std, expected_std, rtol=0.25)


def _refine_cs_toy(lr):
    """Compressed sensing at 16x16 with m = 64 and 10% noise, weight 1.0, 100 iterations"""
    image = generate_phantoms('shapes', 16, 1, seed=0)[0, 0]
    operator = gaussian_matrix(64, 256, seed=0, image_shape=(16, 16), inversion='adjoint')
    y = add_relative_gaussian_noise(operator.forward(image), 0.1, seed=0)
    params = ParameterStore(seed=0, dtype=np.float64)
    model = build_multiscale(MultiScaleSpec(input_shape=(1, 16, 16), scales=2, hidden_channels=8,
                                            cond_channels=4), params)
    cond = Conditioner(ConditionerSpec(trunk='avg-pool', channels=4), operator, model.slots, params)
    return sample_refine(model, cond, operator, y, lam=1.0, iterations=100, lr=lr, seed=0)


def test_refinement_halves_the_data_residual(float64):
    """At step 0.02 the residual halves and the objective never increases"""
    result = _refine_cs_toy(0.02)
    assert result.data_residual[-1] <= 0.5 * result.data_residual[0]
    steps = np.diff(result.objective)
    assert np.all(steps <= 1e-9 * np.abs(result.objective[:-1]))


def test_refinement_at_step_1e4_stays_far_from_halving(float64):
    """lr 1e-4 contracts the data term by under 1% per step for this operator scaling"""
    result = _refine_cs_toy(1e-4)
    assert result.data_residual[-1] < result.data_residual[0]
    assert result.data_residual[-1] > 0.5 * result.data_residual[0]


def _iunet_run(coupling, clamp):
    params = ParameterStore(seed=0, dtype=np.float64)
    model = build_iunet(IUNetSpec(input_shape=(1, 16, 16), scales=3, coupling=coupling, clamp=clamp,
                                  hidden_channels=8), params)
    # weights grown large, as after a stretch of aggressive training
    rng = np.random.default_rng(0)
    for name in params.names():
        if name.endswith('conv2.weight'):
            params.set(name, 0.2 * rng.standard_normal(params.values[name].shape))
    dataset = PairedDataset(generate_phantoms('ellipses', 16, 8, seed=0))
    config = TrainConfig(learning_rate=1e-4, epochs=1, batch_size=4, validation_fraction=0.25,
                         max_steps_per_epoch=1, seed=0)
    return train(model, None, dataset, config)


def test_stability_monitor_separates_affine_from_additive(float64):
    """Unclamped affine scales compound through the iUNet; additive couplings stay invertible"""
    affine = _iunet_run('affine', None)
    additive = _iunet_run('additive', 2.0)
    assert affine.unstable
    assert not additive.unstable and not additive.aborted
    assert additive.history['roundtrip_residual'].iloc[-1] < 1e-2


def test_tv_conditioning_beats_pseudo_inverse(tmp_path, monkeypatch):
    """Same data, architecture and training; only the inversion layer differs (50 test images, 16x16, m = 64)"""
    monkeypatch.setattr(app_config.runtime, 'log_file', str(tmp_path / 'flowrecon.log'))
    configs = Path(__file__).resolve().parent.parent / 'configs'

    def mean_psnr(name):
        common = ['--config', str(configs / f'{name}.txt'), '--out', str(tmp_path / name)]
        for command in ('simulate', 'train', 'reconstruct', 'evaluate'):
            assert run([command] + common) == 0
        summary = pd.read_csv(tmp_path / name / 'metrics_summary.csv').set_index('statistic')
        assert len(pd.read_csv(tmp_path / name / 'metrics.csv')) >= 50
        return summary.loc['mean', 'psnr']

    assert mean_psnr('cs_toy') >= mean_psnr('cs_toy_pinv') + 0.5
