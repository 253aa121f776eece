"""
Desk-scale learning checks

Each test trains a small model for a few minutes on one core, so they are
tagged slow: ``manage.py test --exclude-tag slow`` skips them.
"""

import numpy as np
from django.test import SimpleTestCase, tag

from forecasting.services.dataset import SplitSpec
from forecasting.services.lora_amr import AdapterConfig, frozen_fingerprint, wrap_adapters
from forecasting.services.metrics import sigma_correlation
from forecasting.services.model import ModelConfig, build_model, predict
from forecasting.services.numerics import SeedBank
from forecasting.services.synthetic import coupled, heteroscedastic, toy_sine
from forecasting.services.text_embed import StubProvider
from forecasting.services.trainer import TrainConfig, adapter_finetune, evaluate, prepare_data, train

DESK_MODEL = dict(window=12, horizon=12, d=32, pool_size=8, top_k=2, groups=2, heads=4, fusion_heads=4, d_t=16)
SPLIT = SplitSpec(0.7, 0.1, 0.2)


def desk_data(series, standardizer=None):
    return prepare_data(series, SPLIT, 12, 12, StubProvider(d_t=16, tokens=4, seed=0), standardizer=standardizer)


def fit(config, data, epochs=30, seed=0):
    model = build_model(config, seed=seed)
    train(model, data, TrainConfig(epochs=epochs, batch=48, lr=1e-3, seed=seed))
    return model, evaluate(model, data.windows['test'], data.standardizer, data.tokens['test'])


@tag('slow')
class CoupledSensorsTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.data = desk_data(coupled(n_steps=2000, seed=0))
        cls.config = ModelConfig(**DESK_MODEL)
        cls.model, cls.report = fit(cls.config, cls.data)

    def test_beats_historical_average(self):
        self.assertLessEqual(self.report.metrics['mae@avg'], 0.7 * self.report.ha_metrics['mae@avg'])

    def test_cross_sensor_attention_helps(self):
        _, ablated = fit(self.config.without('InterS'), self.data)
        self.assertGreater(ablated.metrics['mae@avg'], self.report.metrics['mae@avg'])


@tag('slow')
class ToySineTests(SimpleTestCase):
    def test_beats_historical_average(self):
        data = desk_data(toy_sine(n_steps=1000, sensors=2, noise=0.05, seed=0))
        _, report = fit(ModelConfig(**DESK_MODEL), data, epochs=20)
        self.assertLessEqual(report.metrics['mae@avg'], 0.7 * report.ha_metrics['mae@avg'])


@tag('slow')
class HeteroscedasticTests(SimpleTestCase):
    def test_sigma_tracks_noise_schedule(self):
        series, true_sigma = heteroscedastic(n_steps=2000, seed=0)
        data = desk_data(series)
        _, report = fit(ModelConfig(**DESK_MODEL, variant='uncertainty'), data)

        test = data.windows['test']
        steps = test.anchors[:, None] + np.arange(12)[None, :]
        truth = np.stack([true_sigma[:, row] for row in steps])

        self.assertGreaterEqual(sigma_correlation(report.sigma.ravel(), truth.ravel()), 0.8)
        coverage = report.uncertainty['coverage_95']
        self.assertGreaterEqual(coverage, 0.88)
        self.assertLessEqual(coverage, 0.99)


@tag('slow')
class AdapterTransferTests(SimpleTestCase):
    def test_finetune_on_shifted_amplitude(self):
        source = desk_data(toy_sine(n_steps=1000, sensors=2, noise=0.05, seed=0))
        model, _ = fit(ModelConfig(**DESK_MODEL), source, epochs=20)

        # the target keeps the source scale so the amplitude shift is visible to the model
        target = desk_data(toy_sine(n_steps=1000, sensors=2, amplitude=2.0, noise=0.05, seed=1),
                           standardizer=source.standardizer)
        val = target.windows['val']
        before = evaluate(model, val, target.standardizer, target.tokens['val'], split='val')

        probe = build_model(ModelConfig(**DESK_MODEL), seed=0)
        probe.load_state_dict(model.state_dict())
        base = predict(probe, val.inputs, val.input_mask, target.tokens['val']).forecast
        wrap_adapters(probe, AdapterConfig(rank=8), SeedBank(0))
        self.assertEqual(predict(probe, val.inputs, val.input_mask, target.tokens['val']).forecast.tobytes(),
                         base.tobytes())

        config = TrainConfig(seed=0, adapter=AdapterConfig(rank=8, lr=1e-3, epochs=15, batch=16))
        result = adapter_finetune(model, target, config)
        after = evaluate(model, val, target.standardizer, target.tokens['val'], split='val')

        self.assertEqual(result.fingerprint, frozen_fingerprint(model))
        self.assertLessEqual(after.metrics['mae@avg'], 0.8 * before.metrics['mae@avg'])
