import json
import tempfile
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

from forecasting.services.dataset import SplitSpec
from forecasting.services.errors import ConfigurationError
from forecasting.services.run_config import (
    ENV_EMBED_ENDPOINT, ENV_OUT_DIR, DatasetConfig, build_run_config, flags_layer, load_run_config, load_series,
)


class LoadRunConfigTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, document, name='run.json'):
        path = self.dir / name
        path.write_text(json.dumps(document) if not isinstance(document, str) else document)
        return path

    def test_defaults(self):
        config = load_run_config(environ={})
        self.assertEqual(config.model.d, 64)
        self.assertEqual(config.train.epochs, 30)
        self.assertEqual(config.adapter.rank, 16)
        self.assertEqual(config.text_provider.kind, 'stub')
        self.assertEqual(config.out_dir(), Path(settings.FORECASTING['OUT_DIR']))

    def test_layer_precedence(self):
        path = self.write({'train': {'seed': 3, 'epochs': 5}, 'output': {'dir': '/from/file'}})
        config = load_run_config(path, {'train.seed': 9, 'train.epochs': None}, environ={ENV_OUT_DIR: '/from/env'})
        self.assertEqual(config.train.seed, 9)
        self.assertEqual(config.train.epochs, 5)
        self.assertEqual(config.output.dir, '/from/env')

        config = load_run_config(path, {'output.dir': '/from/flag'}, environ={ENV_OUT_DIR: '/from/env'})
        self.assertEqual(config.output.dir, '/from/flag')

    def test_endpoint_from_environment(self):
        config = load_run_config(environ={ENV_EMBED_ENDPOINT: 'http://localhost:9000/embed'})
        self.assertEqual(config.text_provider.endpoint, 'http://localhost:9000/embed')

    def test_bundled_toy_config(self):
        config = load_run_config(Path(settings.BASE_DIR) / 'configs' / 'toy.json', environ={})
        self.assertEqual((config.model.d, config.model.d_k, config.model.d_t), (32, 8, 16))
        self.assertEqual(config.dataset.split, (0.7, 0.1, 0.2))
        self.assertEqual(config.adapter.rank, 4)

    def test_unknown_key_names_dotted_path(self):
        with self.assertRaisesMessage(ConfigurationError, 'model.foo'):
            load_run_config(self.write({'model': {'foo': 1}}), environ={})

    def test_unknown_section(self):
        with self.assertRaisesMessage(ConfigurationError, 'extras'):
            load_run_config(self.write({'extras': {}}), environ={})

    def test_invalid_value(self):
        with self.assertRaisesMessage(ConfigurationError, 'train.lr'):
            load_run_config(self.write({'train': {'lr': -1}}), environ={})

    def test_odd_adapter_rank(self):
        with self.assertRaisesMessage(ConfigurationError, 'F002'):
            load_run_config(self.write({'adapter': {'rank': 3}}), environ={})

    def test_unknown_ablation(self):
        with self.assertRaisesMessage(ConfigurationError, 'model.ablations'):
            load_run_config(self.write({'model': {'ablations': ['Prompts']}}), environ={})

    def test_two_dataset_sources(self):
        with self.assertRaises(ConfigurationError):
            load_run_config(self.write({'dataset': {'path': 'a.csv', 'synthetic': 'coupled'}}), environ={})

    def test_bad_file(self):
        with self.assertRaisesMessage(ConfigurationError, 'invalid JSON'):
            load_run_config(self.write('{not json'), environ={})
        with self.assertRaisesMessage(ConfigurationError, 'not found'):
            load_run_config(self.dir / 'absent.json', environ={})
        with self.assertRaises(ConfigurationError):
            load_run_config(self.write('[1, 2]'), environ={})

    def test_flag_needs_section(self):
        with self.assertRaises(ConfigurationError):
            flags_layer({'seed': 3})


class BuildRunConfigTests(SimpleTestCase):
    def test_text_width_follows_model(self):
        config = build_run_config({'model': {'d_t': 8}})
        self.assertEqual(config.text_provider.d_t, 8)
        config = build_run_config({'text_provider': {'d_t': 4}})
        self.assertEqual(config.model.d_t, 4)

    def test_text_width_conflict(self):
        with self.assertRaises(ConfigurationError):
            build_run_config({'model': {'d_t': 8}, 'text_provider': {'d_t': 4}})

    def test_no_provider_needs_text_ablation(self):
        with self.assertRaises(ConfigurationError):
            build_run_config({'text_provider': {'kind': 'none'}})
        config = build_run_config({'text_provider': {'kind': 'none'}, 'model': {'ablations': ['LLMs']}})
        self.assertFalse(config.model.uses_text)

    def test_booleans_and_lists(self):
        config = build_run_config({
            'model': {'residual': True, 'ablations': ['DP', 'IntraS']},
            'adapter': {'train_heads': True, 'targets': ['*.value']},
            'text_provider': {'fallback': False},
        })
        self.assertTrue(config.model.residual)
        self.assertEqual(config.model.ablations, ('DP', 'IntraS'))
        self.assertEqual(config.adapter.targets, ('*.value',))
        self.assertFalse(config.text_provider.fallback)

    def test_resolved_document_validates_again(self):
        config = build_run_config({'model': {'variant': 'uncertainty'}, 'train': {'seed': 4, 'runs': 3}})
        again = build_run_config(config.to_dict())
        self.assertEqual(again, config)
        self.assertEqual(again.config_hash(), config.config_hash())

    def test_hash_ignores_output(self):
        a = build_run_config({'output': {'dir': '/tmp/a'}})
        b = build_run_config({'output': {'dir': '/tmp/b', 'record': False}})
        c = build_run_config({'train': {'seed': 1}})
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertNotEqual(a.config_hash(), c.config_hash())

    def test_train_config_carries_adapter(self):
        config = build_run_config({'adapter': {'rank': 4}})
        self.assertEqual(config.train_config().adapter.rank, 4)


class LoadSeriesTests(SimpleTestCase):
    def test_default_name_picks_generator(self):
        series, split = load_series(DatasetConfig())
        self.assertEqual(series.name, 'toy_sine')
        self.assertEqual(series.n_steps, 600)
        self.assertEqual(split, SplitSpec(0.7, 0.1, 0.2))

    def test_synthetic_with_length(self):
        series, _ = load_series(DatasetConfig(name='coupled-small', synthetic='coupled', n_steps=300))
        self.assertEqual(series.values.shape, (4, 300))

    def test_unknown_generator(self):
        with self.assertRaisesMessage(ConfigurationError, 'coupled'):
            load_series(DatasetConfig(name='nope'))

    def test_catalog_split_for_benchmark_names(self):
        path = Path(settings.BASE_DIR) / 'data' / 'toy_sine.csv'
        _, split = load_series(DatasetConfig(name='PeMSD8', path=str(path)))
        self.assertEqual(split, SplitSpec(0.6, 0.2, 0.2))

    def test_config_split_wins(self):
        path = Path(settings.BASE_DIR) / 'data' / 'toy_manifest.json'
        _, split = load_series(DatasetConfig(manifest=str(path), split=(0.5, 0.25, 0.25)))
        self.assertEqual(split, SplitSpec(0.5, 0.25, 0.25))
