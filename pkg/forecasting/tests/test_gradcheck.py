from django.test import SimpleTestCase, tag

from forecasting.services.errors import ConfigurationError
from forecasting.services.gradcheck import (
    DEFAULT_TOLERANCES, REGISTRY, failures, inject_fault, probes, register, run_probe, run_probe_seeds, run_suite,
)


class RegistryTests(SimpleTestCase):
    def test_scopes_nest(self):
        ops = probes('op')
        layers = probes('layer')
        self.assertTrue(all(p.scope == 'op' for p in ops))
        self.assertEqual(layers[:len(ops)], ops)
        self.assertIn('layer.prompt_pool', [p.name for p in layers])
        self.assertEqual(len(probes('model')), len(REGISTRY))

    def test_named_selection(self):
        self.assertEqual([p.name for p in probes('model', ['mul', 'model'])], ['mul', 'model'])

    def test_unknown_probe(self):
        with self.assertRaisesMessage(ConfigurationError, 'nope'):
            probes('model', ['nope'])

    def test_unknown_scope(self):
        with self.assertRaises(ConfigurationError):
            probes('everything')

    def test_names_register_once(self):
        with self.assertRaises(ConfigurationError):
            register('add', 'op')(lambda rng: None)

    def test_every_layer_has_a_probe(self):
        names = set(REGISTRY)
        for layer in ('layer.gq_mha.intra', 'layer.gq_mha.inter', 'layer.fusion', 'layer.gaussian_nll',
                      'layer.adapter', 'layer.attention_pool'):
            self.assertIn(layer, names)


class SuiteTests(SimpleTestCase):
    def test_ops_pass_over_twenty_seeds(self):
        results = run_suite('op', seeds=20)
        self.assertEqual(failures(results), [])
        self.assertTrue(all(r.seeds_run == 20 for r in results))
        self.assertTrue(all(r.max_rel_error < DEFAULT_TOLERANCES['op'] for r in results))

    def test_seeded_result_is_the_worst_seed(self):
        probe = REGISTRY['softmax']
        errors = [run_probe(probe, 1e-6, seed=s).max_rel_error for s in range(3, 8)]
        worst = run_probe_seeds(probe, 1e-6, range(3, 8))
        self.assertEqual(worst.max_rel_error, max(errors))
        self.assertEqual(worst.seed, 3 + errors.index(max(errors)))
        self.assertEqual(worst.seeds_run, 5)

    def test_seeds_must_not_be_empty(self):
        with self.assertRaises(ConfigurationError):
            run_probe_seeds(REGISTRY['add'], 1e-6, [])

    def test_layers_pass(self):
        results = run_suite('layer', names=[name for name, p in REGISTRY.items() if p.scope == 'layer'])
        self.assertEqual(failures(results), [])

    @tag('slow')
    def test_composed_model_passes(self):
        result = run_probe(REGISTRY['model'], DEFAULT_TOLERANCES['model'])
        self.assertTrue(result.passed, result.max_rel_error)

    def test_same_seed_same_error(self):
        a = run_probe(REGISTRY['tanh'], 1e-6, seed=4)
        b = run_probe(REGISTRY['tanh'], 1e-6, seed=4)
        self.assertEqual(a.max_rel_error, b.max_rel_error)


class FaultInjectionTests(SimpleTestCase):
    def test_broken_backward_is_caught(self):
        with self.assertLogs('forecasting.services.gradcheck', level='WARNING'):
            with inject_fault('mul'):
                results = run_suite('op', names=['mul', 'add'])
        self.assertEqual(failures(results), ['mul'])
        by_name = {r.name: r for r in results}
        self.assertGreater(by_name['mul'].max_rel_error, 0.1)

    def test_fault_stops_at_first_failing_seed(self):
        with self.assertLogs('forecasting.services.gradcheck', level='WARNING'):
            with inject_fault('mul'):
                result, = run_suite('op', names=['mul'], seed=4, seeds=20)
        self.assertFalse(result.passed)
        self.assertEqual((result.seed, result.seeds_run), (4, 1))

    def test_fault_is_removed_on_exit(self):
        with inject_fault('mul'):
            pass
        self.assertEqual(failures(run_suite('op', names=['mul'])), [])

    def test_unknown_op(self):
        with self.assertRaises(ConfigurationError):
            with inject_fault('conv'):
                pass
