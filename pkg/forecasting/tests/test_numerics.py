import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from forecasting.services import numerics as nx
from forecasting.services.errors import ConfigurationError, OptimizerError, ShapeError


class TensorGradientTests(SimpleTestCase):
    def test_broadcast_add_sums_gradient_back(self):
        a = nx.Parameter(np.ones((3, 4)))
        b = nx.Parameter(np.zeros(4))
        nx.sum(a + b).backward()
        assert_allclose(a.grad, np.ones((3, 4)))
        assert_allclose(b.grad, np.full(4, 3.0))

    def test_shared_node_accumulates(self):
        x = nx.Parameter(np.array([0.5, -2.0]))
        nx.sum(x * x + x).backward()
        assert_allclose(x.grad, 2.0 * x.data + 1.0)

    def test_non_scalar_backward_needs_seed(self):
        x = nx.Parameter(np.ones(3))
        with self.assertRaises(ShapeError):
            (x * 2.0).backward()

    def test_constants_do_not_receive_gradients(self):
        x = nx.Parameter(np.ones(2))
        c = nx.Tensor(np.ones(2))
        nx.sum(x * c).backward()
        self.assertIsNone(c.grad)

    def test_softmax_is_stable_for_large_logits(self):
        out = nx.softmax(nx.Tensor([[1000.0, 1001.0, 999.0]]), axis=-1)
        self.assertTrue(np.all(np.isfinite(out.data)))
        assert_allclose(out.data.sum(axis=-1), [1.0])

    def test_matmul_vector_contracts_trailing_axis(self):
        a = nx.Tensor(np.arange(6.0).reshape(2, 3))
        u = nx.Tensor([1.0, 0.0, -1.0])
        assert_allclose(nx.matmul(a, u).data, [-2.0, -2.0])


class GradCheckTests(SimpleTestCase):
    def test_linear_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = nx.Parameter(rng.normal(size=(4, 3)))
        w = nx.Parameter(rng.normal(size=(3, 2)))
        b = nx.Parameter(rng.normal(size=2))
        weights = nx.Tensor(rng.normal(size=(4, 2)))

        error = nx.grad_check(lambda: nx.sum(nx.linear(x, w, b) * weights), [x, w, b], eps=1e-5)
        self.assertLess(error, 1e-6)

    def test_composed_nonlinearities(self):
        rng = np.random.default_rng(1)
        x = nx.Parameter(rng.uniform(0.5, 1.5, size=(2, 3)))

        def loss():
            return nx.mean(nx.tanh(nx.log(x)) * nx.sqrt(x) + nx.softplus(nx.exp(-x)))

        self.assertLess(nx.grad_check(loss, [x]), 1e-6)

    def test_softmax_gradient(self):
        rng = np.random.default_rng(2)
        x = nx.Parameter(rng.normal(size=(3, 5)))
        weights = nx.Tensor(rng.normal(size=(3, 5)))
        self.assertLess(nx.grad_check(lambda: nx.sum(nx.softmax(x, axis=-1) * weights), [x]), 1e-6)

    def test_wrong_gradient_is_detected(self):
        x = nx.Parameter(np.array([0.3, -0.7]))

        def broken():
            # forward of square, backward of identity
            return nx.sum(nx._result(x.data * x.data, (x,), lambda g: (g,)))

        self.assertGreater(nx.grad_check(broken, [x]), 1e-2)

    def test_step_outside_range_is_rejected(self):
        x = nx.Parameter(np.ones(1))
        with self.assertRaises(ConfigurationError):
            nx.grad_check(lambda: nx.sum(x), [x], eps=1e-2)


class ModuleTests(SimpleTestCase):
    def setUp(self):
        self.layer = nx.Linear(3, 2, np.random.default_rng(0))

    def test_parameters_are_discovered(self):
        names = [name for name, _ in self.layer.named_parameters()]
        self.assertEqual(names, ['weight', 'bias'])
        self.assertEqual(self.layer.num_parameters(), 8)

    def test_state_dict_round_trip(self):
        state = self.layer.state_dict()
        other = nx.Linear(3, 2, np.random.default_rng(1))
        other.load_state_dict(state)
        assert_allclose(other.weight.data, self.layer.weight.data)

    def test_state_dict_shape_mismatch(self):
        state = self.layer.state_dict()
        state['weight'] = np.zeros((2, 3))
        with self.assertRaises(ShapeError):
            self.layer.load_state_dict(state)

    def test_state_dict_missing_entry(self):
        with self.assertRaisesMessage(ShapeError, 'missing'):
            self.layer.load_state_dict({'weight': self.layer.weight.data})

    def test_train_and_eval_flags(self):
        self.layer.eval()
        self.assertFalse(self.layer.training)
        self.layer.train()
        self.assertTrue(self.layer.training)

    def test_dropout_is_identity_at_eval(self):
        x = nx.Tensor(np.ones((4, 4)))
        out = nx.dropout(x, 0.5, np.random.default_rng(0), training=False)
        assert_allclose(out.data, x.data)


class SeedBankTests(SimpleTestCase):
    def test_label_streams_are_independent_of_draw_order(self):
        first = nx.SeedBank(7)
        first.generator('other').normal(size=10)
        a = first.generator('dropout').normal(size=5)
        b = nx.SeedBank(7).generator('dropout').normal(size=5)
        assert_allclose(a, b)

    def test_state_restore_resumes_stream(self):
        bank = nx.SeedBank(3)
        bank.generator('shuffle').random(4)
        state = bank.state()
        expected = bank.generator('shuffle').random(3)

        resumed = nx.SeedBank(3)
        resumed.restore(state)
        assert_allclose(resumed.generator('shuffle').random(3), expected)

    def test_seeds_differ(self):
        self.assertFalse(np.allclose(nx.SeedBank(0).fresh('x').random(4), nx.SeedBank(1).fresh('x').random(4)))


class AdamTests(SimpleTestCase):
    def test_first_step_moves_each_entry_by_lr(self):
        p = nx.Parameter(np.array([1.0, -1.0, 0.5]))
        optimizer = nx.Adam([('p', p)], lr=0.1)
        p.grad = np.array([2.0, -3.0, 0.5])
        optimizer.step()
        assert_allclose(p.data, [0.9, -0.9, 0.4], atol=1e-6)

    def test_decoupled_weight_decay(self):
        p = nx.Parameter(np.array([2.0]))
        optimizer = nx.Adam([('p', p)], lr=0.1, weight_decay=0.5)
        optimizer.step()
        assert_allclose(p.data, [2.0 * (1.0 - 0.05)])

    def test_frozen_parameters_are_skipped(self):
        frozen = nx.Parameter(np.ones(2), trainable=False)
        optimizer = nx.Adam([('frozen', frozen)], lr=0.1)
        self.assertEqual(optimizer.params, [])

    def test_non_finite_gradient_raises(self):
        p = nx.Parameter(np.ones(2))
        optimizer = nx.Adam([('p', p)])
        p.grad = np.array([np.nan, 0.0])
        with self.assertRaises(OptimizerError):
            optimizer.step()
        assert_allclose(p.data, np.ones(2))

    def test_learning_rate_must_be_positive(self):
        with self.assertRaises(ConfigurationError):
            nx.Adam([], lr=0.0)

    def test_quadratic_converges_within_500_steps(self):
        for start in (0.0, -2.0, 6.0):
            w = nx.Parameter(np.array([start]))
            optimizer = nx.Adam([('w', w)], lr=0.1)
            reached = None
            for step in range(1, 501):
                optimizer.zero_grad()
                nx.sum(nx.square(w - 3.0)).backward()
                optimizer.step()
                if abs(w.data[0] - 3.0) < 1e-2:
                    reached = step
                    break
            self.assertIsNotNone(reached, start)

    def test_state_dict_resumes_exactly(self):
        rng = np.random.default_rng(0)
        target = rng.normal(size=(3, 2))

        def train(optimizer, p, steps):
            for _ in range(steps):
                optimizer.zero_grad()
                nx.sum(nx.square(p - target)).backward()
                optimizer.step()

        p = nx.Parameter(np.zeros((3, 2)))
        optimizer = nx.Adam([('p', p)], lr=0.05)
        train(optimizer, p, 5)
        state = optimizer.state_dict()
        resumed_p = nx.Parameter(p.data.copy())
        train(optimizer, p, 5)
        self.assertEqual(state['step'], 5)

        resumed = nx.Adam([('p', resumed_p)], lr=0.05)
        resumed.load_state_dict(state)
        train(resumed, resumed_p, 5)
        self.assertEqual(resumed.step_count, 10)
        assert_allclose(resumed_p.data, p.data, rtol=0, atol=0)

    def test_state_dict_must_match_parameters(self):
        optimizer = nx.Adam([('p', nx.Parameter(np.zeros(2)))])
        state = optimizer.state_dict()
        with self.assertRaises(ConfigurationError):
            nx.Adam([('q', nx.Parameter(np.zeros(2)))]).load_state_dict(state)
        with self.assertRaises(ShapeError):
            nx.Adam([('p', nx.Parameter(np.zeros(3)))]).load_state_dict(state)
