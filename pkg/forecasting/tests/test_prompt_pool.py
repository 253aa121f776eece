import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from forecasting.services import numerics as nx
from forecasting.services.errors import ConfigurationError, ShapeError
from forecasting.services.prompt_pool import InputEmbedding, PromptPool, assemble, score


class PromptPoolTests(SimpleTestCase):
    def setUp(self):
        self.pool = PromptPool(pool_size=6, top_k=3, window=4, d=8, rng=np.random.default_rng(0))
        self.query = np.random.default_rng(1).normal(size=(4, 8))

    def test_scores_match_single_key_oracle(self):
        scores = self.pool.score_all(self.query).data
        expected = [score(self.query, self.pool.keys.data[m], self.pool).item() for m in range(6)]
        assert_allclose(scores, expected, atol=1e-12)

    def test_retrieval_returns_highest_scores_first(self):
        result = self.pool.retrieve(self.query)
        scores = self.pool.score_all(self.query).data
        self.assertEqual(list(result.indices), list(np.argsort(-scores, kind='stable')[:3]))
        assert_allclose(result.scores.data, np.sort(scores)[::-1][:3])

    def test_ties_go_to_lower_index(self):
        # a zero scoring vector makes every score exactly 0
        self.pool.score_vector.data = np.zeros(8)
        self.assertEqual(list(self.pool.retrieve(self.query).indices), [0, 1, 2])

    def test_retrieval_matches_exhaustive_ranking(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            size = int(rng.integers(2, 33))
            top_k = int(rng.integers(1, size + 1))
            pool = PromptPool(pool_size=size, top_k=top_k, window=3, d=4, rng=rng)
            if seed % 2 == 0:
                # identity W_k maps equal keys to bit-identical scores, so these pools hold exact ties
                pool.score_key.weight.data = np.eye(4)
                for target in rng.choice(size, size=size // 2, replace=False):
                    pool.keys.data[target] = pool.keys.data[rng.integers(size)]
            query = rng.normal(size=(3, 4))

            scores = [score(query, pool.keys.data[m], pool).item() for m in range(size)]
            expected = sorted(range(size), key=lambda m: (-scores[m], m))[:top_k]
            self.assertEqual(list(pool.retrieve(query).indices), expected, f"pool {seed}")

    def test_batched_retrieval(self):
        batch = np.random.default_rng(2).normal(size=(2, 3, 4, 8))
        result = self.pool.retrieve(batch)
        self.assertEqual(result.indices.shape, (2, 3, 3))
        self.assertEqual(result.values.shape, (2, 3, 3, 4, 8))

    def test_fixed_indices_bypass_ranking(self):
        result = self.pool.retrieve(self.query, indices=np.array([5, 0, 2]))
        assert_allclose(result.values.data, self.pool.values.data[[5, 0, 2]])

    def test_fixed_indices_shape(self):
        with self.assertRaises(ShapeError):
            self.pool.retrieve(self.query, indices=np.array([0, 1]))

    def test_gate_is_one_in_forward(self):
        result = self.pool.retrieve(self.query)
        gated = assemble(self.query, result, self.pool.output, straight_through=True).data
        plain = assemble(self.query, result, self.pool.output, straight_through=False).data
        assert_allclose(gated, plain, atol=1e-12)

    def test_gate_routes_gradient_into_keys(self):
        out, _ = self.pool(nx.Tensor(self.query))
        nx.sum(out).backward()
        self.assertIsNotNone(self.pool.keys.grad)
        self.assertTrue(np.any(self.pool.keys.grad != 0))

    def test_output_width(self):
        out, _ = self.pool(self.query)
        self.assertEqual(out.shape, (4, 8))

    def test_top_k_range(self):
        with self.assertRaises(ConfigurationError):
            PromptPool(pool_size=2, top_k=3, window=4, d=8, rng=np.random.default_rng(0))

    def test_keys_are_distinct(self):
        keys = self.pool.keys.data
        unit = keys / np.linalg.norm(keys, axis=1, keepdims=True)
        cosine = unit @ unit.T
        np.fill_diagonal(cosine, 0.0)
        self.assertLess(cosine.max(), 0.999)

    def test_query_shape_is_checked(self):
        with self.assertRaises(ShapeError):
            self.pool.score_all(np.zeros((5, 8)))


class InputEmbeddingTests(SimpleTestCase):
    def test_mask_channel_changes_embedding(self):
        embed = InputEmbedding(4, np.random.default_rng(0))
        values = np.zeros((2, 3))
        observed = embed(values, np.ones((2, 3))).data
        missing = embed(values, np.zeros((2, 3))).data
        self.assertEqual(observed.shape, (2, 3, 4))
        self.assertFalse(np.allclose(observed, missing))
