import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from scipy.optimize import minimize_scalar

from forecasting.services import numerics as nx
from forecasting.services.errors import DomainError, ShapeError
from forecasting.services.fusion_head import (
    SIGMA2_FLOOR, ConcatFusion, FusionBlock, GaussianHead, PointHead, fuse, gaussian_nll, mae_loss,
)


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def reference_fuse(text, grid, block):
    projected = text @ block.text_projection.weight.data if block.text_projection is not None else text
    q = grid @ block.query.weight.data
    k = projected @ block.key.weight.data
    v = projected @ block.value.weight.data
    width = block.d // block.heads
    heads = []
    for h in range(block.heads):
        cols = slice(h * width, (h + 1) * width)
        weights = softmax(q[..., cols] @ np.swapaxes(k[..., cols], -1, -2) / math.sqrt(width))
        heads.append(weights @ v[..., cols])
    return grid + np.concatenate(heads, axis=-1) @ block.output.weight.data


class FuseTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.block = FusionBlock(d=8, d_t=5, heads=2, rng=np.random.default_rng(1))
        self.text = rng.normal(size=(3, 4, 5))
        self.grid = rng.normal(size=(3, 4, 8))

    def test_matches_plain_attention_oracle(self):
        assert_allclose(fuse(self.text, self.grid, self.block).data,
                        reference_fuse(self.text, self.grid, self.block), atol=1e-10)

    def test_zero_value_projection_leaves_residual(self):
        self.block.value.weight.data = np.zeros((8, 8))
        assert_allclose(fuse(self.text, self.grid, self.block).data, self.grid)

    def test_sensor_permutation_equivariance(self):
        order = np.array([2, 0, 1])
        out = fuse(self.text, self.grid, self.block).data
        assert_allclose(fuse(self.text[order], self.grid[order], self.block).data, out[order], atol=1e-12)

    def test_single_step_attends_fully(self):
        block = FusionBlock(d=4, d_t=4, heads=1, rng=np.random.default_rng(0))
        text = np.random.default_rng(1).normal(size=(1, 1, 4))
        grid = np.random.default_rng(2).normal(size=(1, 1, 4))
        expected = grid + text @ block.value.weight.data @ block.output.weight.data
        assert_allclose(fuse(text, grid, block).data, expected, atol=1e-12)

    def test_mismatched_windows(self):
        with self.assertRaises(ShapeError):
            fuse(self.text[:, :3], self.grid, self.block)

    def test_concat_fusion_shape(self):
        fusion = ConcatFusion(8, 5, np.random.default_rng(0))
        self.assertEqual(fusion(self.text, self.grid).shape, (3, 4, 8))


class HeadTests(SimpleTestCase):
    def setUp(self):
        self.fused = np.random.default_rng(0).normal(size=(3, 4, 6))

    def test_point_head_shape_and_zero_weights(self):
        head = PointHead(window=4, d=6, horizon=12, rng=np.random.default_rng(0))
        self.assertEqual(head(self.fused).mu.shape, (3, 12))
        head.mean.weight.data[:] = 0.0
        assert_allclose(head(self.fused).mu.data, np.zeros((3, 12)))

    def test_point_head_shares_weights_across_sensors(self):
        head = PointHead(window=4, d=6, horizon=2, rng=np.random.default_rng(0))
        same = np.repeat(self.fused[:1], 3, axis=0)
        mu = head(same).mu.data
        assert_allclose(mu[0], mu[2])

    def test_gaussian_head_at_zero_logit(self):
        head = GaussianHead(window=4, d=6, horizon=2, rng=np.random.default_rng(0))
        head.variance.weight.data[:] = 0.0
        out = head(self.fused)
        assert_allclose(out.sigma2.data, np.full((3, 2), math.log(2.0) + SIGMA2_FLOOR))
        assert_allclose(out.forecast, out.mu.data)

    def test_gaussian_head_floor(self):
        head = GaussianHead(window=4, d=6, horizon=2, rng=np.random.default_rng(0))
        head.variance.weight.data[:] = 0.0
        head.variance.bias.data[:] = -1e4
        assert_allclose(head(self.fused).sigma2.data, SIGMA2_FLOOR)

    def test_sigma2_positive_for_random_inputs(self):
        head = GaussianHead(window=4, d=6, horizon=3, rng=np.random.default_rng(0))
        fused = np.random.default_rng(1).normal(scale=50.0, size=(2000, 4, 6))
        self.assertTrue(np.all(head(fused).sigma2.data >= SIGMA2_FLOOR))


class LossTests(SimpleTestCase):
    def test_mae_worked_example(self):
        self.assertEqual(mae_loss([[2.0, 4.0]], [[1.0, 5.0]]).item(), 1.0)
        self.assertEqual(mae_loss([[2.0, 4.0]], [[2.0, 4.0]]).item(), 0.0)

    def test_mae_gradient_is_scaled_sign(self):
        mu = nx.Parameter(np.array([[2.0, 4.0, 1.0]]))
        mae_loss(mu, np.array([[1.0, 5.0, 1.0]])).backward()
        assert_allclose(mu.grad, [[1.0 / 3.0, -1.0 / 3.0, 0.0]])

    def test_mae_ignores_masked_targets(self):
        loss = mae_loss([[0.0, 0.0]], [[1.0, 100.0]], mask=[[1, 0]])
        self.assertEqual(loss.item(), 1.0)

    def test_mae_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            mae_loss(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_nll_closed_forms(self):
        self.assertAlmostEqual(gaussian_nll([[0.0]], [[1.0]], [[0.0]]).item(), 0.0)
        self.assertAlmostEqual(gaussian_nll([[0.0]], [[math.e ** 2]], [[0.0]]).item(), 1.0)
        self.assertAlmostEqual(gaussian_nll([[0.0]], [[1.0]], [[2.0]]).item(), 2.0)

    def test_nll_sums_over_elements(self):
        loss = gaussian_nll(np.zeros((2, 3)), np.ones((2, 3)), np.full((2, 3), 2.0))
        self.assertAlmostEqual(loss.item(), 12.0)
        mean = gaussian_nll(np.zeros((2, 3)), np.ones((2, 3)), np.full((2, 3), 2.0), reduction='mean')
        self.assertAlmostEqual(mean.item(), 2.0)

    def test_nll_minimized_at_squared_residual(self):
        residual = 0.7

        def nll(sigma2):
            return gaussian_nll([[0.0]], [[sigma2]], [[residual]]).item()

        best = minimize_scalar(nll, bounds=(1e-4, 10.0), method='bounded', options={'xatol': 1e-10})
        self.assertAlmostEqual(best.x, residual ** 2, places=5)

    def test_nll_mu_gradient_at_unit_variance(self):
        mu = nx.Parameter(np.array([[0.5, -1.0]]))
        y = np.array([[1.5, 1.0]])
        gaussian_nll(mu, np.ones((1, 2)), y).backward()
        assert_allclose(mu.grad, mu.data - y)

    def test_nll_rejects_nonpositive_variance(self):
        with self.assertRaises(DomainError):
            gaussian_nll([[0.0]], [[0.0]], [[1.0]])
