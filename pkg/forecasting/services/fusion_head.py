"""
Cross-modal fusion and forecasting heads

FusionBlock runs standard multi-head attention per sensor over the window
axis with queries from the spatio-temporal embeddings and keys/values from the
(projected) text embeddings, plus a residual from the spatio-temporal side.
The point head and the Gaussian head both read a sensor's flattened W x d
block through weights shared by every sensor.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .numerics import (
    Linear, Module, Tensor, abs as tabs, as_tensor, concat, log, matmul, reshape, softmax, softplus, square,
    sum as tsum, swapaxes, transpose,
)

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-6


class FusionBlock(Module):
    """
    MHA(queries=S, keys/values=P(H_text)) + S

    Args:
        d: Spatio-temporal embedding width
        d_t: Text embedding width; a projection P is created when it differs from d
        heads: H_f, must divide d
        rng: Init generator
    """

    def __init__(self, d: int, d_t: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d % heads:
            raise ConfigurationError(f"fusion heads H_f={heads} must divide d={d}")
        self.d = d
        self.d_t = d_t
        self.heads = heads
        self.text_projection = Linear(d_t, d, rng, bias=False) if d_t != d else None
        self.query = Linear(d, d, rng, bias=False)
        self.key = Linear(d, d, rng, bias=False)
        self.value = Linear(d, d, rng, bias=False)
        self.output = Linear(d, d, rng, bias=False)

    def project_text(self, text) -> Tensor:
        text = as_tensor(text)
        if text.shape[-1] != self.d_t:
            raise ShapeError(f"text embeddings must have width {self.d_t}, got {text.shape}")
        return self.text_projection(text) if self.text_projection is not None else text

    def forward(self, text, grid) -> Tensor:
        return fuse(text, grid, self)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., W, d) -> (..., H, W, d/H)"""
    *lead, w, d = x.shape
    split = reshape(x, tuple(lead) + (w, heads, d // heads))
    nd = split.ndim
    return transpose(split, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))


def _merge_heads(x: Tensor) -> Tensor:
    """(..., H, W, d_h) -> (..., W, H * d_h)"""
    nd = x.ndim
    moved = transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    *lead, w, h, dh = moved.shape
    return reshape(moved, tuple(lead) + (w, h * dh))


def fuse(text, grid, block: FusionBlock) -> Tensor:
    """
    Fuse N x W x d_t text embeddings into N x W x d spatio-temporal embeddings

    Leading batch axes are allowed on both inputs.

    Raises:
        ShapeError: If the projected text does not line up with ``grid``
    """

    grid = as_tensor(grid)
    projected = block.project_text(text)
    if grid.ndim < 2 or grid.shape[-1] != block.d or projected.shape != grid.shape:
        raise ShapeError(f"fusion expects matching (..., W, {block.d}) inputs, "
                         f"got text {as_tensor(text).shape} and series {grid.shape}")

    head_dim = block.d // block.heads
    queries = _split_heads(block.query(grid), block.heads)
    keys = _split_heads(block.key(projected), block.heads)
    values = _split_heads(block.value(projected), block.heads)

    weights = softmax(matmul(queries, swapaxes(keys, -1, -2)) / math.sqrt(head_dim), axis=-1)
    attended = _merge_heads(matmul(weights, values))
    return grid + block.output(attended)


class ConcatFusion(Module):
    """Ablation stand-in for cross-modal attention: Linear([S; P(H_text)])"""

    def __init__(self, d: int, d_t: int, rng: np.random.Generator):
        self.d = d
        self.d_t = d_t
        self.text_projection = Linear(d_t, d, rng, bias=False) if d_t != d else None
        self.mix = Linear(2 * d, d, rng)

    def forward(self, text, grid) -> Tensor:
        text = as_tensor(text)
        if text.shape[-1] != self.d_t:
            raise ShapeError(f"text embeddings must have width {self.d_t}, got {text.shape}")
        projected = self.text_projection(text) if self.text_projection is not None else text
        return self.mix(concat([as_tensor(grid), projected], axis=-1))


@dataclass
class ForecastOutput:
    """mu and optional sigma2, both (..., N, nu) on the standardized scale"""

    mu: Tensor
    sigma2: Optional[Tensor] = None

    @property
    def forecast(self) -> np.ndarray:
        # the Gaussian head's point forecast is its maximum-likelihood estimate, mu
        return self.mu.data

    @property
    def sigma(self) -> Optional[np.ndarray]:
        return None if self.sigma2 is None else np.sqrt(self.sigma2.data)


def _flatten_block(fused) -> Tensor:
    fused = as_tensor(fused)
    if fused.ndim < 3:
        raise ShapeError(f"heads expect (..., N, W, d) input, got {fused.shape}")
    return reshape(fused, fused.shape[:-2] + (fused.shape[-2] * fused.shape[-1],))


class PointHead(Module):
    """Shared Linear(W*d -> nu) per sensor"""

    def __init__(self, window: int, d: int, horizon: int, rng: np.random.Generator):
        if horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
        self.window = window
        self.d = d
        self.horizon = horizon
        self.mean = Linear(window * d, horizon, rng)

    def forward(self, fused) -> ForecastOutput:
        return ForecastOutput(mu=self.mean(_flatten_block(fused)))


class GaussianHead(Module):
    """
    Heteroscedastic Gaussian head

    sigma2 = softplus(raw) + floor, so it never drops below ``floor``.
    """

    def __init__(self, window: int, d: int, horizon: int, rng: np.random.Generator, floor: float = SIGMA2_FLOOR):
        if horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
        if floor <= 0:
            raise ConfigurationError(f"variance floor must be positive, got {floor}")
        self.window = window
        self.d = d
        self.horizon = horizon
        self.floor = floor
        self.mean = Linear(window * d, horizon, rng)
        self.variance = Linear(window * d, horizon, rng)

    def forward(self, fused) -> ForecastOutput:
        flat = _flatten_block(fused)
        return ForecastOutput(mu=self.mean(flat), sigma2=softplus(self.variance(flat)) + self.floor)


def point_head(fused, head: PointHead) -> Tensor:
    return head(fused).mu


def gaussian_head(fused, head: GaussianHead) -> ForecastOutput:
    return head(fused)


# Losses

def _check_pair(mu: Tensor, y: Tensor):
    if mu.shape != y.shape:
        raise ShapeError(f"prediction shape {mu.shape} does not match target shape {y.shape}")


def _mask_tensor(mask, shape) -> Optional[Tensor]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape:
        raise ShapeError(f"target mask shape {mask.shape} does not match {shape}")
    return Tensor(mask)


def mae_loss(mu, y, mask=None) -> Tensor:
    """
    Mean |mu - y| over (observed) elements

    Args:
        mu: Predictions
        y: Targets
        mask: Optional 0/1 array; masked targets contribute nothing

    Returns:
        Tensor: Scalar loss (0 when nothing is observed)
    """

    mu, y = as_tensor(mu), as_tensor(y)
    _check_pair(mu, y)
    residual = tabs(mu - y)
    weights = _mask_tensor(mask, mu.shape)
    if weights is None:
        return tsum(residual) / float(max(mu.size, 1))
    return tsum(residual * weights) / float(max(weights.data.sum(), 1.0))


def gaussian_nll(mu, sigma2, y, mask=None, reduction: str = 'sum') -> Tensor:
    """
    sum of log(sigma2)/2 + (y - mu)^2 / (2 sigma2), additive constant dropped

    Args:
        reduction: 'sum' over elements, or 'mean' over observed elements

    Raises:
        DomainError: If any sigma2 is not strictly positive
    """

    mu, sigma2, y = as_tensor(mu), as_tensor(sigma2), as_tensor(y)
    _check_pair(mu, y)
    _check_pair(sigma2, y)
    if not np.all(sigma2.data > 0):
        raise DomainError(f"gaussian_nll needs sigma2 > 0, smallest value is {float(sigma2.data.min())}")
    if reduction not in ('sum', 'mean'):
        raise ConfigurationError(f"reduction must be 'sum' or 'mean', got {reduction!r}")

    terms = log(sigma2) * 0.5 + square(y - mu) / (sigma2 * 2.0)
    weights = _mask_tensor(mask, mu.shape)
    if weights is not None:
        terms = terms * weights
    total = tsum(terms)
    if reduction == 'mean':
        count = mu.size if weights is None else weights.data.sum()
        total = total / float(max(count, 1.0))
    return total


__all__ = [
    'ConcatFusion', 'ForecastOutput', 'FusionBlock', 'GaussianHead', 'PointHead', 'SIGMA2_FLOOR',
    'fuse', 'gaussian_head', 'gaussian_nll', 'mae_loss', 'point_head',
]
