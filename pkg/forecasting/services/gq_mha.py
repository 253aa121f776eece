"""
Grouped-query multi-head attention

Each group owns one key and one value projection shared by its H heads; every
head has its own query projection. Head outputs are concatenated, projected
by the group's W_o and the G group outputs are averaged. The same block type
attends along the window axis (intra-series) or the sensor axis
(inter-series).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .errors import ConfigurationError, ShapeError
from .numerics import (
    Linear, Module, Parameter, Tensor, as_tensor, concat, matmul, mean, softmax, sqrt, square, swapaxes,
)

logger = logging.getLogger(__name__)

AXES = ('window', 'sensor')
HEAD_WIDTHS = ('literal', 'split')
NORM_EPS = 1e-5

LogitHook = Callable[[Tensor], Tensor]


@dataclass
class GQMHAConfig:
    """
    groups: G
    heads: H per group
    d: embedding width
    axis: 'window' (intra-series) or 'sensor' (inter-series)
    head_width: 'literal' keeps each head at width d; 'split' uses d/H
    residual / layer_norm: optional post-attention wiring, off by default
    depth: number of intra -> inter pairs in a stack
    """

    groups: int = 3
    heads: int = 4
    d: int = 64
    axis: str = 'window'
    head_width: str = 'literal'
    residual: bool = False
    layer_norm: bool = False
    depth: int = 1

    def __post_init__(self):
        if self.groups < 1 or self.heads < 1 or self.depth < 1:
            raise ConfigurationError(f"groups, heads and depth must be >= 1, got "
                                     f"G={self.groups} H={self.heads} depth={self.depth}")
        if self.d % self.heads:
            raise ConfigurationError(f"heads H={self.heads} must divide d={self.d}")
        if self.axis not in AXES:
            raise ConfigurationError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.head_width not in HEAD_WIDTHS:
            raise ConfigurationError(f"head_width must be one of {HEAD_WIDTHS}, got {self.head_width!r}")

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @property
    def head_dim(self) -> int:
        return self.d if self.head_width == 'literal' else self.d_k

    def for_axis(self, axis: str) -> 'GQMHAConfig':
        return GQMHAConfig(self.groups, self.heads, self.d, axis, self.head_width,
                           self.residual, self.layer_norm, self.depth)


class AttentionGroup(Module):
    """Shared K/V projections, H query projections and the group's output projection"""

    def __init__(self, d: int, heads: int, head_dim: int, rng: np.random.Generator):
        self.key = Linear(d, head_dim, rng, bias=False)
        self.value = Linear(d, head_dim, rng, bias=False)
        self.queries = [Linear(d, head_dim, rng, bias=False) for _ in range(heads)]
        self.output = Linear(heads * head_dim, d, rng, bias=False)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.shift = Parameter(np.zeros(d))

    def forward(self, x) -> Tensor:
        centred = x - mean(x, axis=-1, keepdims=True)
        variance = mean(square(centred), axis=-1, keepdims=True)
        return centred / sqrt(variance + NORM_EPS) * self.gain + self.shift


class GQMHABlock(Module):
    """
    One grouped-query attention block bound to an axis

    Args:
        config: Block configuration
        rng: Init generator
    """

    def __init__(self, config: GQMHAConfig, rng: np.random.Generator):
        self.config = config
        self.groups = [AttentionGroup(config.d, config.heads, config.head_dim, rng) for _ in range(config.groups)]
        self.norm = LayerNorm(config.d) if config.layer_norm else None

    def mix(self, seq, logit_hook: LogitHook = None) -> Tensor:
        """attend() followed by the optional residual and layer norm"""

        seq = as_tensor(seq)
        out = attend(seq, self, logit_hook=logit_hook)
        if self.config.residual:
            out = seq + out
        if self.norm is not None:
            out = self.norm(out)
        return out

    def forward(self, sequences, logit_hook: LogitHook = None) -> Tensor:
        if self.config.axis == 'window':
            return intra_series(sequences, self, logit_hook=logit_hook)
        return inter_series(sequences, self, logit_hook=logit_hook)


def _check_width(seq: Tensor, config: GQMHAConfig):
    if seq.ndim < 2 or seq.shape[-1] != config.d:
        raise ShapeError(f"attention input must end in (L, {config.d}), got {seq.shape}")
    if seq.shape[-2] < 1:
        raise ShapeError("attention needs at least one position")


def _head_logits(seq: Tensor, group: AttentionGroup, head: int, keys_t: Tensor, config: GQMHAConfig,
                 logit_hook: Optional[LogitHook]) -> Tensor:
    queries = group.queries[head](seq)
    logits = matmul(queries, keys_t) / math.sqrt(config.d_k)
    if logit_hook is not None:
        logits = logit_hook(logits)
    return logits


def attend(seq, block: GQMHABlock, config: GQMHAConfig = None, logit_hook: LogitHook = None) -> Tensor:
    """
    (1/G) sum_g Concat_h(softmax(Q_gh K_g^T / sqrt(d_k)) V_g) W_o,g over the second-last axis

    Leading axes are treated as independent batches, so (..., L, d) -> (..., L, d).

    Args:
        seq: (..., L, d) sequences
        block: Parameters
        config: Defaults to the block's own config
        logit_hook: Optional transform applied to every logit matrix before the softmax
    """

    config = config or block.config
    seq = as_tensor(seq)
    _check_width(seq, config)

    group_outputs = []
    for group in block.groups:
        keys_t = swapaxes(group.key(seq), -1, -2)
        values = group.value(seq)
        heads = [
            matmul(softmax(_head_logits(seq, group, h, keys_t, config, logit_hook), axis=-1), values)
            for h in range(len(group.queries))
        ]
        group_outputs.append(group.output(concat(heads, axis=-1)))

    total = group_outputs[0]
    for out in group_outputs[1:]:
        total = total + out
    return total / float(len(group_outputs))


def attention_maps(seq, block: GQMHABlock) -> np.ndarray:
    """Attention weights (G, H, ..., L, L) without building a graph"""

    config = block.config
    seq = Tensor(as_tensor(seq).data)
    _check_width(seq, config)
    maps = []
    for group in block.groups:
        keys_t = swapaxes(group.key(seq), -1, -2)
        maps.append([softmax(_head_logits(seq, group, h, keys_t, config, None), axis=-1).data
                     for h in range(len(group.queries))])
    return np.asarray(maps)


def _check_grid(grid: Tensor, config: GQMHAConfig):
    if grid.ndim < 3 or grid.shape[-1] != config.d:
        raise ShapeError(f"expected (..., N, W, {config.d}) embeddings, got {grid.shape}")


def intra_series(grid, block: GQMHABlock, config: GQMHAConfig = None, logit_hook: LogitHook = None) -> Tensor:
    """Attend over the window axis of (..., N, W, d), independently per sensor"""

    grid = as_tensor(grid)
    _check_grid(grid, config or block.config)
    return block.mix(grid, logit_hook=logit_hook)


def inter_series(grid, block: GQMHABlock, config: GQMHAConfig = None, logit_hook: LogitHook = None) -> Tensor:
    """Attend over the sensor axis of (..., N, W, d), independently per window step"""

    grid = as_tensor(grid)
    _check_grid(grid, config or block.config)
    per_step = swapaxes(grid, -3, -2)
    return swapaxes(block.mix(per_step, logit_hook=logit_hook), -3, -2)


class SpatioTemporalStack(Module):
    """
    Time-then-space stack: intra_0 -> inter_0 -> intra_1 -> inter_1 ...

    Either axis can be switched off for ablations; the remaining blocks keep
    their order.
    """

    def __init__(self, config: GQMHAConfig, rng: np.random.Generator, intra: bool = True, inter: bool = True):
        self.config = config
        self.intra: List[GQMHABlock] = (
            [GQMHABlock(config.for_axis('window'), rng) for _ in range(config.depth)] if intra else []
        )
        self.inter: List[GQMHABlock] = (
            [GQMHABlock(config.for_axis('sensor'), rng) for _ in range(config.depth)] if inter else []
        )

    def forward(self, grid) -> Tensor:
        out = as_tensor(grid)
        for level in range(self.config.depth):
            if self.intra:
                out = self.intra[level](out)
            if self.inter:
                out = self.inter[level](out)
        return out


__all__ = [
    'AttentionGroup', 'GQMHABlock', 'GQMHAConfig', 'LayerNorm', 'SpatioTemporalStack',
    'attend', 'attention_maps', 'inter_series', 'intra_series',
]
