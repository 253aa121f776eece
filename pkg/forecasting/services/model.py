"""
Forecaster assembly

embed -> prompt assembly -> intra-series -> inter-series -> text fusion -> head,
with each stage removable for the ablation variants.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ShapeError
from .fusion_head import SIGMA2_FLOOR, ConcatFusion, ForecastOutput, FusionBlock, GaussianHead, PointHead
from .gq_mha import GQMHAConfig, SpatioTemporalStack
from .numerics import Module, SeedBank, Tensor, as_tensor
from .prompt_pool import InputEmbedding, PromptPool
from .text_embed import AttentionPool

logger = logging.getLogger(__name__)

ABLATIONS = ('LLMs', 'DP', 'IntraS', 'InterS', 'CMA')
VARIANTS = ('point', 'uncertainty')


@dataclass
class ModelConfig:
    """
    Architecture hyperparameters

    ``d_k`` is derived (d / heads); passing a conflicting value is an error.
    ``d_t`` is the token-embedding width delivered by the text provider.
    """

    window: int = 12
    horizon: int = 12
    d: int = 64
    pool_size: int = 15
    top_k: int = 4
    groups: int = 3
    heads: int = 4
    d_k: Optional[int] = None
    fusion_heads: int = 4
    depth: int = 1
    head_width: str = 'literal'
    residual: bool = False
    layer_norm: bool = False
    d_t: int = 16
    sigma2_floor: float = SIGMA2_FLOOR
    variant: str = 'point'
    ablations: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        for name in ('window', 'horizon', 'd', 'pool_size', 'top_k', 'groups', 'heads', 'fusion_heads', 'depth',
                     'd_t'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ConfigurationError(f"model.heads={self.heads} must divide model.d={self.d}")
        if self.d_k is None:
            self.d_k = self.d // self.heads
        elif self.d_k != self.d // self.heads:
            raise ConfigurationError(f"model.d_k must equal d / heads = {self.d // self.heads}, got {self.d_k}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"model.variant must be one of {VARIANTS}, got {self.variant!r}")
        unknown = [a for a in self.ablations if a not in ABLATIONS]
        if unknown:
            raise ConfigurationError(f"unknown ablation(s) {unknown}; valid names are {list(ABLATIONS)}")
        if 'LLMs' in self.ablations and 'CMA' in self.ablations:
            raise ConfigurationError("'CMA' replaces the text fusion that 'LLMs' removes; pick one")
        if self.sigma2_floor <= 0:
            raise ConfigurationError(f"model.sigma2_floor must be positive, got {self.sigma2_floor}")

    def without(self, *names: str) -> 'ModelConfig':
        values = asdict(self)
        values['ablations'] = tuple(names)
        return ModelConfig(**values)

    @property
    def uses_text(self) -> bool:
        return 'LLMs' not in self.ablations

    def attention_config(self) -> GQMHAConfig:
        return GQMHAConfig(groups=self.groups, heads=self.heads, d=self.d, head_width=self.head_width,
                           residual=self.residual, layer_norm=self.layer_norm, depth=self.depth)


class Forecaster(Module):
    """
    Assembled network

    Submodules set to ``None`` are ablated. Every component draws its init from
    its own SeedBank label, so removing one leaves the others' weights unchanged.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        bank = SeedBank(seed)
        ablated = set(config.ablations)

        self.embedding = InputEmbedding(config.d, bank.fresh('init.embedding'))
        self.prompt_pool = (
            None if 'DP' in ablated
            else PromptPool(config.pool_size, config.top_k, config.window, config.d, bank.fresh('init.prompt_pool'))
        )
        self.stack = SpatioTemporalStack(config.attention_config(), bank.fresh('init.stack'),
                                         intra='IntraS' not in ablated, inter='InterS' not in ablated)

        self.text_pool = None
        self.fusion = None
        if config.uses_text:
            self.text_pool = AttentionPool(config.d_t, bank.fresh('init.text'))
            if 'CMA' in ablated:
                self.fusion = ConcatFusion(config.d, config.d_t, bank.fresh('init.fusion'))
            else:
                self.fusion = FusionBlock(config.d, config.d_t, config.fusion_heads, bank.fresh('init.fusion'))

        head_rng = bank.fresh('init.head')
        if config.variant == 'uncertainty':
            self.head = GaussianHead(config.window, config.d, config.horizon, head_rng, config.sigma2_floor)
        else:
            self.head = PointHead(config.window, config.d, config.horizon, head_rng)

        self.last_prompt_indices: Optional[np.ndarray] = None

    def forward(self, inputs, input_mask=None, tokens=None, prompt_indices: np.ndarray = None) -> ForecastOutput:
        """
        Args:
            inputs: (..., N, W) standardized, zero-filled windows
            input_mask: (..., N, W) observed flags; all observed when omitted
            tokens: (..., N, W, m, d_t) token embeddings, required unless text is ablated
            prompt_indices: Fixed (..., N, K) prompt selection, bypassing ranking
        """

        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim < 2 or inputs.shape[-1] != self.config.window:
            raise ShapeError(f"inputs must end in (N, {self.config.window}), got {inputs.shape}")
        input_mask = np.ones_like(inputs) if input_mask is None else np.asarray(input_mask, dtype=np.float64)

        grid = self.embedding(inputs, input_mask)
        if self.prompt_pool is not None:
            grid, retrieval = self.prompt_pool(grid, prompt_indices)
            self.last_prompt_indices = retrieval.indices
        grid = self.stack(grid)

        if self.fusion is not None:
            if tokens is None:
                raise ConfigurationError("this model fuses text embeddings; pass token embeddings "
                                         "or ablate 'LLMs'")
            tokens = as_tensor(tokens)
            if tokens.shape[:-2] != inputs.shape:
                raise ShapeError(f"token embeddings {tokens.shape} do not cover windows {inputs.shape}")
            grid = self.fusion(self.text_pool(tokens), grid)

        return self.head(grid)

    def parameter_report(self) -> Dict[str, int]:
        """Parameter count per top-level component plus the total"""

        report = {}
        for name in ('embedding', 'prompt_pool', 'stack', 'text_pool', 'fusion', 'head'):
            component = getattr(self, name)
            report[name] = component.num_parameters() if component is not None else 0
        report['total'] = self.num_parameters()
        return report

    def summary(self) -> Dict[str, object]:
        return {
            'variant': self.config.variant,
            'ablations': list(self.config.ablations),
            'order': 'embed -> prompt -> intra -> inter -> fuse -> head',
            'fusion': (
                'none' if self.fusion is None
                else 'concat-linear' if isinstance(self.fusion, ConcatFusion)
                else 'mha(queries=series, keys/values=text) + series residual'
            ),
            'head_width': self.config.head_width,
            'parameters': self.parameter_report(),
        }


def build_model(config: ModelConfig, seed: int = 0) -> Forecaster:
    model = Forecaster(config, seed)
    summary = model.summary()
    logger.info("built %s model (ablations=%s, fusion=%s): %d parameters",
                summary['variant'], summary['ablations'] or 'none', summary['fusion'], summary['parameters']['total'])
    return model


def predict(model: Forecaster, inputs, input_mask=None, tokens=None) -> ForecastOutput:
    """Eval-mode forward without building a gradient graph"""

    was_training = model.training
    model.eval()
    try:
        out = model(inputs, input_mask, tokens)
    finally:
        model.train(was_training)
    mu = Tensor(out.mu.data)
    sigma2 = None if out.sigma2 is None else Tensor(out.sigma2.data)
    return ForecastOutput(mu, sigma2)


__all__ = ['ABLATIONS', 'VARIANTS', 'Forecaster', 'ModelConfig', 'build_model', 'predict']
