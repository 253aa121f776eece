"""
Finite-difference gradient suite

Every differentiable op, every layer and the composed model register a probe
here. A probe builds a scalar loss from small random inputs and lists the
leaves to perturb; ``run_suite`` feeds each through ``numerics.grad_check``.

Fault injection for tests: inside ``inject_fault('mul')`` every probe routes
the named op through a wrapper that scales its upstream gradient, which the
finite differences cannot see.
"""

import contextlib
import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, GradCheckError
from .fusion_head import ConcatFusion, FusionBlock, GaussianHead, PointHead, gaussian_nll
from .gq_mha import GQMHABlock, GQMHAConfig, LayerNorm, SpatioTemporalStack
from .lora_amr import AdapterLinear
from .model import Forecaster, ModelConfig
from .numerics import Tensor, grad_check
from .prompt_pool import InputEmbedding, PromptPool
from .text_embed import AttentionPool

logger = logging.getLogger(__name__)

SCOPES = ('op', 'layer', 'model')
DEFAULT_TOLERANCES = {'op': 1e-6, 'layer': 1e-5, 'model': 1e-4}
EPS = 1e-4

LossBuilder = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], List[Tensor]]]


@dataclass(frozen=True)
class Probe:
    name: str
    scope: str
    build: LossBuilder


@dataclass
class ProbeResult:
    name: str
    scope: str
    max_rel_error: Optional[float]
    tolerance: float
    seconds: float
    error: str = ''
    seed: int = 0
    seeds_run: int = 1

    @property
    def passed(self) -> bool:
        return not self.error and self.max_rel_error is not None and self.max_rel_error < self.tolerance


REGISTRY: Dict[str, Probe] = {}
_FAULTS: Dict[str, float] = {}


def register(name: str, scope: str):
    if scope not in SCOPES:
        raise ConfigurationError(f"probe scope must be one of {SCOPES}, got {scope!r}")

    def decorator(build: LossBuilder) -> LossBuilder:
        if name in REGISTRY:
            raise ConfigurationError(f"gradient probe {name!r} registered twice")
        REGISTRY[name] = Probe(name, scope, build)
        return build

    return decorator


@contextlib.contextmanager
def inject_fault(op_name: str, factor: float = 0.5) -> Iterator[None]:
    """Scale the backward pass of ``op_name`` by ``factor`` while active"""

    if op_name not in REGISTRY:
        raise ConfigurationError(f"no gradient probe named {op_name!r}")
    _FAULTS[op_name] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op_name, None)


def _op(name: str) -> Callable[..., Tensor]:
    fn = getattr(nx, name)
    factor = _FAULTS.get(name)
    if factor is None:
        return fn

    def faulty(*args, **kwargs) -> Tensor:
        out = fn(*args, **kwargs)
        return nx._result(out.data, (out,), lambda g: (g * factor,))

    return faulty


def _leaf(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Random contraction so every output element carries its own weight"""
    weights = Tensor(rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape))
    return lambda value: nx.sum(nx.mul(value, weights))


def _scalar(forward: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    contract = _weighted(forward(), rng)
    return lambda: contract(forward())


def _module_leaves(module: nx.Module) -> List[Tensor]:
    return [p for p in module.parameters() if p.requires_grad]


# Ops

def _binary(name: str, low: float = -1.0, high: float = 1.0, b_shape: Tuple[int, ...] = (3, 4)):
    @register(name, 'op')
    def build(rng):
        a = _leaf(rng, 2, 3, 4)
        b = _leaf(rng, *b_shape, low=low, high=high)
        return _scalar(lambda: _op(name)(a, b), rng), [a, b]


_binary('add', b_shape=(4,))
_binary('sub', b_shape=(3, 1))
_binary('mul')
_binary('div', low=0.5, high=2.0)


def _unary(name: str, low: float = -1.0, high: float = 1.0, **kwargs):
    @register(name, 'op')
    def build(rng):
        a = _leaf(rng, 3, 4, low=low, high=high)
        return _scalar(lambda: _op(name)(a, **kwargs), rng), [a]


_unary('neg')
_unary('tanh')
_unary('exp')
_unary('log', low=0.5, high=2.0)
_unary('sqrt', low=0.5, high=2.0)
_unary('abs', low=0.2, high=1.0)
_unary('square')
_unary('softplus', low=-3.0, high=3.0)
_unary('softmax', axis=-1)
_unary('sum', axis=0)
_unary('mean', axis=1, keepdims=True)
_unary('reshape', shape=(2, 6))
_unary('transpose', axes=(1, 0))
_unary('swapaxes', axis1=0, axis2=1)


@register('matmul', 'op')
def _matmul(rng):
    a, b, v = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return _scalar(lambda: _op('matmul')(_op('matmul')(a, b), v), rng), [a, b, v]


@register('linear', 'op')
def _linear(rng):
    x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return _scalar(lambda: _op('linear')(x, w, b), rng), [x, w, b]


@register('concat', 'op')
def _concat(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 4)
    return _scalar(lambda: _op('concat')([a, b], axis=-1), rng), [a, b]


@register('stack', 'op')
def _stack(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    return _scalar(lambda: _op('stack')([a, b], axis=1), rng), [a, b]


@register('index', 'op')
def _index(rng):
    a = _leaf(rng, 4, 5)
    return _scalar(lambda: _op('index')(a, (slice(1, 3), [0, 2, 2])), rng), [a]


@register('take', 'op')
def _take(rng):
    a = _leaf(rng, 5, 3)
    rows = np.array([[0, 3], [3, 4], [1, 0]])
    return _scalar(lambda: _op('take')(a, rows), rng), [a]


@register('take_along', 'op')
def _take_along(rng):
    a = _leaf(rng, 3, 6)
    cols = np.array([[5, 1], [0, 3], [2, 4]])
    return _scalar(lambda: _op('take_along')(a, cols, axis=-1), rng), [a]


@register('dropout', 'op')
def _dropout(rng):
    a = _leaf(rng, 4, 5)
    # a fresh generator per call keeps the mask fixed across perturbations
    return _scalar(lambda: _op('dropout')(a, 0.3, np.random.default_rng(11), True), rng), [a]


# Layers

@register('layer.linear', 'layer')
def _layer_linear(rng):
    layer = nx.Linear(4, 3, rng)
    layer.bias.data = rng.normal(size=3)
    x = _leaf(rng, 2, 4)
    return _scalar(lambda: layer(x), rng), [x] + _module_leaves(layer)


@register('layer.input_embedding', 'layer')
def _layer_embedding(rng):
    embedding = InputEmbedding(4, rng)
    values, mask = rng.normal(size=(2, 3)), (rng.random((2, 3)) > 0.3).astype(float)
    return _scalar(lambda: embedding(values, mask), rng), _module_leaves(embedding)


@register('layer.prompt_pool', 'layer')
def _layer_prompt_pool(rng):
    pool = PromptPool(pool_size=4, top_k=2, window=3, d=4, rng=rng)
    pool.straight_through = False
    query = _leaf(rng, 2, 3, 4)
    indices = np.array([[1, 3], [0, 2]])

    def forward():
        assembled, result = pool(query, indices)
        return nx.concat([nx.reshape(assembled, (2, 12)), result.scores], axis=-1)

    return _scalar(forward, rng), [query] + _module_leaves(pool)


def _gq_block(rng, axis: str) -> GQMHABlock:
    config = GQMHAConfig(groups=2, heads=2, d=4, axis=axis, residual=True, layer_norm=True)
    block = GQMHABlock(config, rng)
    block.norm.gain.data = rng.uniform(0.5, 1.5, size=4)
    block.norm.shift.data = rng.normal(size=4)
    return block


@register('layer.gq_mha.intra', 'layer')
def _layer_intra(rng):
    block, grid = _gq_block(rng, 'window'), _leaf(rng, 2, 3, 4)
    return _scalar(lambda: block(grid), rng), [grid] + _module_leaves(block)


@register('layer.gq_mha.inter', 'layer')
def _layer_inter(rng):
    block, grid = _gq_block(rng, 'sensor'), _leaf(rng, 3, 2, 4)
    return _scalar(lambda: block(grid), rng), [grid] + _module_leaves(block)


@register('layer.layer_norm', 'layer')
def _layer_norm(rng):
    norm, x = LayerNorm(5), _leaf(rng, 3, 5)
    norm.gain.data = rng.uniform(0.5, 1.5, size=5)
    return _scalar(lambda: norm(x), rng), [x] + _module_leaves(norm)


@register('layer.stack', 'layer')
def _layer_stack(rng):
    stack = SpatioTemporalStack(GQMHAConfig(groups=2, heads=2, d=4, head_width='split'), rng)
    grid = _leaf(rng, 3, 2, 4)
    return _scalar(lambda: stack(grid), rng), [grid] + _module_leaves(stack)


@register('layer.attention_pool', 'layer')
def _layer_attention_pool(rng):
    pool, tokens = AttentionPool(3, rng), _leaf(rng, 2, 4, 3)
    return _scalar(lambda: pool(tokens), rng), [tokens] + _module_leaves(pool)


@register('layer.fusion', 'layer')
def _layer_fusion(rng):
    block = FusionBlock(4, 3, 2, rng)
    text, grid = _leaf(rng, 2, 3, 3), _leaf(rng, 2, 3, 4)
    return _scalar(lambda: block(text, grid), rng), [text, grid] + _module_leaves(block)


@register('layer.concat_fusion', 'layer')
def _layer_concat_fusion(rng):
    block = ConcatFusion(4, 3, rng)
    text, grid = _leaf(rng, 2, 3, 3), _leaf(rng, 2, 3, 4)
    return _scalar(lambda: block(text, grid), rng), [text, grid] + _module_leaves(block)


@register('layer.point_head', 'layer')
def _layer_point_head(rng):
    head, fused = PointHead(3, 2, 2, rng), _leaf(rng, 2, 3, 2)
    return _scalar(lambda: head(fused).mu, rng), [fused] + _module_leaves(head)


@register('layer.gaussian_nll', 'layer')
def _layer_gaussian(rng):
    head, fused = GaussianHead(3, 2, 2, rng), _leaf(rng, 2, 3, 2)
    y = rng.normal(size=(2, 2))
    mask = np.array([[1.0, 1.0], [0.0, 1.0]])

    def loss():
        out = head(fused)
        return gaussian_nll(out.mu, out.sigma2, y, mask, reduction='mean')

    return loss, [fused] + _module_leaves(head)


@register('layer.adapter', 'layer')
def _layer_adapter(rng):
    base = nx.Linear(6, 5, rng)
    adapter = AdapterLinear.from_linear(base, 4, rng, alpha=0.5)
    adapter.C.data = rng.normal(size=adapter.C.shape)
    x = _leaf(rng, 3, 6)
    return _scalar(lambda: adapter(x), rng), [x, adapter.C]


# Composed model

MODEL_PROBE_CONFIG = dict(window=4, horizon=2, d=8, pool_size=4, top_k=2, groups=2, heads=2, fusion_heads=2, d_t=4)


@register('model', 'model')
def _model(rng):
    """N=3, W=4, d=8, M=4, K=2, G=2, H=2 with the prompt selection held fixed and the score gate off"""

    model = Forecaster(ModelConfig(**MODEL_PROBE_CONFIG), seed=int(rng.integers(1 << 31)))
    model.eval()
    model.prompt_pool.straight_through = False
    inputs = rng.normal(size=(1, 3, 4))
    mask = np.ones_like(inputs)
    mask[0, 1, 2] = 0.0
    tokens = rng.uniform(-1.0, 1.0, size=(1, 3, 4, 2, 4))
    indices = rng.permuted(np.tile(np.arange(4), (1, 3, 1)), axis=-1)[..., :2]
    target = Tensor(rng.normal(size=(1, 3, 2)))

    def loss():
        out = model(inputs, mask, tokens, prompt_indices=indices)
        return nx.sum(nx.square(nx.sub(out.mu, target)))

    return loss, _module_leaves(model)


# Running

def probes(scope: str = 'model', names: Sequence[str] = None) -> List[Probe]:
    """
    Probes in registration order

    ``scope='layer'`` runs ops and layers; ``scope='model'`` runs everything.
    """

    if scope not in SCOPES:
        raise ConfigurationError(f"scope must be one of {SCOPES}, got {scope!r}")
    included = SCOPES[:SCOPES.index(scope) + 1]
    selected = [p for p in REGISTRY.values() if p.scope in included]
    if names:
        unknown = sorted(set(names) - set(REGISTRY))
        if unknown:
            raise ConfigurationError(f"unknown gradient probe(s) {unknown}")
        selected = [p for p in selected if p.name in names]
    return selected


def run_probe(probe: Probe, tolerance: float, seed: int = 0, eps: float = EPS) -> ProbeResult:
    rng = np.random.default_rng([seed, len(probe.name)] + [ord(c) for c in probe.name])
    started = time.perf_counter()
    try:
        loss_fn, leaves = probe.build(rng)
        error = grad_check(loss_fn, leaves, eps=eps)
    except GradCheckError as exc:
        return ProbeResult(probe.name, probe.scope, None, tolerance, time.perf_counter() - started, str(exc), seed)
    return ProbeResult(probe.name, probe.scope, error, tolerance, time.perf_counter() - started, seed=seed)


def run_probe_seeds(probe: Probe, tolerance: float, seeds: Sequence[int], eps: float = EPS) -> ProbeResult:
    """
    Worst result of ``probe`` over ``seeds``

    Stops at the first failing seed and reports it; otherwise returns the seed
    with the largest relative error. ``seconds`` covers every seed run.
    """

    if not seeds:
        raise ConfigurationError('at least one gradient-check seed is required')
    worst: Optional[ProbeResult] = None
    total = 0.0
    for count, seed in enumerate(seeds, start=1):
        result = run_probe(probe, tolerance, seed, eps)
        total += result.seconds
        if not result.passed:
            worst = result
            break
        if worst is None or result.max_rel_error > worst.max_rel_error:
            worst = result
    return replace(worst, seconds=total, seeds_run=count)


def run_suite(scope: str = 'model', tolerances: Dict[str, float] = None, seed: int = 0,
              names: Sequence[str] = None, seeds: int = 1) -> List[ProbeResult]:
    """Run every probe in ``scope`` under seeds ``seed .. seed + seeds - 1``; one (worst) result per probe"""

    limits = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    results = []
    for probe in probes(scope, names):
        result = run_probe_seeds(probe, limits[probe.scope], range(seed, seed + seeds))
        if not result.passed:
            logger.warning("gradient check failed for %s (seed %d): %s", probe.name, result.seed,
                           result.error or f"max relative error {result.max_rel_error:.3e}")
        results.append(result)
    return results


def failures(results: Sequence[ProbeResult]) -> List[str]:
    return [r.name for r in results if not r.passed]


__all__ = [
    'DEFAULT_TOLERANCES', 'Probe', 'ProbeResult', 'REGISTRY', 'SCOPES', 'failures', 'inject_fault', 'probes',
    'register', 'run_probe', 'run_probe_seeds', 'run_suite',
]
