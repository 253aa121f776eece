"""
LoRA-AMR adapters

A frozen base projection W0 plus a low-rank update alpha * B @ D @ C where B and
D are frozen random projections and only C trains. The backward pass for C only
needs the width r/2 activation (x @ B) @ D, which is what the memory report counts.
"""

import fnmatch
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ShapeError
from .numerics import Linear, Module, Parameter, SeedBank, Tensor, add, dropout, linear, matmul

logger = logging.getLogger(__name__)

QUANT_EPS = 1e-12

# Query and value projections, the usual LoRA targets
DEFAULT_TARGETS = ('*.query', '*.queries.*', '*.value')


@dataclass
class AdapterConfig:
    """Fine-tuning hyper-parameters for adapter mode"""

    rank: int = 16
    alpha: Optional[float] = None  # None means 1/rank
    dropout: float = 0.05
    lr: float = 2e-4
    weight_decay: float = 1e-3
    epochs: int = 15
    batch: int = 16
    targets: Tuple[str, ...] = DEFAULT_TARGETS
    train_heads: bool = False
    quantize_base: bool = False
    bits: int = 4

    def resolved_alpha(self) -> float:
        return 1.0 / self.rank if self.alpha is None else float(self.alpha)


def _check_rank(r: int, d_in: int, d_out: int, layer: str = 'layer', strict: bool = True):
    if r % 2 != 0:
        raise ConfigurationError(f"adapter rank must be even, got r={r} for {layer}")
    limit = min(d_in, d_out)
    if r < 2 or r > limit or (strict and r == limit):
        raise ConfigurationError(
            f"adapter rank r={r} incompatible with {layer} of shape {d_in}x{d_out} (need 2 <= r < {limit})"
        )


class AdapterLinear(Module):
    """
    Frozen linear layer with a trainable LoRA-AMR update

    Args:
        weight: Frozen base weight W0 (d_in x d_out)
        bias: Optional frozen bias (d_out)
        r: Rank (even, 2 <= r < min(d_in, d_out))
        rng: Generator for the frozen B and D draws
        alpha: Update scale, defaults to 1/r
        dropout_rate: Train-time dropout on x before the B projection
        dropout_rng: Generator for dropout masks
        name: Layer name used in error messages
    """

    def __init__(self, weight: np.ndarray, bias: Optional[np.ndarray], r: int, rng: np.random.Generator,
                 alpha: float = None, dropout_rate: float = 0.0, dropout_rng: np.random.Generator = None,
                 name: str = 'layer'):
        weight = np.asarray(weight, dtype=np.float64)
        d_in, d_out = weight.shape
        _check_rank(r, d_in, d_out, name, strict=False)
        if alpha is not None and alpha <= 0:
            raise ConfigurationError(f"adapter alpha must be positive, got {alpha}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ConfigurationError(f"adapter dropout must be in [0, 1), got {dropout_rate}")

        self.d_in = d_in
        self.d_out = d_out
        self.r = r
        self.alpha = 1.0 / r if alpha is None else float(alpha)
        self.dropout_rate = dropout_rate
        self.name = name

        # B, D ~ N(0, 1/d); C = 0 so the update starts as the zero matrix
        std = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(weight, trainable=False)
        self.bias = Parameter(bias, trainable=False) if bias is not None else None
        self.B = Parameter(rng.normal(0.0, std, size=(d_in, r)), trainable=False)
        self.D = Parameter(rng.normal(0.0, std, size=(r, r // 2)), trainable=False)
        self.C = Parameter(np.zeros((r // 2, d_out)), trainable=True)

        self._dropout_rng = dropout_rng or np.random.default_rng(0)
        self._quantized: Optional['Quantized4BitTensor'] = None
        self.merged = False
        self.stored_activation_elems = 0

    @classmethod
    def from_linear(cls, layer: Linear, r: int, rng: np.random.Generator, **kwargs) -> 'AdapterLinear':
        bias = layer.bias.data if layer.bias is not None else None
        return cls(layer.weight.data, bias, r, rng, **kwargs)

    def base_weight(self) -> np.ndarray:
        """W0, dequantized on read when the base is stored in low-bit form"""
        if self._quantized is not None:
            return dequantize(self._quantized)
        return self.weight.data

    def quantize_base(self, bits: int = 4):
        if self.merged:
            raise ConfigurationError(f"cannot quantize merged adapter {self.name}")
        self._quantized = quantize4(self.weight.data, bits=bits)

    def delta_weight(self) -> np.ndarray:
        """alpha * B @ (D @ C)"""
        return self.alpha * (self.B.data @ (self.D.data @ self.C.data))

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: input width {x.shape[-1]} does not match adapter d_in={self.d_in}")

        if self.merged:
            return linear(x, self.weight, self.bias)

        base = linear(x, Tensor(self.base_weight()) if self._quantized is not None else self.weight, self.bias)

        x_drop = dropout(x, self.dropout_rate, self._dropout_rng, self.training)
        reduced = matmul(matmul(x_drop, self.B), self.D)
        self.stored_activation_elems = int(np.prod(reduced.shape[:-1])) * (self.r // 2)

        update = matmul(reduced, self.C)
        return add(base, update * self.alpha)

    def merge(self) -> np.ndarray:
        """Fold the update into the base weight; returns the merged weight"""
        if not self.merged:
            self.weight.data = self.base_weight() + self.delta_weight()
            self._quantized = None
            self.merged = True
        return self.weight.data.copy()

    def unmerge(self) -> np.ndarray:
        """Subtract the update again; returns the restored W0"""
        if self.merged:
            self.weight.data = self.weight.data - self.delta_weight()
            self.merged = False
        return self.weight.data.copy()


def init_adapter(d: int, r: int, seed: int, alpha: float = None, d_out: int = None,
                 base_weight: np.ndarray = None, dropout_rate: float = 0.0) -> AdapterLinear:
    """
    Build an adapter around a (random or given) base weight

    Args:
        d: Input width (and output width unless d_out is given)
        r: Even rank with 2 <= r < d
        seed: Seed for the frozen B/D draws
        alpha: Update scale (default 1/r)
        d_out: Output width for rectangular layers
        base_weight: Optional W0; drawn from N(0, 1/d) when omitted

    Raises:
        ConfigurationError: If r is odd or not smaller than the layer width
    """

    d_out = d if d_out is None else d_out
    _check_rank(r, d, d_out)
    bank = SeedBank(seed)
    if base_weight is None:
        base_weight = bank.fresh('adapter.base').normal(0.0, 1.0 / np.sqrt(d), size=(d, d_out))
    return AdapterLinear(base_weight, None, r, bank.fresh('adapter.factors'), alpha=alpha,
                         dropout_rate=dropout_rate, dropout_rng=bank.fresh('adapter.dropout'))


def adapter_forward(adapter: AdapterLinear, x) -> Tensor:
    return adapter(x)


def merge(adapter: AdapterLinear) -> np.ndarray:
    return adapter.merge()


# Memory accounting

@dataclass
class MemoryReport:
    """Trainable/frozen parameter and stored-activation counts for one adapted layer"""

    d: int
    r: int
    batch: int
    tokens: int
    entries: Dict[str, Dict[str, int]] = field(default_factory=dict)
    ratio_full_to_lora: float = 0.0
    ratio_full_to_amr: float = 0.0
    activation_ratio: float = 0.0
    init_note: str = 'B, D ~ N(0, 1/d); C = 0'

    @property
    def trainable_params(self) -> int:
        return self.entries['lora_amr']['trainable_params']

    @property
    def frozen_params(self) -> int:
        return self.entries['lora_amr']['frozen_params']

    @property
    def stored_activation_elems(self) -> int:
        return self.entries['lora_amr']['stored_activation_elems']

    def to_document(self) -> Dict[str, object]:
        """Flat key/value view used by the adapter_report command"""
        doc = {'d': self.d, 'r': self.r, 'batch': self.batch, 'tokens': self.tokens}
        for method, counts in self.entries.items():
            for key, value in counts.items():
                doc[f"{method}.{key}"] = value
        doc['ratio.full_to_lora'] = self.ratio_full_to_lora
        doc['ratio.full_to_lora_amr'] = self.ratio_full_to_amr
        doc['ratio.activation_width'] = self.activation_ratio
        doc['init'] = self.init_note
        return doc


def memory_report(d: int, r: int, batch: int = 1, tokens: int = 1) -> MemoryReport:
    """
    Compare full fine-tuning, LoRA and LoRA-AMR for one d x d layer

    Raises:
        ConfigurationError: If r is odd or any size is not positive
    """

    if r % 2 != 0:
        raise ConfigurationError(f"adapter rank must be even, got r={r}")
    if min(d, r, batch, tokens) <= 0:
        raise ConfigurationError('memory report sizes must be positive')

    rows = batch * tokens
    half = r // 2
    entries = {
        'full': {
            'trainable_params': d * d,
            'frozen_params': 0,
            'stored_activation_elems': rows * d,
        },
        'lora': {
            'trainable_params': 2 * r * d,
            'frozen_params': d * d,
            'stored_activation_elems': rows * d,
        },
        'lora_amr': {
            'trainable_params': half * d,
            'frozen_params': d * d + d * r + r * half,
            'stored_activation_elems': rows * half,
        },
    }
    return MemoryReport(
        d=d, r=r, batch=batch, tokens=tokens, entries=entries,
        ratio_full_to_lora=d / (2 * r),
        ratio_full_to_amr=2 * d / r,
        activation_ratio=d / half,
    )


# Low-bit quantization of frozen weights

@dataclass
class Quantized4BitTensor:
    """Per-output-channel affine codes; two 4-bit codes share a byte"""

    codes: np.ndarray
    scale: np.ndarray
    zero_point: np.ndarray
    channel_max: np.ndarray
    shape: Tuple[int, ...]
    bits: int = 4

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    def unpack(self) -> np.ndarray:
        count = int(np.prod(self.shape))
        if self.bits == 4:
            low = self.codes & 0x0F
            high = self.codes >> 4
            flat = np.empty(low.size * 2, dtype=np.uint8)
            flat[0::2] = low
            flat[1::2] = high
            return flat[:count].reshape(self.shape)
        return self.codes[:count].reshape(self.shape)


def quantize4(w: np.ndarray, bits: int = 4) -> Quantized4BitTensor:
    """
    Affine quantization with one (scale, zero-point) per output column

    scale = max(col_max - col_min, eps) / (2**bits - 1)
    code = round((w - col_min) / scale)
    """

    if not 2 <= bits <= 8:
        raise ConfigurationError(f"quantization bit width must be in [2, 8], got {bits}")
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"quantize4 expects a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ConfigurationError('cannot quantize non-finite weights')

    top = 2 ** bits - 1
    col_min = w.min(axis=0)
    col_max = w.max(axis=0)
    scale = np.maximum(col_max - col_min, QUANT_EPS) / top
    codes = np.clip(np.rint((w - col_min) / scale), 0, top).astype(np.uint8)

    flat = codes.ravel()
    if bits == 4:
        if flat.size % 2:
            flat = np.append(flat, np.uint8(0))
        packed = (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)
    else:
        packed = flat.copy()

    return Quantized4BitTensor(codes=packed, scale=scale, zero_point=col_min, channel_max=col_max,
                               shape=w.shape, bits=bits)


def dequantize(q: Quantized4BitTensor) -> np.ndarray:
    codes = q.unpack().astype(np.float64)
    values = q.zero_point + codes * q.scale
    # top code maps back onto the stored channel maximum
    return np.where(codes == q.levels - 1, q.channel_max, values)


# Model-level helpers

def wrap_adapters(model: Module, cfg: AdapterConfig, seed_bank: SeedBank) -> List[str]:
    """
    Replace every targeted Linear in ``model`` with an AdapterLinear and freeze the rest

    Heads stay trainable when ``cfg.train_heads`` is set.

    Returns:
        list: Dotted names of the wrapped layers

    Raises:
        ConfigurationError: If a targeted layer is too narrow for the rank
    """

    targets = [
        name for name, module in model.named_modules()
        if isinstance(module, Linear) and any(fnmatch.fnmatch(name, pattern) for pattern in cfg.targets)
    ]
    if not targets:
        raise ConfigurationError(f"no linear layer matches adapter targets {list(cfg.targets)}")

    modules = dict(model.named_modules())
    for name in targets:
        _check_rank(cfg.rank, modules[name].d_in, modules[name].d_out, name)

    for p in model.parameters():
        p.requires_grad = False

    alpha = cfg.resolved_alpha()
    for name in targets:
        layer = modules[name]
        adapter = AdapterLinear.from_linear(
            layer, cfg.rank, seed_bank.fresh(f"adapter.{name}"), alpha=alpha,
            dropout_rate=cfg.dropout, dropout_rng=seed_bank.generator('adapter.dropout'), name=name,
        )
        if cfg.quantize_base:
            adapter.quantize_base(cfg.bits)
        model.replace_module(name, adapter)

    if cfg.train_heads:
        for name, p in model.named_parameters():
            if name.startswith('head.'):
                p.requires_grad = True

    logger.info("wrapped %d linear layers with LoRA-AMR adapters (r=%d, alpha=%g)", len(targets), cfg.rank, alpha)
    return targets


def adapters(model: Module) -> List[Tuple[str, AdapterLinear]]:
    return [(name, m) for name, m in model.named_modules() if isinstance(m, AdapterLinear)]


def adapter_trainable_count(model: Module) -> int:
    """Sum over adapted layers of (r/2) * d_out"""
    return int(np.sum([m.C.size for _, m in adapters(model)], dtype=np.int64))


def frozen_fingerprint(model: Module) -> str:
    """SHA-256 over every frozen parameter, in name order"""
    digest = hashlib.sha256()
    for name, p in sorted(model.named_parameters(), key=lambda item: item[0]):
        if not p.trainable:
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def merge_all(model: Module) -> int:
    merged = 0
    for _, m in adapters(model):
        m.merge()
        merged += 1
    return merged
