"""
Model checkpoints

A checkpoint is a numpy ``.npz`` archive: one ``param/<dotted name>`` array per
parameter plus a ``__meta__`` entry holding a JSON document with the magic
string, format version, model config, standardizer, seed-bank state and the
adapter setup. See docs/formats.md.
"""

import json
import logging
import zipfile
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .dataset import Standardizer
from .errors import CheckpointError
from .lora_amr import AdapterConfig, adapters, wrap_adapters
from .model import Forecaster, ModelConfig
from .numerics import SeedBank

logger = logging.getLogger(__name__)

MAGIC = 'STPROPH-CKPT'
VERSION = 1
PARAM_PREFIX = 'param/'


def _jsonable_state(state: dict) -> dict:
    """bit_generator states hold numpy ints; make them plain JSON"""
    return json.loads(json.dumps(state, default=lambda v: v.item() if hasattr(v, 'item') else str(v)))


def save_checkpoint(path, model: Forecaster, standardizer: Standardizer, run_config: dict = None,
                    seed_bank: SeedBank = None, adapter_config: AdapterConfig = None, extra: dict = None) -> Path:
    """
    Write ``model`` and everything needed to evaluate it

    Raises:
        CheckpointError: If an adapter keeps its base in quantized form
    """

    wrapped = adapters(model)
    if any(layer._quantized is not None for _, layer in wrapped):
        raise CheckpointError("adapters with a quantized base are not checkpointed; merge or re-run without "
                              "quantize_base")

    meta = {
        'magic': MAGIC,
        'version': VERSION,
        'seed': model.seed,
        'model': asdict(model.config),
        'standardizer': standardizer.to_dict(),
        'seed_bank': _jsonable_state(seed_bank.state()) if seed_bank is not None else {},
        'adapter': None,
        'run_config': run_config or {},
        'extra': extra or {},
    }
    if wrapped:
        if adapter_config is None:
            raise CheckpointError("model has adapters; pass the adapter config used to wrap it")
        adapter_doc = asdict(adapter_config)
        adapter_doc['targets'] = list(adapter_doc['targets'])
        meta['adapter'] = {
            'config': adapter_doc,
            'layers': [name for name, _ in wrapped],
            'merged': [name for name, layer in wrapped if layer.merged],
        }

    arrays = {f"{PARAM_PREFIX}{name}": p.data for name, p in model.named_parameters()}
    arrays['__meta__'] = np.array(json.dumps(meta, sort_keys=True))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as fh:
        np.savez(fh, **arrays)
    logger.info("wrote checkpoint %s (%d arrays)", path, len(arrays) - 1)
    return path


def read_meta(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive['__meta__']))
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    if meta.get('magic') != MAGIC:
        raise CheckpointError(f"{path}: bad magic {meta.get('magic')!r}")
    if meta.get('version') != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    return meta


def load_checkpoint(path) -> Tuple[Forecaster, Standardizer, dict]:
    """
    Rebuild the model (re-wrapping adapters when present) and load its parameters

    Returns:
        tuple: (model, standardizer, meta)

    Raises:
        CheckpointError: Missing file, bad header or parameter mismatch
    """

    meta = read_meta(path)
    config_doc = dict(meta['model'])
    config_doc['ablations'] = tuple(config_doc.get('ablations', ()))
    model = Forecaster(ModelConfig(**config_doc), seed=meta['seed'])

    adapter_meta: Optional[dict] = meta.get('adapter')
    if adapter_meta:
        adapter_doc = dict(adapter_meta['config'])
        adapter_doc['targets'] = tuple(adapter_meta['layers'])
        wrap_adapters(model, AdapterConfig(**adapter_doc), SeedBank(meta['seed']))

    with np.load(path, allow_pickle=False) as archive:
        state = {key[len(PARAM_PREFIX):]: archive[key] for key in archive.files if key.startswith(PARAM_PREFIX)}
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

    if adapter_meta:
        merged = set(adapter_meta.get('merged', ()))
        for name, layer in adapters(model):
            layer.merged = name in merged

    logger.info("loaded checkpoint %s", path)
    return model, Standardizer.from_dict(meta['standardizer']), meta


__all__ = ['MAGIC', 'VERSION', 'load_checkpoint', 'read_meta', 'save_checkpoint']
