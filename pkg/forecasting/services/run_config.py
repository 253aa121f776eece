"""
Run configuration

A run-config document is JSON with the sections dataset, model, train,
adapter, text_provider and output. Values resolve in this order (later wins):
built-in defaults, the file, environment variables, command-line flags.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from django.conf import settings

from .checkpoint import load_checkpoint
from .dataset import DATASET_CATALOG, SeriesMatrix, SplitSpec, load_csv, load_manifest
from .errors import ConfigurationError
from .lora_amr import AdapterConfig
from .model import ModelConfig
from .synthetic import GENERATORS
from .text_embed import TextProviderConfig, TextProvider, build_provider
from .trainer import TrainConfig, prepare_data

logger = logging.getLogger(__name__)

SECTIONS = ('dataset', 'model', 'train', 'adapter', 'text_provider', 'output')
ENV_OUT_DIR = 'STPROPH_OUT_DIR'
ENV_EMBED_ENDPOINT = 'STPROPH_EMBED_ENDPOINT'


@dataclass
class DatasetConfig:
    name: str = 'toy_sine'
    path: str = ''
    manifest: str = ''
    synthetic: str = ''
    n_steps: Optional[int] = None
    granularity: str = '5min'
    split: Optional[Tuple[float, float, float]] = None


@dataclass
class OutputConfig:
    dir: str = ''
    record: bool = True


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    text_provider: TextProviderConfig = field(default_factory=TextProviderConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    runs: int = 1

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        document = {name: asdict(getattr(self, name)) for name in SECTIONS}
        document['train'].pop('adapter', None)
        document['train']['runs'] = self.runs
        return json.loads(json.dumps(document, default=list))

    def config_hash(self) -> str:
        """SHA-256 of the canonical resolved config, output location excluded"""
        document = self.to_dict()
        document.pop('output')
        canonical = json.dumps(document, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def out_dir(self) -> Path:
        return Path(self.output.dir or settings.FORECASTING['OUT_DIR'])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**asdict(self.train), 'adapter': self.adapter})


def merge_documents(base: dict, layer: Mapping) -> dict:
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in base.items()}
    for key, value in layer.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = merge_documents(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_document(path) -> dict:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: top level must be an object with sections {list(SECTIONS)}")
    return document


def defaults_layer() -> dict:
    """Project defaults from settings.FORECASTING, below the file"""
    options = settings.FORECASTING
    return {
        'text_provider': {'timeout': options['PROVIDER_TIMEOUT'], 'retries': options['PROVIDER_RETRIES']},
        'output': {'record': options['RECORD_RUNS']},
    }


def env_layer(environ: Mapping[str, str] = None) -> dict:
    environ = os.environ if environ is None else environ
    layer: Dict[str, dict] = {}
    if environ.get(ENV_OUT_DIR):
        layer.setdefault('output', {})['dir'] = environ[ENV_OUT_DIR]
    if environ.get(ENV_EMBED_ENDPOINT):
        layer.setdefault('text_provider', {})['endpoint'] = environ[ENV_EMBED_ENDPOINT]
    return layer


def flags_layer(overrides: Mapping[str, object]) -> dict:
    """Turn {'model.variant': 'point', ...} into a nested document, skipping None values"""

    layer: Dict[str, dict] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition('.')
        if not key:
            raise ConfigurationError(f"override {dotted!r} must be 'section.key'")
        layer.setdefault(section, {})[key] = value
    return layer


def _validate(document: dict) -> Dict[str, dict]:
    from ..forms import SECTION_FORMS

    unknown = sorted(set(document) - set(SECTION_FORMS))
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(unknown)}")

    sections = {}
    for name, form_class in SECTION_FORMS.items():
        raw = document.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{name}: section must be an object")
        form = form_class(raw)
        unknown_keys = form.unknown_keys()
        if unknown_keys:
            raise ConfigurationError(f"unknown config key(s): {', '.join(f'{name}.{k}' for k in unknown_keys)}")
        if not form.is_valid():
            problems = '; '.join(
                f"{name}.{key}: {' '.join(messages)}" if key != '__all__' else f"{name}: {' '.join(messages)}"
                for key, messages in form.errors.items()
            )
            raise ConfigurationError(problems)
        sections[name] = form.values()
    return sections


def build_run_config(document: Mapping = None) -> RunConfig:
    """Validate a merged document and build the dataclasses"""

    sections = _validate(dict(document or {}))
    train = dict(sections['train'])
    runs = train.pop('runs', 1)
    model = dict(sections['model'])
    provider = dict(sections['text_provider'])

    # the provider's token width is the model's text width
    if 'd_t' in model and 'd_t' in provider and model['d_t'] != provider['d_t']:
        raise ConfigurationError(f"model.d_t={model['d_t']} does not match text_provider.d_t={provider['d_t']}")
    width = model.get('d_t', provider.get('d_t'))
    if width is not None:
        model['d_t'] = provider['d_t'] = width

    config = RunConfig(
        dataset=DatasetConfig(**sections['dataset']),
        model=ModelConfig(**model),
        train=TrainConfig(**train),
        adapter=AdapterConfig(**sections['adapter']),
        text_provider=TextProviderConfig(**provider),
        output=OutputConfig(**sections['output']),
        runs=runs,
    )
    if config.model.uses_text and config.text_provider.kind == 'none':
        raise ConfigurationError("text_provider.kind is 'none' but the model fuses text; ablate 'LLMs' or "
                                 "pick a provider")
    return config


def load_run_config(path=None, overrides: Mapping[str, object] = None,
                    environ: Mapping[str, str] = None) -> RunConfig:
    """
    Resolve a run config from file, environment and flags

    Args:
        path: JSON run-config file, optional
        overrides: Dotted flag values such as ``{'train.seed': 3}``; None values are ignored
        environ: Environment mapping (defaults to os.environ)

    Raises:
        ConfigurationError: Unknown section or key (named by dotted path), or an invalid value
    """

    document = merge_documents(defaults_layer(), read_document(path) if path else {})
    document = merge_documents(document, env_layer(environ))
    document = merge_documents(document, flags_layer(overrides or {}))
    config = build_run_config(document)
    logger.info("resolved run config %s", config.config_hash()[:12])
    return config


def load_series(dataset: DatasetConfig, seed: int = 0) -> Tuple[SeriesMatrix, SplitSpec]:
    """
    The dataset a run config points at, with its split

    The split comes from the config, then a manifest, then the benchmark
    catalog, then 70/10/20.
    """

    split = dataset.split
    if dataset.manifest:
        manifest = load_manifest(dataset.manifest)
        series = load_csv(manifest.path, manifest.name, manifest.granularity)
        split = split or manifest.split
    elif dataset.path:
        series = load_csv(dataset.path, dataset.name, dataset.granularity)
    else:
        # a bare name like 'coupled' picks the generator of that name
        generator = dataset.synthetic or dataset.name
        if generator not in GENERATORS:
            raise ConfigurationError(f"dataset needs one of path, manifest or synthetic "
                                     f"(or a generator name in {sorted(GENERATORS)}), got {generator!r}")
        kwargs = {'seed': seed}
        if dataset.n_steps:
            kwargs['n_steps'] = dataset.n_steps
        series = GENERATORS[generator](**kwargs)

    if split is None:
        info = DATASET_CATALOG.get(dataset.name)
        split = info.split if info else (0.7, 0.1, 0.2)
    return series, SplitSpec.from_sequence(split)


def provider_for(config: RunConfig, session=None) -> Optional[TextProvider]:
    """Token provider for the run; None when the model has no text branch"""
    if not config.model.uses_text:
        return None
    return build_provider(config.text_provider, session)


def restore_run(checkpoint, config: RunConfig = None):
    """
    Model, run config and prepared data for a checkpoint

    The data is standardized with the checkpoint's own statistics. Pass
    ``config`` to point the model at another dataset (adapter transfer).
    """

    model, standardizer, meta = load_checkpoint(checkpoint)
    if config is None:
        config = build_run_config(merge_documents(meta['run_config'], env_layer()))
    series, split = load_series(config.dataset, config.seed)
    provider = build_provider(config.text_provider) if model.config.uses_text else None
    data = prepare_data(series, split, model.config.window, model.config.horizon, provider, standardizer=standardizer)
    return model, config, data, meta


__all__ = [
    'DatasetConfig', 'ENV_EMBED_ENDPOINT', 'ENV_OUT_DIR', 'OutputConfig', 'RunConfig', 'SECTIONS',
    'build_run_config', 'load_run_config', 'load_series', 'merge_documents', 'provider_for', 'read_document',
    'restore_run',
]
