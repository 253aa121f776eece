"""
Training, evaluation and experiment drivers

Training minimizes MAE (point variant) or Gaussian NLL (uncertainty variant)
with Adam, halves the learning rate when validation MAE stalls, stops early
and restores the best-validation parameters. Everything is driven by the
config seed, so two runs with the same inputs produce identical histories.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .dataset import (
    DEFAULT_BLOCK_LENGTHS, SeriesMatrix, SplitSpec, Standardizer, WindowBatch, mask_block_mcar, mask_point_mcar,
    split_chrono, window_batch,
)
from .errors import ConfigurationError, DataError, EvaluationError, NumericalAbort, OptimizerError
from .fusion_head import gaussian_nll, mae_loss
from .lora_amr import AdapterConfig, adapter_trainable_count, frozen_fingerprint, wrap_adapters
from .metrics import forecast_metrics, ha_baseline, horizon_table, interval_coverage
from .model import ABLATIONS, Forecaster, ModelConfig, build_model, predict
from .numerics import Adam, SeedBank
from .text_embed import TextProvider

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
HISTORY_COLUMNS = ['epoch', 'train_loss', 'val_mae', 'val_rmse', 'val_mape', 'lr']
MISSING_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)
EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 48
    lr: float = 1e-3
    weight_decay: float = 0.0
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    early_stop_patience: int = 10
    seed: int = 0
    adapter: Optional[AdapterConfig] = None

    def __post_init__(self):
        for name in ('epochs', 'batch', 'plateau_patience', 'early_stop_patience'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigurationError(f"train.lr must be positive, got {self.lr}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigurationError(f"train.plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"train.weight_decay must be >= 0, got {self.weight_decay}")

    def for_adapter(self) -> 'TrainConfig':
        """The schedule used while fine-tuning adapters"""
        adapter = self.adapter or AdapterConfig()
        return replace(self, epochs=adapter.epochs, batch=adapter.batch, lr=adapter.lr,
                       weight_decay=adapter.weight_decay, adapter=adapter)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement"""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.stale = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.optimizer.lr *= self.factor
                self.stale = 0
                logger.info("validation MAE flat for %d epochs; learning rate now %g", self.patience,
                            self.optimizer.lr)
        return self.optimizer.lr


class EarlyStopping:
    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.counter = 0

    def __call__(self, metric: float) -> bool:
        """Record one epoch; True means stop"""
        if metric < self.best:
            self.best = metric
            self.counter = 0
            return False
        self.counter += 1
        return self.counter >= self.patience


# Data preparation

@dataclass
class PreparedData:
    """
    Everything a run needs from one dataset

    ``windows`` are standardized; ``tokens`` hold provider output per split
    (None when the model has no text branch).
    """

    series: SeriesMatrix
    standardizer: Standardizer
    ranges: Dict[str, range]
    windows: Dict[str, WindowBatch]
    tokens: Dict[str, Optional[np.ndarray]]
    window: int
    horizon: int
    provider: Optional[TextProvider] = None

    def tokens_for(self, batch: WindowBatch) -> Optional[np.ndarray]:
        if self.provider is None:
            return None
        return self.provider.token_embeddings(
            batch.inputs, batch.anchors, self.standardizer.inverse(batch.inputs), self.series.sensors,
        )


def prepare_data(series: SeriesMatrix, split: SplitSpec, window: int, horizon: int,
                 provider: TextProvider = None, standardizer: Standardizer = None) -> PreparedData:
    """
    Split, standardize and window ``series``

    Args:
        standardizer: Reuse fitted statistics instead of fitting on this
            series' training range (adapter transfer keeps the pretrained scale)
    """

    train, val, test = split_chrono(series, split)
    ranges = {'train': train, 'val': val, 'test': test}
    standardizer = standardizer or Standardizer.fit(series, train)
    scaled = standardizer.transform_series(series)

    data = PreparedData(series, standardizer, ranges, {}, {}, window, horizon, provider)
    for name, span in ranges.items():
        data.windows[name] = window_batch(scaled, span, window, horizon)
        data.tokens[name] = data.tokens_for(data.windows[name]) if len(data.windows[name]) else None
    logger.info("prepared %s: windows train=%d val=%d test=%d", series.name,
                *(len(data.windows[name]) for name in SPLITS))
    return data


def masked_windows(data: PreparedData, split: str, pattern: Optional[str], ratio: float, seed: int,
                   block_lengths: Tuple[int, int] = DEFAULT_BLOCK_LENGTHS) -> Tuple[WindowBatch, Optional[np.ndarray]]:
    """
    Windows of ``split`` whose inputs come from an MCAR-masked copy of the series

    Targets keep their original observations. With no pattern or ratio 0 the
    prepared windows are returned unchanged.
    """

    if pattern is None or ratio == 0:
        return data.windows[split], data.tokens[split]
    if pattern == 'point':
        masked = mask_point_mcar(data.series, ratio, seed)
    elif pattern == 'block':
        masked = mask_block_mcar(data.series, ratio, block_lengths, seed)
    else:
        raise ConfigurationError(f"mask pattern must be 'point' or 'block', got {pattern!r}")

    scaled = data.standardizer.transform_series(masked)
    inputs = window_batch(scaled, data.ranges[split], data.window, data.horizon)
    original = data.windows[split]
    batch = WindowBatch(inputs.inputs, inputs.input_mask, original.targets, original.target_mask, original.anchors)
    return batch, data.tokens_for(batch) if data.provider is not None else None


# Training

@dataclass
class TrainResult:
    history: pd.DataFrame
    best_epoch: int
    best_val_mae: float
    stopped_early: bool
    seed_bank: SeedBank = field(repr=False, default=None)


def _loss(model: Forecaster, batch: WindowBatch, tokens: Optional[np.ndarray]):
    out = model(batch.inputs, batch.input_mask, tokens)
    if model.config.variant == 'uncertainty':
        return gaussian_nll(out.mu, out.sigma2, batch.targets, batch.target_mask, reduction='mean')
    return mae_loss(out.mu, batch.targets, batch.target_mask)


def train(model: Forecaster, data: PreparedData, config: TrainConfig) -> TrainResult:
    """
    Fit ``model`` on the training windows

    Raises:
        DataError: If the train or val split has no windows
        NumericalAbort: On a non-finite loss or gradient, with epoch/batch context
    """

    train_windows, val_windows = data.windows['train'], data.windows['val']
    if not len(train_windows) or not len(val_windows):
        raise DataError(f"need train and val windows, got {len(train_windows)} and {len(val_windows)}")

    bank = SeedBank(config.seed)
    shuffle = bank.generator('train.shuffle')
    optimizer = Adam(model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = PlateauScheduler(optimizer, config.plateau_factor, config.plateau_patience)
    stopper = EarlyStopping(config.early_stop_patience)
    train_tokens = data.tokens['train']

    rows = []
    best_state, best_epoch, best_mae = model.state_dict(), 0, math.inf
    stopped = False

    for epoch in range(1, config.epochs + 1):
        model.train()
        lr = optimizer.lr
        order = shuffle.permutation(len(train_windows))
        loss_sum = 0.0

        for batch_index, start in enumerate(range(0, len(order), config.batch)):
            idx = order[start:start + config.batch]
            batch = train_windows.subset(idx)
            tokens = None if train_tokens is None else train_tokens[idx]

            loss = _loss(model, batch, tokens)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalAbort(f"non-finite loss {value} at epoch {epoch}, batch {batch_index}")

            optimizer.zero_grad()
            loss.backward()
            try:
                optimizer.step()
            except OptimizerError as exc:
                raise NumericalAbort(f"epoch {epoch}, batch {batch_index}: {exc}") from exc
            loss_sum += value * len(idx)

        report = evaluate(model, val_windows, data.standardizer, data.tokens['val'], split='val')
        val_mae = report.metrics['mae@avg']
        rows.append({
            'epoch': epoch,
            'train_loss': loss_sum / len(order),
            'val_mae': val_mae,
            'val_rmse': report.metrics['rmse@avg'],
            'val_mape': report.metrics['mape@avg'],
            'lr': lr,
        })
        logger.info("epoch %d: train_loss=%.6f val_mae=%.6f lr=%g", epoch, rows[-1]['train_loss'], val_mae, lr)

        if val_mae < best_mae:
            best_mae, best_epoch, best_state = val_mae, epoch, model.state_dict()

        scheduler.step(val_mae)
        if stopper(val_mae):
            logger.info("early stop after epoch %d (best epoch %d, val_mae=%.6f)", epoch, best_epoch, best_mae)
            stopped = True
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(pd.DataFrame(rows, columns=HISTORY_COLUMNS), best_epoch, best_mae, stopped, bank)


# Evaluation

@dataclass
class EvaluationReport:
    split: str
    windows: int
    metrics: Dict[str, Optional[float]]
    ha_metrics: Dict[str, Optional[float]]
    horizons: pd.DataFrame
    uncertainty: Optional[Dict[str, Optional[float]]] = None
    predictions: Optional[np.ndarray] = field(default=None, repr=False)
    sigma: Optional[np.ndarray] = field(default=None, repr=False)

    def to_document(self) -> dict:
        document = {
            'split': self.split,
            'windows': self.windows,
            'metrics': self.metrics,
            'ha_metrics': self.ha_metrics,
        }
        if self.uncertainty is not None:
            document['uncertainty'] = self.uncertainty
        return document


def evaluate(model: Forecaster, windows: WindowBatch, standardizer: Standardizer,
             tokens: Optional[np.ndarray] = None, split: str = 'test') -> EvaluationReport:
    """
    Metrics on the original scale, with the HA baseline alongside

    Windows are predicted in fixed-size chunks and concatenated in order.

    Raises:
        EvaluationError: If ``windows`` is empty
    """

    if not len(windows):
        raise EvaluationError(f"split {split!r} has no windows to evaluate")

    mu_chunks, sigma2_chunks = [], []
    for start in range(0, len(windows), EVAL_CHUNK):
        stop = start + EVAL_CHUNK
        out = predict(model, windows.inputs[start:stop], windows.input_mask[start:stop],
                      None if tokens is None else tokens[start:stop])
        mu_chunks.append(out.mu.data)
        if out.sigma2 is not None:
            sigma2_chunks.append(out.sigma2.data)

    mu = standardizer.inverse(np.concatenate(mu_chunks))
    targets = standardizer.inverse(windows.targets)
    metrics = forecast_metrics(mu, targets, windows.target_mask)

    raw_inputs = standardizer.inverse(windows.inputs)
    ha = ha_baseline(raw_inputs, windows.input_mask, windows.targets.shape[-1], standardizer.mean)
    ha_metrics = forecast_metrics(ha, targets, windows.target_mask)

    uncertainty, sigma = None, None
    if sigma2_chunks:
        sigma = np.sqrt(standardizer.inverse_variance(np.concatenate(sigma2_chunks)))
        observed = windows.target_mask.astype(bool)
        uncertainty = {
            'mean_sigma': float(sigma[observed].mean()) if observed.any() else None,
            'coverage_95': interval_coverage(mu, sigma, targets, observed),
        }

    return EvaluationReport(split, len(windows), metrics, ha_metrics,
                            horizon_table(mu, targets, windows.target_mask), uncertainty, mu, sigma)


def evaluate_split(model: Forecaster, data: PreparedData, split: str = 'test', pattern: str = None,
                   ratio: float = 0.0, seed: int = 0) -> EvaluationReport:
    if split not in SPLITS:
        raise ConfigurationError(f"split must be one of {SPLITS}, got {split!r}")
    windows, tokens = masked_windows(data, split, pattern, ratio, seed)
    return evaluate(model, windows, data.standardizer, tokens, split)


# Adapter fine-tuning

@dataclass
class FineTuneResult:
    train: TrainResult
    wrapped: List[str]
    adapter_trainable: int
    trainable: int
    total: int
    fingerprint: str

    @property
    def trainable_fraction(self) -> float:
        return self.trainable / self.total


def adapter_finetune(model: Forecaster, data: PreparedData, config: TrainConfig) -> FineTuneResult:
    """
    Wrap the targeted linear layers with LoRA-AMR adapters and train only C
    (plus the heads when configured)

    Raises:
        ConfigurationError: If the rank does not fit a targeted layer
        OptimizerError: If a frozen parameter changed during training
    """

    tune = config.for_adapter()
    wrapped = wrap_adapters(model, tune.adapter, SeedBank(tune.seed))
    before = frozen_fingerprint(model)

    trainable = model.num_parameters(trainable_only=True)
    total = model.num_parameters()
    logger.info("adapter fine-tuning: %d of %d parameters trainable (%.2f%%)", trainable, total,
                100.0 * trainable / total)

    result = train(model, data, tune)
    after = frozen_fingerprint(model)
    if after != before:
        raise OptimizerError("frozen parameters changed during adapter fine-tuning")

    return FineTuneResult(result, wrapped, adapter_trainable_count(model), trainable, total, after)


# Experiments

def ablation_variants() -> List[Tuple[str, Tuple[str, ...]]]:
    return [('full', ())] + [(f"w/o {name}", (name,)) for name in ABLATIONS]


def run_ablations(base: ModelConfig, data: PreparedData, config: TrainConfig) -> pd.DataFrame:
    """
    Train and test the full model and each single-component ablation

    Every variant uses the same seed and data. Returns one row per variant.
    """

    rows = []
    for label, removed in ablation_variants():
        model = build_model(base.without(*removed), seed=config.seed)
        result = train(model, data, config)
        report = evaluate(model, data.windows['test'], data.standardizer, data.tokens['test'])
        row = {'variant': label, 'parameters': model.num_parameters(), 'best_epoch': result.best_epoch}
        row.update(report.metrics)
        rows.append(row)
        logger.info("ablation %s: mae@avg=%s", label, report.metrics['mae@avg'])
    return pd.DataFrame(rows)


def run_missing_sweep(model: Forecaster, data: PreparedData, patterns: Sequence[str] = ('point', 'block'),
                      ratios: Sequence[float] = MISSING_RATIOS, seed: int = 0, split: str = 'test') -> pd.DataFrame:
    """Test metrics of ``model`` and HA under point and block MCAR at each ratio"""

    rows = []
    for pattern in patterns:
        for ratio in ratios:
            report = evaluate_split(model, data, split, pattern, ratio, seed)
            rows.append({
                'pattern': pattern,
                'ratio': ratio,
                'mae@avg': report.metrics['mae@avg'],
                'rmse@avg': report.metrics['rmse@avg'],
                'mape@avg': report.metrics['mape@avg'],
                'ha_mae@avg': report.ha_metrics['mae@avg'],
            })
    return pd.DataFrame(rows, columns=['pattern', 'ratio', 'mae@avg', 'rmse@avg', 'mape@avg', 'ha_mae@avg'])


__all__ = [
    'EarlyStopping', 'EvaluationReport', 'FineTuneResult', 'PlateauScheduler', 'PreparedData', 'TrainConfig',
    'TrainResult', 'adapter_finetune', 'ablation_variants', 'evaluate', 'evaluate_split', 'masked_windows',
    'prepare_data', 'run_ablations', 'run_missing_sweep', 'train',
]
