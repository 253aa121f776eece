"""
Forecasting services: autodiff core, model components, data pipeline and training
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import SeriesMatrix, SplitSpec, Standardizer, load_csv, window_batch
from .lora_amr import AdapterConfig, memory_report, wrap_adapters
from .metrics import forecast_metrics, ha_baseline
from .model import Forecaster, ModelConfig, build_model, predict
from .trainer import TrainConfig, adapter_finetune, evaluate, prepare_data, run_ablations, run_missing_sweep, train

__all__ = [
    'AdapterConfig',
    'Forecaster',
    'ModelConfig',
    'SeriesMatrix',
    'SplitSpec',
    'Standardizer',
    'TrainConfig',
    'adapter_finetune',
    'build_model',
    'evaluate',
    'forecast_metrics',
    'ha_baseline',
    'load_checkpoint',
    'load_csv',
    'memory_report',
    'predict',
    'prepare_data',
    'run_ablations',
    'run_missing_sweep',
    'save_checkpoint',
    'train',
    'window_batch',
    'wrap_adapters',
]
