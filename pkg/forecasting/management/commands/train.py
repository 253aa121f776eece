import logging
from pathlib import Path

from django.conf import settings

from forecasting.management.base import ForecastCommand
from forecasting.registry import record_training
from forecasting.services.artifacts import (
    SUMMARY_FILE, provenance, write_history, write_horizon_metrics, write_json,
)
from forecasting.services.checkpoint import save_checkpoint
from forecasting.services.metrics import aggregate_runs
from forecasting.services.model import ABLATIONS, VARIANTS, build_model
from forecasting.services.run_config import load_run_config, load_series, provider_for
from forecasting.services.trainer import evaluate, prepare_data, train

logger = logging.getLogger(__name__)


def train_overrides(options) -> dict:
    """Flag values as dotted run-config overrides"""
    ablations = options.get('ablate')
    return {
        'train.seed': options.get('seed'),
        'train.runs': options.get('runs'),
        'train.epochs': options.get('epochs'),
        'model.variant': options.get('variant'),
        'model.ablations': list(ablations) if ablations is not None else None,
        'output.dir': options.get('out'),
        'output.record': False if options.get('no_record') else None,
    }


class Command(ForecastCommand):
    help = "Train the forecaster and write checkpoint, history.csv and summary.json"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--config', help='JSON run-config file')
        parser.add_argument('--variant', help=f"One of {', '.join(VARIANTS)}")
        parser.add_argument('--ablate', nargs='*', metavar='NAME', help=f"Components to remove: {', '.join(ABLATIONS)}")
        parser.add_argument('--runs', type=int, help='Independent runs (seeds seed, seed+1, ...)')
        parser.add_argument('--epochs', type=int, help='Override train.epochs')
        parser.add_argument('--out', help='Output directory (overrides STPROPH_OUT_DIR)')
        parser.add_argument('--no-record', action='store_true', help='Skip the run registry')

    def run(self, **options):
        config = load_run_config(options.get('config'), train_overrides(options))
        out_dir = config.out_dir()
        series, split = load_series(config.dataset, config.seed)
        data = prepare_data(series, split, config.model.window, config.model.horizon, provider_for(config))

        records, first = [], None
        for k in range(config.runs):
            seed = config.seed + k
            run_dir = out_dir if k == 0 else out_dir / f"run-{k}"
            tcfg = config.train_config()
            tcfg.seed = seed

            model = build_model(config.model, seed=seed)
            result = train(model, data, tcfg)
            report = evaluate(model, data.windows['test'], data.standardizer, data.tokens['test'])

            save_checkpoint(
                Path(run_dir) / settings.FORECASTING['CHECKPOINT_NAME'], model, data.standardizer,
                run_config=config.to_dict(), seed_bank=result.seed_bank,
                extra={'seed': seed, 'best_epoch': result.best_epoch},
            )
            write_history(run_dir, result.history)
            write_horizon_metrics(run_dir, report.horizons)
            records.append(report.metrics)
            if first is None:
                first = (model, result, report)
            self.stdout.write(f"run {k} (seed {seed}): best epoch {result.best_epoch}, "
                              f"test mae@avg {report.metrics['mae@avg']:.4f} (HA {report.ha_metrics['mae@avg']:.4f})")

        model, result, report = first
        summary = {
            **provenance(config.config_hash()),
            'command': 'train',
            'config': config.to_dict(),
            'seed': config.seed,
            'runs': config.runs,
            'best_epoch': result.best_epoch,
            'stopped_early': result.stopped_early,
            'parameters': model.parameter_report(),
            'model': model.summary(),
            'test': report.to_document(),
        }
        if config.runs > 1:
            summary['aggregate'] = aggregate_runs(records)
        write_json(out_dir / SUMMARY_FILE, summary)

        record_training('train', config, out_dir, result.best_epoch,
                        summary.get('aggregate', report.metrics), enabled=config.output.record)
        self.success(f"Trained {config.runs} run(s); outputs in {out_dir}")
