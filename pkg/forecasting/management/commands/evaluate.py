from pathlib import Path

from forecasting.management.base import ForecastCommand
from forecasting.registry import record_evaluation
from forecasting.services.artifacts import provenance, write_horizon_metrics, write_json
from forecasting.services.dataset import DEFAULT_BLOCK_LENGTHS
from forecasting.services.errors import ConfigurationError
from forecasting.services.run_config import restore_run
from forecasting.services.trainer import SPLITS, evaluate, masked_windows


def eval_name(split: str, pattern: str, ratio: float) -> str:
    return f"eval_{split}" + (f"_{pattern}_{ratio:g}" if pattern and ratio else '')


class Command(ForecastCommand):
    help = "Evaluate a checkpoint on one split, optionally with MCAR-masked inputs"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--split', choices=SPLITS, default='test')
        parser.add_argument('--mask', choices=('point', 'block'), help='Missing-data pattern for the inputs')
        parser.add_argument('--ratio', type=float, default=0.0, help='Share of observed values to hide')
        parser.add_argument('--block-min', type=int, default=DEFAULT_BLOCK_LENGTHS[0])
        parser.add_argument('--block-max', type=int, default=DEFAULT_BLOCK_LENGTHS[1])
        parser.add_argument('--out', help='Directory for the metrics document (defaults to the checkpoint directory)')
        parser.add_argument('--no-record', action='store_true')

    def run(self, **options):
        if options['ratio'] and not options.get('mask'):
            raise ConfigurationError("--ratio needs --mask point|block")

        checkpoint = Path(options['checkpoint'])
        model, config, data, meta = restore_run(checkpoint)
        seed = config.seed if options.get('seed') is None else options['seed']
        split, pattern, ratio = options['split'], options.get('mask'), options['ratio']

        windows, tokens = masked_windows(data, split, pattern, ratio, seed,
                                         (options['block_min'], options['block_max']))
        report = evaluate(model, windows, data.standardizer, tokens, split)

        out_dir = Path(options.get('out') or checkpoint.parent)
        name = eval_name(split, pattern, ratio)
        document = {
            **provenance(config.config_hash()),
            'checkpoint': str(checkpoint),
            'mask': pattern,
            'ratio': ratio,
            'seed': seed,
            **report.to_document(),
        }
        write_json(out_dir / f"{name}.json", document)
        write_horizon_metrics(out_dir, report.horizons, f"{name}_horizons.csv")

        for key in sorted(report.metrics):
            value = report.metrics[key]
            self.stdout.write(f"{key:>10} {'n/a' if value is None else f'{value:.6f}'}")
        record_evaluation(checkpoint, split, report.metrics, pattern or '', ratio, seed, config.config_hash(),
                          enabled=config.output.record and not options['no_record'])
        self.success(f"Evaluated {report.windows} {split} windows")
