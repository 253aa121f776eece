from pathlib import Path

from forecasting.management.base import ForecastCommand
from forecasting.services.artifacts import provenance, write_csv, write_json
from forecasting.services.run_config import restore_run
from forecasting.services.trainer import MISSING_RATIOS, SPLITS, run_missing_sweep


class Command(ForecastCommand):
    help = "Evaluate a checkpoint under point and block MCAR missingness at several ratios"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--split', choices=SPLITS, default='test')
        parser.add_argument('--patterns', nargs='+', choices=('point', 'block'), default=['point', 'block'])
        parser.add_argument('--ratios', nargs='+', type=float, default=list(MISSING_RATIOS))
        parser.add_argument('--out', help='Output directory (defaults to the checkpoint directory)')

    def run(self, **options):
        checkpoint = Path(options['checkpoint'])
        model, config, data, _ = restore_run(checkpoint)
        seed = config.seed if options.get('seed') is None else options['seed']

        table = run_missing_sweep(model, data, options['patterns'], options['ratios'], seed, options['split'])
        out_dir = Path(options.get('out') or checkpoint.parent)
        write_csv(out_dir / 'mask_sweep.csv', table)
        write_json(out_dir / 'mask_sweep.json', {
            **provenance(config.config_hash()),
            'checkpoint': str(checkpoint),
            'split': options['split'],
            'seed': seed,
            'rows': table.to_dict(orient='records'),
        })

        self.table(table)
        self.success(f"Wrote {len(table)} rows to {out_dir / 'mask_sweep.csv'}")
