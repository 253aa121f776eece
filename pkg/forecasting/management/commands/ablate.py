from forecasting.management.base import ForecastCommand
from forecasting.registry import record_training
from forecasting.services.artifacts import provenance, write_csv, write_json
from forecasting.services.run_config import load_run_config, load_series
from forecasting.services.text_embed import build_provider
from forecasting.services.trainer import prepare_data, run_ablations


class Command(ForecastCommand):
    help = "Train the full model and each single-component ablation with one seed; writes ablations.csv"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--config', help='JSON run-config file')
        parser.add_argument('--epochs', type=int, help='Override train.epochs')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--no-record', action='store_true')

    def run(self, **options):
        config = load_run_config(options.get('config'), {
            'train.seed': options.get('seed'),
            'train.epochs': options.get('epochs'),
            'output.dir': options.get('out'),
            'output.record': False if options['no_record'] else None,
            'model.ablations': [],
        })
        series, split = load_series(config.dataset, config.seed)
        # the text branch is part of the full model even if later variants drop it
        data = prepare_data(series, split, config.model.window, config.model.horizon,
                            build_provider(config.text_provider))

        table = run_ablations(config.model, data, config.train_config())
        out_dir = config.out_dir()
        write_csv(out_dir / 'ablations.csv', table)
        write_json(out_dir / 'ablations.json', {
            **provenance(config.config_hash()),
            'command': 'ablate',
            'seed': config.seed,
            'rows': table.to_dict(orient='records'),
        })

        self.table(table[['variant', 'parameters', 'mae@avg', 'rmse@avg', 'mape@avg']])
        record_training('ablate', config, out_dir, None, {'rows': table.to_dict(orient='records')},
                        enabled=config.output.record)
        self.success(f"Wrote {len(table)} variants to {out_dir / 'ablations.csv'}")
