from pathlib import Path

import pandas as pd

from forecasting.management.base import ForecastCommand
from forecasting.services.artifacts import write_csv
from forecasting.services.dataset import save_csv
from forecasting.services.synthetic import GENERATORS, heteroscedastic


class Command(ForecastCommand):
    help = "Write one of the synthetic datasets as a sensor CSV"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('kind', choices=sorted(GENERATORS))
        parser.add_argument('--out', required=True, help='CSV path')
        parser.add_argument('--n-steps', type=int, help='Number of timesteps')

    def run(self, **options):
        kwargs = {'seed': options.get('seed') or 0}
        if options.get('n_steps'):
            kwargs['n_steps'] = options['n_steps']

        out = Path(options['out'])
        if options['kind'] == 'heteroscedastic':
            series, sigma = heteroscedastic(**kwargs)
            # the true noise schedule, for checking predicted sigma
            write_csv(out.with_suffix('.sigma.csv'), pd.DataFrame(sigma.T, columns=list(series.sensors)))
        else:
            series = GENERATORS[options['kind']](**kwargs)

        save_csv(series, out)
        self.success(f"Wrote {series.n_sensors} sensors x {series.n_steps} steps to {out}")
