import contextlib

from django.conf import settings
from django.core.management.base import CommandError

from forecasting.management.base import EXIT_GRADCHECK, ForecastCommand
from forecasting.services.gradcheck import SCOPES, failures, inject_fault, run_suite


class Command(ForecastCommand):
    help = "Finite-difference gradient check of every registered op, layer and the composed model"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--scope', choices=SCOPES, default='model',
                            help="op: ops only; layer: ops and layers; model: everything")
        parser.add_argument('--probe', nargs='*', help='Run only these probes')
        parser.add_argument('--seeds', type=int, default=None,
                            help='Seeds per probe, starting at --seed (default: GRADCHECK_SEEDS setting)')
        parser.add_argument('--inject-fault', metavar='OP', help='Test hook: corrupt the backward pass of OP')

    def run(self, **options):
        seeds = options.get('seeds') or settings.FORECASTING['GRADCHECK_SEEDS']
        fault = inject_fault(options['inject_fault']) if options.get('inject_fault') else contextlib.nullcontext()
        with fault:
            results = run_suite(options['scope'], settings.FORECASTING['GRADCHECK_TOLERANCES'],
                                seed=options.get('seed') or 0, names=options.get('probe'), seeds=seeds)

        self.stdout.write(f"{'probe':<26} {'scope':<6} {'max rel err':>12} {'tolerance':>10} {'seeds':>5}  status")
        for r in results:
            error = 'error' if r.max_rel_error is None else f"{r.max_rel_error:.3e}"
            status = 'ok' if r.passed else f"FAIL seed {r.seed} {r.error}".rstrip()
            self.stdout.write(f"{r.name:<26} {r.scope:<6} {error:>12} {r.tolerance:>10.0e} "
                              f"{r.seeds_run:>5}  {status}")

        failed = failures(results)
        if failed:
            raise CommandError(f"gradient check failed for: {', '.join(failed)}", returncode=EXIT_GRADCHECK)
        self.success(f"All {len(results)} gradient probes passed")
