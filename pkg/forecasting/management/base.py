"""
Shared command plumbing

Service errors become CommandError with a fixed exit code:
1 configuration, 2 data or missing checkpoint, 3 numerical abort,
4 gradient-check failure.
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from ..services.errors import (
    CheckpointError, ConfigurationError, DataError, DomainError, EvaluationError, ForecastingError, GradCheckError,
    NumericalAbort, OptimizerError, ProviderError, ShapeError,
)

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_GRADCHECK = 4

# first match wins, so subclasses come before their bases
EXIT_CODES = (
    (GradCheckError, EXIT_GRADCHECK),
    (NumericalAbort, EXIT_NUMERICAL),
    (OptimizerError, EXIT_NUMERICAL),
    (DomainError, EXIT_NUMERICAL),
    (CheckpointError, EXIT_DATA),
    (DataError, EXIT_DATA),
    (EvaluationError, EXIT_DATA),
    (ProviderError, EXIT_DATA),
    (ConfigurationError, EXIT_CONFIG),
    (ShapeError, EXIT_CONFIG),
)


def exit_code_for(exc: ForecastingError) -> int:
    for error_class, code in EXIT_CODES:
        if isinstance(exc, error_class):
            return code
    return EXIT_CONFIG


class ForecastCommand(BaseCommand):
    """BaseCommand whose ``run`` may raise ForecastingError"""

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=None, help='Override the run seed')

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except ForecastingError as exc:
            raise CommandError(str(exc), returncode=exit_code_for(exc)) from exc

    def run(self, **options):
        raise NotImplementedError

    def success(self, message: str):
        self.stdout.write(self.style.SUCCESS(message))

    def table(self, frame):
        self.stdout.write(frame.to_string(index=False))
