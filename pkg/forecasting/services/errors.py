"""
Exception hierarchy for the forecasting services

Every error carries a short ``code`` so command output and logs can be matched
against docs/formats.md, the same way upload errors were tagged (E001, E002...).
"""


class ForecastingError(Exception):
    """Base class for all forecasting errors"""

    code = 'F000'

    def __init__(self, message: str, code: str = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self):
        return f"{super().__str__()} ({self.code})"


class ShapeError(ForecastingError, ValueError):
    code = 'F001'


class ConfigurationError(ForecastingError, ValueError):
    code = 'F002'


class DataError(ForecastingError, ValueError):
    code = 'F003'


class CsvParseError(DataError):
    code = 'F004'

    def __init__(self, message: str, line: int = None, code: str = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, code)
        self.line = line


class FixtureError(DataError):
    code = 'F010'


class FixtureMissingError(FixtureError):
    code = 'F011'


class FixtureFormatError(FixtureError):
    code = 'F012'


class FixtureShapeError(FixtureError):
    code = 'F013'


class ProviderError(ForecastingError):
    code = 'F020'


class ProviderTimeoutError(ProviderError):
    code = 'F021'


class ProviderStatusError(ProviderError):
    code = 'F022'


class ProviderPayloadError(ProviderError):
    code = 'F023'


class GradCheckError(ForecastingError, ArithmeticError):
    code = 'F030'


class OptimizerError(ForecastingError, ArithmeticError):
    code = 'F031'


class DomainError(ForecastingError, ValueError):
    code = 'F032'


class NumericalAbort(ForecastingError, ArithmeticError):
    code = 'F033'


class EvaluationError(ForecastingError):
    code = 'F040'


class CheckpointError(ForecastingError):
    code = 'F041'
