"""Exception hierarchy shared by all stages.

Each class carries the CLI exit code it maps to.
"""


class LangDiarError(Exception):
    exit_code = 2


class ConfigError(LangDiarError, ValueError):
    exit_code = 1


class DataError(LangDiarError, ValueError):
    exit_code = 2


class InvalidSegmentError(DataError):
    pass


class CoverageError(DataError):
    pass


class LabelSpaceError(DataError):
    pass


class TilingError(DataError):
    pass


class EmptySupportError(DataError):
    pass


class MissingLanguageError(DataError):
    pass


class InsufficientSourceError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class ContractViolationError(DataError):
    """A caller handed a component input outside its documented contract."""


class TranscriptionError(LangDiarError):
    exit_code = 3
