"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage/config problems exit 1, data and
model-file problems exit 2, numeric failures exit 3.
"""


class StegalyzeError(Exception):
    exit_code = 1


class ConfigError(StegalyzeError):
    exit_code = 1


class DimensionError(StegalyzeError, ValueError):
    exit_code = 1


class ContractError(StegalyzeError, ValueError):
    exit_code = 1


class DataError(StegalyzeError):
    exit_code = 2


class OutOfVocabularyError(DataError, IndexError):
    pass


class SequenceTooShortError(DataError, ValueError):
    pass


class NumericFailure(StegalyzeError, FloatingPointError):
    exit_code = 3


class ModelFileError(DataError):
    """Base class for everything that can go wrong while loading a model file."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedStreamError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass
