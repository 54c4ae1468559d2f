"""Error types shared across the engine. Each carries a stable machine-readable code."""


class EngineError(Exception):
    """Base class for all engine errors."""

    code = "engine-error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidMetadataError(EngineError):
    code = "invalid-metadata"


class SchemaViolationError(EngineError):
    code = "schema-violation"


class MissingInputError(EngineError):
    code = "missing-file"


class TileStoreMismatchError(EngineError):
    code = "tile-mismatch"


class OutOfBoundsError(EngineError):
    code = "out-of-range"


class ContractError(EngineError):
    code = "contract-violation"


class UnsupportedOperationError(EngineError):
    code = "unsupported"


class MissingScoreError(EngineError):
    code = "missing-score"


class ActionValidationError(EngineError):
    code = "invalid-action"


class LogCorruptionError(EngineError):
    code = "log-corruption"


class KeyMismatchError(EngineError):
    code = "key-mismatch"


class UnknownResourceError(EngineError):
    code = "not-found"
