"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments breaking its stated contract."""


class ConfigError(ValueError):
    """A configuration combination is invalid (divisibility, ranges, ...)."""


class DegenerateParameterError(ValueError):
    """All angle weights are non-positive; the parametrization has no gradient."""


class InputError(ValueError):
    """Malformed external input (raster, manifest, ...)."""


class ProtocolError(ValueError):
    """The evaluation protocol cannot be run on the given samples."""


class CheckpointVersionError(ValueError):
    """Checkpoint magic/version does not match this reader."""


class GradcheckError(RuntimeError):
    """The gradient checker hit a non-finite loss."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss during training; carries a diagnostic payload."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
