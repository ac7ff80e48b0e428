"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code (see `multigran.cli`).
"""


class MultigranError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MultigranError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(ContractError):
    """An input is outside the mathematical domain of the operation."""


class ConfigurationError(MultigranError):
    """A configuration value or combination of values is invalid."""


class IntegrityError(MultigranError):
    """An artifact does not match its recorded fingerprint or hash."""


class DriftError(IntegrityError):
    """The effective configuration differs from the manifest snapshot."""


class SamplingError(MultigranError):
    """Negative sampling cannot proceed (e.g. empty eligible set)."""


class CorpusError(MultigranError):
    """A corpus is empty or structurally unusable."""


class ParseError(CorpusError):
    """A corpus file is malformed; message names the offending line."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class StageOrderError(MultigranError):
    """A pipeline stage ran before its prerequisites; names the missing artifact."""


class DivergenceError(MultigranError):
    """Training produced a non-finite loss; message names the batch."""
