"""Exception types shared across the package."""


class AdapterLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AdapterLabError):
    """Tensor shapes do not conform for the requested operation."""


class VocabError(AdapterLabError):
    """A token id falls outside the model's vocabulary."""


class SequenceLengthError(AdapterLabError):
    """An input sequence exceeds the configured maximum length."""


class ConfigError(AdapterLabError):
    """Invalid or inconsistent configuration (CLI exit code 1)."""


class ContractError(AdapterLabError):
    """A caller violated an operation's precondition."""


class NumericError(AdapterLabError):
    """Non-finite values where finite ones are required (CLI exit code 2)."""


class MissingArtifactError(AdapterLabError):
    """A required checkpoint or adapter file is absent (CLI exit code 3)."""


class SwapError(AdapterLabError):
    """Replacement adapter weights do not match the stack's slot shapes."""


class EmptyLossError(AdapterLabError):
    """A loss was requested over zero labeled positions."""
