"""Exception types raised across the package."""


class DexpError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DexpError, ValueError):
    """A hyperparameter or option is outside its valid range."""


class ShapeError(DexpError, ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class DomainError(DexpError, ValueError):
    """An input is outside the mathematical domain of an operation,
    e.g. a zero-norm vector passed to the cosine distance."""


class DegenerateInputError(DexpError, ValueError):
    """All usable inputs were discarded or selection sets came up empty."""


class BackendError(DexpError, RuntimeError):
    """An embedding backend failed (unsupported input, protocol fault,
    child-process death)."""


class CapabilityError(DexpError, RuntimeError):
    """The backend does not support the requested operation
    (e.g. layer randomization on a non-layered embedder)."""


class FormatError(DexpError, ValueError):
    """An attribution file is malformed; the message names the byte offset."""
