"""Exception types shared across the package."""


class SpmrError(Exception):
    """Base class for all package-specific errors."""


class InputError(SpmrError):
    """Bad user input: files, schemas, configuration."""


class ParseError(InputError):
    """A file could not be parsed; message carries file and line context."""


class ConfigError(InputError):
    """Missing or inconsistent configuration (paths, run options)."""


class GraphValidationError(InputError):
    """Data violates a structural constraint of the graph model."""


class DegenerateInputError(InputError):
    """Input is structurally valid but unusable (e.g. an all-zero affinity)."""


class ResourceLimitError(SpmrError):
    """A configured budget (memory, enumeration size) would be exceeded."""


class NumericalError(SpmrError):
    """A numerical computation produced non-finite or overflowing values."""
