"""Exception types shared across the package."""


class H2GNNError(Exception):
    """Base class for package errors."""


class DimensionError(H2GNNError, ValueError):
    """Array shapes or vector lengths do not agree."""


class GeometryError(H2GNNError, ValueError):
    """A point violates the hyperboloid constraints."""


class ParseError(H2GNNError, ValueError):
    """Malformed dataset file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class EmptyGraphError(ParseError):
    """A dataset file contained no facts."""


class ConsistencyError(H2GNNError, ValueError):
    """Cross-file references are out of range."""


class ConfigError(H2GNNError, ValueError):
    """Invalid configuration value."""


class CheckpointError(H2GNNError):
    """Unreadable or incompatible checkpoint file."""
