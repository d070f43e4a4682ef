"""Exception types shared across the package."""


class LifecycleError(RuntimeError):
    """An object was used in the wrong phase (stepping a finished episode, sampling an empty buffer)."""


class ConstraintError(ValueError):
    """A few-shot episode budget would be exceeded."""


class CapacityError(ValueError):
    """A tabular method was asked to enumerate too many states."""


class ConfigError(ValueError):
    """Invalid experiment configuration. ``field`` names the offending key when known."""

    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if field is not None:
            where.append(field)
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaError(ValueError):
    """A metrics CSV does not match the expected header or row layout."""
