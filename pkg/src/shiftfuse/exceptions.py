"""Exception hierarchy shared by all shiftfuse modules."""


class ShiftFuseError(Exception):
    """Base class for every error raised by shiftfuse."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class SchemaError(ShiftFuseError):
    kind = "schema"


class IntegrityError(ShiftFuseError):
    kind = "integrity"


class ParseError(ShiftFuseError):
    kind = "parse"


class SizeError(ShiftFuseError):
    kind = "size"


class DimensionError(ShiftFuseError):
    kind = "dimension"


class UsageError(ShiftFuseError):
    kind = "usage"


class SeparationError(ShiftFuseError):
    kind = "separation"


class SingularityError(ShiftFuseError):
    kind = "singularity"


class DomainError(ShiftFuseError):
    kind = "domain"


class UnsupportedError(ShiftFuseError):
    kind = "unsupported"


class ConfigError(ShiftFuseError):
    kind = "config"
