"""Exception types raised across the audit engine."""


class AuditError(Exception):
    """Base class for every error the engine raises on purpose."""


class InputError(AuditError):
    """A referenced file is missing or unreadable."""


class ConfigError(AuditError):
    """A configuration file is malformed or inconsistent."""


class SchemaError(AuditError):
    """Columns, labels or attributes do not match the declared schema."""


class ParseError(AuditError):
    """A cell value could not be parsed."""


class IntegrityError(AuditError):
    """Record-level invariants are violated (duplicates, no-finding rule...)."""


class HarmonizationError(AuditError):
    pass


class EmptyInputError(AuditError):
    pass


class ContractError(AuditError):
    """Caller broke a precondition (length mismatch, misaligned scores...)."""


class UndefinedMetricError(AuditError):
    """The metric has no value for this input, e.g. AUC on a single class."""
