"""Shared exception types.

StructuralError: shapes or layouts of inputs do not line up.
ContractError:   a caller violated an operation's precondition.
InputError:      a value is outside its documented domain.
ConfigError:     a configuration is internally inconsistent.
IntegrityError:  persisted data failed a corruption check.
"""


class StructuralError(ValueError):
    pass


class ContractError(ValueError):
    pass


class InputError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class IntegrityError(RuntimeError):
    pass
