"""Exception hierarchy shared by every module.

Each class carries a short ``code`` used by the CLI when it prints its
machine-readable error line.
"""


class WorkbenchError(Exception):
    code = "error"


class DimensionError(WorkbenchError, ValueError):
    code = "dimension"


class ConfigurationError(WorkbenchError, ValueError):
    code = "configuration"


class NumericError(WorkbenchError, ArithmeticError):
    code = "numeric"


class LabelError(WorkbenchError, ValueError):
    code = "label"


class ContractError(WorkbenchError):
    code = "contract"


class TapeReuseError(ContractError):
    code = "tape-reuse"


class EmptyBatchError(WorkbenchError, ValueError):
    code = "empty-batch"


class FormatError(WorkbenchError, ValueError):
    code = "format"


class ConsistencyError(FormatError):
    code = "consistency"


class LengthError(FormatError):
    code = "length"
