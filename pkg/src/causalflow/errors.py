"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config/schema/contract problems are
exit 2, I/O problems exit 3 (plain OSError), numeric failures exit 4.
"""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ContractError):
    """Operands have incompatible shapes; message names the operation."""


class ConfigError(ValueError):
    """A config file or config value is malformed."""


class SchemaError(ConfigError):
    """A data file does not match the expected column schema."""


class NumericError(RuntimeError):
    """A computation produced non-finite values or failed to converge."""


class GenerationError(NumericError):
    """Synthetic data generation produced a non-finite value."""


class IntegrationError(NumericError):
    """ODE integration produced a non-finite state or log-density."""


class TrainingError(NumericError):
    """Training aborted; message names the failing iteration."""


class FitError(ContractError):
    """A model fit is impossible on the given data (e.g. single-arm)."""
