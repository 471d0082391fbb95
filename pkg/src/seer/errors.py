"""Exception hierarchy shared by all seer modules.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class SeerError(Exception):
    exit_code = 4


class ConfigError(SeerError, ValueError):
    """Invalid configuration value; ``field`` names the offending setting."""

    exit_code = 2

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class OutOfBoundsError(SeerError, ValueError):
    exit_code = 3


class CapacityError(SeerError, ValueError):
    exit_code = 2


class InfeasibleIntentionError(SeerError, ValueError):
    exit_code = 4


class ShapeError(SeerError, ValueError):
    exit_code = 4


class DataError(SeerError, ValueError):
    exit_code = 3


class FormatError(SeerError, ValueError):
    """Corrupt, truncated or mismatched binary file."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(SeerError, RuntimeError):
    exit_code = 4

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class ProtocolError(SeerError, ValueError):
    """Wire message that violates the telemetry schema."""

    exit_code = 3

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ContractError(SeerError, ValueError):
    exit_code = 4
