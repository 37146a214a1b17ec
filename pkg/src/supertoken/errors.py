"""Exception hierarchy shared by the library and the command line."""


class SupertokenError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InvalidInputError(SupertokenError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = 2


class InvalidStateError(SupertokenError, RuntimeError):
    """An intermediate structure is internally inconsistent."""

    exit_code = 3


class DegenerateInputError(SupertokenError, ValueError):
    """The input is well-formed but numerically degenerate (0/0, empty support)."""

    exit_code = 3


class ConfigError(SupertokenError, ValueError):
    """A pipeline configuration value is missing, malformed or inconsistent."""

    exit_code = 2

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


class ParseError(SupertokenError, ValueError):
    """A binary file could not be decoded."""

    exit_code = 2

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(SupertokenError, ValueError):
    """A parameter checkpoint does not match the requested model shape."""

    exit_code = 2


class TrainingDivergedError(SupertokenError, ArithmeticError):
    """The training loss became non-finite."""

    exit_code = 4
