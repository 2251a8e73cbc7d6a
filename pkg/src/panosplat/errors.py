"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the documented domain of an operation."""


class ParseError(ValueError):
    """A file or wire payload could not be decoded; message names the offending element."""


class PortError(RuntimeError):
    """A model port (HTTP or mock) failed to produce a usable response."""


class ConfigError(ValueError):
    """Pipeline configuration is invalid."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
