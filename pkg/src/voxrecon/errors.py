"""Error types shared by the pipeline, service, and CLI."""


class ReconError(Exception):
    """Base class for reconstruction failures."""


class ConfigError(ReconError):
    """Invalid or inconsistent configuration; maps to exit code 2."""


class NumericError(ReconError):
    """Non-finite values during optimization; maps to exit code 3."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
