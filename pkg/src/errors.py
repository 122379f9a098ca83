"""Exception hierarchy shared by every module"""


class RewardDenoiseError(Exception):
    """Base class for all errors raised by this package"""


class ConfigurationError(RewardDenoiseError):
    """Inconsistent parameters: dimension mismatch, wrong noise variant, bad ranges"""


class SchemaError(ConfigurationError):
    """Experiment configuration failed validation

    Args:
        problems: list of (dotted field path, message) pairs
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        lines = [f"{path}: {message}" for path, message in problems]
        super().__init__("invalid configuration\n  " + "\n  ".join(lines))

    def __reduce__(self):
        return type(self), (self.problems,)


class UsageError(RewardDenoiseError):
    """API called with an invalid argument (e.g. an action index out of range)"""


class TrainingDivergenceError(RewardDenoiseError):
    """A critic produced a non-finite loss"""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        self.message = message
        super().__init__(f"{message} (diagnostics: {self.diagnostics})")

    def __reduce__(self):
        return type(self), (self.message, self.diagnostics)


class InversionError(RewardDenoiseError):
    """Confusion matrix is singular or too ill-conditioned to invert"""


class EmptyStreamError(RewardDenoiseError):
    """Quantile requested from a sketch that has seen no values"""
