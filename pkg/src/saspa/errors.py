"""Exception hierarchy shared by every stage."""


class SaspaError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(SaspaError):
    """Input data or configuration violates a documented contract."""


class DescriptorError(ValidationError):
    pass


class ManifestError(SaspaError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PromptError(ValidationError):
    pass


class PlanningError(ValidationError):
    pass


class BackendError(SaspaError):
    """Raised by generation backends. ``retryable`` marks transient model errors."""

    def __init__(self, message, retryable=False):
        super().__init__(message)
        self.retryable = retryable


class ContractError(BackendError):
    """A generation request is inconsistent with its method."""

    def __init__(self, message):
        super().__init__(message, retryable=False)


class FilterError(SaspaError):
    pass


class RegistryError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class StageError(SaspaError):
    """A pipeline stage failed after validation passed."""


class TrainingError(StageError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log or [])
