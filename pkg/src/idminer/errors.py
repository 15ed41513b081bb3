"""Exception hierarchy shared by every module."""


class IdMinerError(Exception):
    """Base class for all package errors."""


class ShapeError(IdMinerError, ValueError):
    pass


class DomainError(IdMinerError, ValueError):
    pass


class FormatError(IdMinerError, ValueError):
    pass


class EmptyInputError(FormatError):
    pass


class IntegrityError(IdMinerError, ValueError):
    pass


class VersionError(IntegrityError):
    pass


class ConfigError(IdMinerError, ValueError):
    pass


class UsageError(IdMinerError, RuntimeError):
    pass


class CapacityError(IdMinerError, ValueError):
    pass


class ProtocolError(IdMinerError, ValueError):
    pass


class CapabilityError(IdMinerError, RuntimeError):
    pass


class NonFiniteError(IdMinerError, FloatingPointError):
    pass


class TrainingAborted(NonFiniteError):
    def __init__(self, message, step, checkpoint_path=None):
        super().__init__(message)
        self.step = step
        self.checkpoint_path = checkpoint_path
