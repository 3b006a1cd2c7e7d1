"""Exception types shared across the package."""


class QpaError(Exception):
    """Base class for package errors."""


class ContractError(QpaError):
    """A caller violated an API precondition."""


class ExtractionError(QpaError):
    """Image cannot be featurized (degenerate geometry)."""


class InitError(QpaError):
    """Graph store initialization failed."""


class TrainingError(QpaError):
    """Classifier training corpus or setup is invalid."""
