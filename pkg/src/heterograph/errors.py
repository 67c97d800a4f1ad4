"""Exception types shared across the toolkit."""


class HeterographError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(HeterographError, ValueError):
    """Operands have incompatible shapes."""


class ContractError(HeterographError, ValueError):
    """An operation was called outside its contract (bad index, wrong mode, ...)."""


class IngestionError(HeterographError, ValueError):
    """A CSV input violates the expected schema."""


class LabelingError(HeterographError, ValueError):
    """Catchment labeling could not produce any labels."""


class ConfigError(HeterographError, ValueError):
    """A configuration value is invalid."""


class TrainingError(HeterographError, RuntimeError):
    """Training aborted (e.g. the loss became non-finite)."""


class AblationError(HeterographError, ValueError):
    """An ablation scenario produced an unusable graph."""


class SearchError(HeterographError, ValueError):
    """Counterfactual search has no candidates."""


class DiversityError(HeterographError, ValueError):
    """Shannon diversity is undefined for the given prediction row."""
