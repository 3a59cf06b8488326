"""Exception types shared across the package."""


class ParseError(ValueError):
    """A dataset file line failed to parse; message carries the line number."""


class EmptyDatasetError(ValueError):
    """A dataset file contained no interactions."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractViolation(ValueError):
    """An input violates a documented precondition (e.g. negative adjacency entry)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (SVD non-convergence, non-finite values)."""


class SamplingError(RuntimeError):
    """Negative sampling could not produce a valid item for some user."""


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or incompatible with the requested load."""
