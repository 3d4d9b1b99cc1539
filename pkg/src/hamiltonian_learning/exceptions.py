"""Exception hierarchy for the Hamiltonian-learning toolkit."""

from typing import Any, Optional, Sequence


class HamiltonianLearningError(Exception):
    """Base class for every error raised by this package."""


class QubitCapError(HamiltonianLearningError, ValueError):
    """Raised when a system exceeds the configured dense-simulation qubit cap."""

    def __init__(self, n: int, cap: int) -> None:
        super().__init__(f"{n} qubits exceeds the dense simulation cap of {cap}")
        self.n = n
        self.cap = cap


class BasisIndexError(HamiltonianLearningError, IndexError):
    """Raised when a computational basis index is outside [0, 2**n)."""


class DimensionMismatchError(HamiltonianLearningError, ValueError):
    """Raised when operands act on different numbers of qubits."""


class NotNormalizedError(HamiltonianLearningError, ValueError):
    """Raised when a state vector is not normalized within tolerance."""


class EvolutionError(HamiltonianLearningError, ArithmeticError):
    """Raised when the Hamiltonian cannot be diagonalized."""


class NoiseParameterError(HamiltonianLearningError, ValueError):
    """Raised for readout or depolarization parameters out of range."""


class DatasetError(HamiltonianLearningError, ValueError):
    """Raised for invalid datasets or query grids."""


class DatasetFormatError(DatasetError):
    """Raised when a dataset file contains a malformed record."""

    def __init__(self, line_number: int, message: str) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DatasetVersionError(DatasetError):
    """Raised when a dataset file carries an unsupported version tag."""


class ShapeMismatchError(HamiltonianLearningError, ValueError):
    """Raised when gradient and parameter shapes disagree."""


class NonScalarLossError(HamiltonianLearningError, ValueError):
    """Raised when a gradient is requested for a non-scalar loss."""


class NonFiniteLossError(HamiltonianLearningError, ArithmeticError):
    """Raised when a loss component becomes NaN or infinite during training."""

    def __init__(self, component: str, epoch: int, value: float) -> None:
        super().__init__(
            f"non-finite {component} loss ({value}) at epoch {epoch}"
        )
        self.component = component
        self.epoch = epoch
        self.value = value


class ReconstructionError(HamiltonianLearningError, RuntimeError):
    """Raised when tomography-style state reconstruction cannot proceed."""


class UnroutedEntryError(HamiltonianLearningError, KeyError):
    """Raised when a dataset entry has no matching ensemble member."""


class SpecError(HamiltonianLearningError, ValueError):
    """Raised when scenario parameters violate their invariants."""


class ConfigError(HamiltonianLearningError, ValueError):
    """Raised for invalid run configuration fields."""

    def __init__(
        self, field: str, message: str, accepted: Optional[Sequence[Any]] = None
    ) -> None:
        text = f"{field}: {message}"
        if accepted is not None:
            text += f" (accepted: {', '.join(str(a) for a in accepted)})"
        super().__init__(text)
        self.field = field
        self.accepted = list(accepted) if accepted is not None else None


class StudyAborted(HamiltonianLearningError, RuntimeError):
    """Raised when a sweep stops early; carries whatever finished."""

    def __init__(self, message: str, partial: Any = None) -> None:
        super().__init__(message)
        self.partial = partial


class CheckpointError(HamiltonianLearningError, ValueError):
    """Raised when a checkpoint is missing fields or has another version."""
