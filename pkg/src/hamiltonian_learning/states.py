"""State vectors, product unitaries and exact time evolution."""

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .exceptions import (
    BasisIndexError,
    DimensionMismatchError,
    EvolutionError,
    NotNormalizedError,
    SpecError,
)
from .pauli import DEFAULT_QUBIT_CAP, HamiltonianModel, build_dense

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-10

_SQRT_HALF = 1 / np.sqrt(2)
_S = np.diag([1, 1j])
_SDG = np.diag([1, -1j])
_H = _SQRT_HALF * np.array([[1, 1], [1, -1]], dtype=np.complex128)

GATES: Dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.diag([1, -1]).astype(np.complex128),
    "H": _H,
    "S": _S.astype(np.complex128),
    "SDG": _SDG.astype(np.complex128),
    # |0> -> |+i>
    "SH": (_S @ _H).astype(np.complex128),
    # maps the Y eigenbasis onto the computational basis
    "HSDG": (_H @ _SDG).astype(np.complex128),
}
for _gate in GATES.values():
    _gate.setflags(write=False)

# Single-qubit preparations U|0> and measurement rotations M by label.
PREPARATIONS: Dict[str, str] = {"0": "I", "1": "X", "+": "H", "+i": "SH"}
MEASUREMENTS: Dict[str, str] = {"Z": "I", "X": "H", "Y": "HSDG"}


def _check_unitary(matrix: np.ndarray, where: str) -> None:
    if matrix.shape != (2, 2):
        raise SpecError(f"{where}: single-qubit factor must be 2x2, got {matrix.shape}")
    if not np.allclose(matrix.conj().T @ matrix, np.eye(2), atol=NORM_TOLERANCE):
        raise SpecError(f"{where}: factor is not unitary")


@dataclass(frozen=True, eq=False)
class StateVector:
    """
    Pure n-qubit state as ``2**n`` complex amplitudes.

    Amplitude ``k`` belongs to the basis state whose bit-string is ``k``
    written with ``n`` digits, qubit 0 leftmost.
    """

    n: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.size != 1 << self.n:
            raise DimensionMismatchError(
                f"{amps.size} amplitudes for {self.n} qubits"
            )
        norm = np.linalg.norm(amps)
        if not np.isfinite(norm) or abs(norm - 1.0) > NORM_TOLERANCE:
            raise NotNormalizedError(f"state norm {norm} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "StateVector":
        dim = 1 << n
        if not 0 <= index < dim:
            raise BasisIndexError(f"basis index {index} outside [0, {dim})")
        amps = np.zeros(dim, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps)

    @classmethod
    def from_bitstring(cls, bits: str) -> "StateVector":
        return cls.basis(len(bits), int(bits, 2))

    @classmethod
    def normalized(cls, amplitudes: Sequence[complex]) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0 or not np.isfinite(norm):
            raise NotNormalizedError("cannot normalize a zero or non-finite vector")
        return cls(int(round(np.log2(amps.size))), amps / norm)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def overlap(self, other: "StateVector") -> complex:
        """Inner product ``<self|other>``."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: "StateVector") -> float:
        return abs(self.overlap(other)) ** 2


@dataclass(frozen=True, eq=False)
class LocalUnitary:
    """
    Tensor product of single-qubit unitaries, qubit 0 first.

    Named gates keep their label so datasets can be grouped and serialized
    exactly; explicit matrices have ``None`` labels.
    """

    factors: Tuple[np.ndarray, ...]
    labels: Tuple[Optional[str], ...] = ()

    def __post_init__(self) -> None:
        factors = tuple(np.array(f, dtype=np.complex128) for f in self.factors)
        for i, factor in enumerate(factors):
            _check_unitary(factor, f"qubit {i}")
            factor.setflags(write=False)
        labels = tuple(self.labels) if self.labels else (None,) * len(factors)
        if len(labels) != len(factors):
            raise SpecError("one label (or None) required per factor")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "LocalUnitary":
        """
        Build from gate names in ``GATES``.

        Example:
            >>> LocalUnitary.from_labels(["H", "I"]).n
            2
        """
        missing = [name for name in labels if name not in GATES]
        if missing:
            raise SpecError(f"unknown gates {missing}; known: {sorted(GATES)}")
        return cls(tuple(GATES[name] for name in labels), tuple(labels))

    @classmethod
    def identity(cls, n: int) -> "LocalUnitary":
        return cls.from_labels(["I"] * n)

    @classmethod
    def preparation(cls, states: Sequence[str]) -> "LocalUnitary":
        """Product preparation from per-qubit labels ``0, 1, +, +i``."""
        return cls.from_labels([PREPARATIONS[s] for s in states])

    @classmethod
    def measurement(cls, bases: Sequence[str]) -> "LocalUnitary":
        """Product measurement rotation from per-qubit bases ``Z, X, Y``."""
        return cls.from_labels([MEASUREMENTS[b] for b in bases])

    @property
    def n(self) -> int:
        return len(self.factors)

    @property
    def key(self) -> Tuple:
        """Exact identity used for grouping queries."""
        return tuple(
            label if label is not None else factor.tobytes()
            for label, factor in zip(self.labels, self.factors)
        )

    @property
    def is_identity(self) -> bool:
        return all(np.array_equal(f, GATES["I"]) for f in self.factors)

    def stacked(self) -> np.ndarray:
        """Factors as an ``(n, 2, 2)`` array."""
        return np.stack(self.factors)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LocalUnitary) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)


class SpectralCache:
    """
    Process-wide cache of Hamiltonian eigendecompositions.

    Singleton with double-checked locking. Entries are keyed by the model
    structure plus the exact bytes of its parameter vector and evicted least
    recently used first once ``max_entries`` is exceeded; lookups and inserts
    are serialized under one lock, the eigensolver runs outside it.
    """

    _instance: Optional["SpectralCache"] = None
    _lock: threading.Lock = threading.Lock()

    def __new__(cls, *args, **kwargs) -> "SpectralCache":
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def __init__(self, max_entries: int = 256) -> None:
        if self._initialized:
            return
        self.max_entries = max_entries
        self._entries: "OrderedDict[Tuple, Tuple[np.ndarray, np.ndarray]]" = OrderedDict()
        self._write_lock = threading.Lock()
        self.misses = 0
        self._initialized = True

    def decompose(
        self, h: HamiltonianModel, cap: int = DEFAULT_QUBIT_CAP
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Eigenvalues and eigenvectors of the dense Hamiltonian.

        Raises:
            EvolutionError: If the matrix has non-finite entries or the solver fails.
        """
        key = (h.structure_key(), h.theta.tobytes())
        with self._write_lock:
            cached = self._entries.get(key)
            if cached is not None:
                self._entries.move_to_end(key)
                return cached
        if not np.all(np.isfinite(h.theta)):
            raise EvolutionError(f"non-finite parameters {h.theta.tolist()}")
        dense = build_dense(h, cap)
        if not np.all(np.isfinite(dense)):
            raise EvolutionError("Hamiltonian has non-finite entries")
        try:
            energies, vectors = scipy.linalg.eigh(dense)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EvolutionError(f"eigendecomposition failed: {exc}") from exc
        energies.setflags(write=False)
        vectors.setflags(write=False)
        with self._write_lock:
            self.misses += 1
            self._entries[key] = (energies, vectors)
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)
        return energies, vectors

    def clear(self) -> None:
        with self._write_lock:
            self._entries.clear()


def _check_dims(h: HamiltonianModel, psi: StateVector) -> None:
    if h.n != psi.n:
        raise DimensionMismatchError(
            f"Hamiltonian acts on {h.n} qubits, state has {psi.n}"
        )


def evolve_amplitudes(
    h: HamiltonianModel, psi0: StateVector, times: Sequence[float]
) -> np.ndarray:
    """
    Evolved amplitudes for many times at once.

    Returns:
        Array of shape ``(len(times), 2**n)`` holding ``exp(-iHt)|psi0>``.
    """
    _check_dims(h, psi0)
    energies, vectors = SpectralCache().decompose(h)
    coords = vectors.conj().T @ psi0.amplitudes
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    phases = np.exp(-1j * np.outer(times, energies))
    return (phases * coords) @ vectors.T


def evolve(h: HamiltonianModel, psi0: StateVector, t: float) -> StateVector:
    """
    Evolve a state under a time-independent Hamiltonian, hbar = 1.

    Args:
        h: The Hamiltonian model.
        psi0: Normalized initial state.
        t: Evolution time.

    Returns:
        ``exp(-iHt)|psi0>`` as a normalized state.

    Example:
        >>> h = HamiltonianModel.from_terms(1, [("Z", 0)], [0.0])
        >>> evolve(h, StateVector.basis(1, 0), 3.0).amplitudes
        array([1.+0.j, 0.+0.j])
    """
    return StateVector(h.n, evolve_amplitudes(h, psi0, [t])[0])


def apply_product(factors: np.ndarray, amplitudes: np.ndarray) -> np.ndarray:
    """
    Contract ``(n, 2, 2)`` single-qubit factors against a ``2**n`` vector.

    Works on a trailing axis so a batch ``(..., 2**n)`` is also accepted.
    """
    n = factors.shape[0]
    batch = amplitudes.shape[:-1]
    tensor = amplitudes.reshape(batch + (2,) * n)
    offset = len(batch)
    for i in range(n):
        tensor = np.moveaxis(
            np.tensordot(factors[i], tensor, axes=([1], [offset + i])), 0, offset + i
        )
    return tensor.reshape(batch + (1 << n,))


def apply_local_unitary(u: LocalUnitary, psi: StateVector) -> StateVector:
    """
    Apply a product unitary factor by factor.

    Raises:
        DimensionMismatchError: If ``u`` and ``psi`` disagree on qubit count.
    """
    if u.n != psi.n:
        raise DimensionMismatchError(f"unitary acts on {u.n} qubits, state has {psi.n}")
    return StateVector(psi.n, apply_product(u.stacked(), psi.amplitudes))


def measurement_probs(psi: StateVector, m: LocalUnitary) -> np.ndarray:
    """
    Outcome distribution ``p(y) = |<y|M|psi>|**2`` over all bit-strings.

    Raises:
        DimensionMismatchError: If ``m`` and ``psi`` disagree on qubit count.
    """
    rotated = apply_local_unitary(m, psi)
    return np.abs(rotated.amplitudes) ** 2


def bitstring(index: int, n: int) -> str:
    """Basis index to its ``n``-character outcome string."""
    return format(index, f"0{n}b")
