"""Pauli-string algebra and parameterized Hamiltonian models.

Qubit ``i`` (0-based in code) is the ``i``-th character of an outcome
bit-string read left to right and the ``i``-th tensor factor, so it occupies
bit ``n - 1 - i`` of a computational basis index.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import BasisIndexError, QubitCapError, SpecError

logger = logging.getLogger(__name__)

DEFAULT_QUBIT_CAP = 10
PAULI_AXES = "IXYZ"

_PHASES = (1 + 0j, 1j, -1 + 0j, -1j)


@dataclass(frozen=True)
class PauliString:
    """
    An n-qubit tensor product of single-qubit Pauli operators.

    Attributes:
        axes: One character from ``IXYZ`` per qubit, qubit 0 first.
    """

    axes: str

    def __post_init__(self) -> None:
        axes = self.axes.upper()
        if not axes:
            raise SpecError("Pauli string must act on at least one qubit")
        bad = set(axes) - set(PAULI_AXES)
        if bad:
            raise SpecError(f"unknown Pauli axes {sorted(bad)} in {self.axes!r}")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_sites(cls, n: int, sites: Dict[int, str]) -> "PauliString":
        """
        Build a string with the given axes on selected qubits and I elsewhere.

        Example:
            >>> PauliString.from_sites(3, {0: "Z", 2: "Z"}).axes
            'ZIZ'
        """
        axes = ["I"] * n
        for site, axis in sites.items():
            if not 0 <= site < n:
                raise SpecError(f"site {site} outside a {n}-qubit register")
            axes[site] = axis
        return cls("".join(axes))

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def weight(self) -> int:
        return sum(1 for a in self.axes if a != "I")

    def _mask(self, chars: str) -> int:
        mask = 0
        for i, axis in enumerate(self.axes):
            if axis in chars:
                mask |= 1 << (self.n - 1 - i)
        return mask

    @property
    def flip_mask(self) -> int:
        """Bits flipped by X and Y factors."""
        return self._mask("XY")

    @property
    def sign_mask(self) -> int:
        """Bits whose value contributes a (-1) factor (Y and Z)."""
        return self._mask("YZ")

    @property
    def y_count(self) -> int:
        return self.axes.count("Y")

    def signed_permutation(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Return the action on every basis state at once.

        Returns:
            ``(image, phase)`` arrays of length ``2**n`` with
            ``P|k> = phase[k] |image[k]>``.
        """
        dim = 1 << self.n
        index = np.arange(dim, dtype=np.int64)
        image = index ^ self.flip_mask
        parity = np.zeros(dim, dtype=np.int64)
        masked = index & self.sign_mask
        while masked.any():
            parity ^= masked & 1
            masked >>= 1
        phase = _PHASES[self.y_count % 4] * (1 - 2 * parity)
        return image, phase.astype(np.complex128)

    def matrix(self) -> np.ndarray:
        """Dense ``2**n x 2**n`` matrix of the string."""
        image, phase = self.signed_permutation()
        dim = image.size
        out = np.zeros((dim, dim), dtype=np.complex128)
        out[image, np.arange(dim)] = phase
        return out

    def __str__(self) -> str:
        return self.axes


def pauli_apply(p: PauliString, basis_index: int) -> Tuple[int, complex]:
    """
    Apply a Pauli string to one computational basis state.

    X flips a bit, Z contributes ``(-1)**bit`` and Y flips the bit with phase
    ``i * (-1)**bit``.

    Args:
        p: The Pauli string.
        basis_index: Integer label of the basis state, ``0 <= index < 2**n``.

    Returns:
        The image basis index and the phase, one of ``+1, -1, +i, -i``.

    Raises:
        BasisIndexError: If the index is outside the register.

    Example:
        >>> pauli_apply(PauliString("Y"), 0)
        (1, 1j)
    """
    dim = 1 << p.n
    if not 0 <= basis_index < dim:
        raise BasisIndexError(
            f"basis index {basis_index} outside [0, {dim}) for {p.n} qubits"
        )
    parity = bin(basis_index & p.sign_mask).count("1") % 2
    phase = _PHASES[p.y_count % 4] * (-1 if parity else 1)
    return basis_index ^ p.flip_mask, complex(phase)


@dataclass(frozen=True)
class HamiltonianModel:
    """
    A Hamiltonian written as weighted Pauli strings with tied coefficients.

    Coefficient ``j`` of the expansion equals ``theta[tying[j]]``; several
    terms may share a free parameter.

    Attributes:
        n: Number of qubits.
        terms: ``(PauliString, coefficient index)`` pairs.
        theta: Free real parameters (angular frequencies, hbar = 1).
        tying: Map from coefficient index to theta index.
        names: Optional human-readable labels, one per theta entry.
        scales: Optional fixed factor per coefficient; coefficient ``j`` is
            ``scales[j] * theta[tying[j]]``.
    """

    n: int
    terms: Tuple[Tuple[PauliString, int], ...]
    theta: np.ndarray
    tying: Tuple[int, ...]
    names: Tuple[str, ...] = field(default=())
    scales: Tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "tying", tuple(int(k) for k in self.tying))
        object.__setattr__(self, "scales", tuple(float(v) for v in self.scales))
        if self.scales and len(self.scales) != len(self.tying):
            raise SpecError("scales must give one factor per coefficient")
        for pauli, coeff in self.terms:
            if pauli.n != self.n:
                raise SpecError(
                    f"term {pauli} acts on {pauli.n} qubits, model has {self.n}"
                )
            if not 0 <= coeff < len(self.tying):
                raise SpecError(f"coefficient index {coeff} has no tying entry")
        for coeff, slot in enumerate(self.tying):
            if not 0 <= slot < theta.size:
                raise SpecError(
                    f"coefficient {coeff} tied to missing theta index {slot}"
                )
        if self.names and len(self.names) != theta.size:
            raise SpecError("names must label every theta entry")

    @classmethod
    def from_terms(
        cls,
        n: int,
        terms: Iterable[Tuple[str, int]],
        theta: Sequence[float],
        names: Sequence[str] = (),
        scales: Sequence[float] = (),
    ) -> "HamiltonianModel":
        """
        Build a model where term ``j`` uses coefficient ``j`` tied to a theta slot.

        Args:
            n: Number of qubits.
            terms: ``(axes, theta index)`` pairs.
            theta: Free parameter values.
            names: Optional parameter labels.
            scales: Optional fixed factor per term.
        """
        terms = list(terms)
        return cls(
            n=n,
            terms=tuple((PauliString(axes), j) for j, (axes, _) in enumerate(terms)),
            theta=np.asarray(theta, dtype=np.float64),
            tying=tuple(slot for _, slot in terms),
            names=tuple(names),
            scales=tuple(scales),
        )

    @property
    def num_parameters(self) -> int:
        return int(self.theta.size)

    def coefficients(self, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-coefficient values ``scales * theta[tying]``."""
        values = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        if not self.tying:
            return np.zeros(0)
        picked = values[np.asarray(self.tying)]
        return picked * np.asarray(self.scales) if self.scales else picked

    def with_theta(self, theta: Sequence[float]) -> "HamiltonianModel":
        """Same structure, new free parameters."""
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.num_parameters:
            raise SpecError(
                f"expected {self.num_parameters} parameters, got {theta.size}"
            )
        return HamiltonianModel(self.n, self.terms, theta, self.tying, self.names, self.scales)

    def parameter_names(self) -> List[str]:
        if self.names:
            return list(self.names)
        return [f"theta_{k}" for k in range(self.num_parameters)]

    def structure_key(self) -> Tuple:
        """Hashable identity of everything except theta."""
        return (self.n, tuple((p.axes, c) for p, c in self.terms), self.tying, self.scales)


def build_dense(h: HamiltonianModel, cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    """
    Assemble the dense matrix ``sum_j coefficient_j P_j``.

    Args:
        h: The Hamiltonian model.
        cap: Largest qubit count allowed.

    Returns:
        Complex Hermitian ``2**n x 2**n`` matrix.

    Raises:
        QubitCapError: If ``h.n`` exceeds ``cap``.

    Example:
        >>> model = HamiltonianModel.from_terms(1, [("Z", 0)], [0.5])
        >>> build_dense(model).real.diagonal()
        array([ 0.5, -0.5])
    """
    if h.n > cap:
        raise QubitCapError(h.n, cap)
    dim = 1 << h.n
    out = np.zeros((dim, dim), dtype=np.complex128)
    coefficients = h.coefficients()
    columns = np.arange(dim)
    for pauli, coeff in h.terms:
        image, phase = pauli.signed_permutation()
        out[image, columns] += coefficients[coeff] * phase
    # Pauli strings are Hermitian and theta is real.
    assert np.allclose(out, out.conj().T, atol=1e-12), "Hamiltonian is not Hermitian"
    return out
