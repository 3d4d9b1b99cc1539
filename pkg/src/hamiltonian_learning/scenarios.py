"""Hamiltonian families used by the studies.

Every builder returns a ``HamiltonianModel`` whose theta holds the ground
truth and whose tying map encodes the family's symmetry.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import SpecError
from .noise import DepolarizationModel, ReadoutNoise
from .pauli import HamiltonianModel, PauliString
from .queries import NoiseSpec

logger = logging.getLogger(__name__)

CR_TERMS = ("ZI", "ZX", "ZY", "ZZ", "IX", "IY", "IZ")
CR_REFERENCE = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1)

# XY-type (eta) and ZZ-type (epsilon) couplings of a four-qubit device
CROSSTALK_ETA = (
    (0.00, 0.59, 0.46, 0.40),
    (0.59, 0.00, 0.35, 0.48),
    (0.46, 0.35, 0.00, 0.54),
    (0.40, 0.48, 0.54, 0.00),
)
CROSSTALK_EPSILON = (
    (0.00, 0.25, 0.37, 0.23),
    (0.25, 0.00, 0.56, 0.67),
    (0.37, 0.56, 0.00, 0.27),
    (0.23, 0.67, 0.27, 0.00),
)


@dataclass(frozen=True)
class SpinChainSpec:
    """
    Periodic ZZ chain with longitudinal fields and period-``s`` translation symmetry.

    Bond ``(i, i+1 mod N)`` couples with ``J[i mod s]`` and site ``i`` feels
    ``omega[i mod s]`` (0-based ``i``).
    """

    n_spins: int
    s: int
    couplings: Tuple[float, ...]
    fields: Tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "couplings", tuple(float(v) for v in self.couplings))
        object.__setattr__(self, "fields", tuple(float(v) for v in self.fields))
        if self.n_spins < 2:
            raise SpecError(f"a chain needs at least 2 spins, got {self.n_spins}")
        if self.s < 1 or self.n_spins % self.s:
            raise SpecError(f"symmetry period s={self.s} does not divide N={self.n_spins}")
        if len(self.couplings) != self.s or len(self.fields) != self.s:
            raise SpecError(f"need {self.s} couplings and {self.s} fields")

    @classmethod
    def uniform(cls, n_spins: int, coupling: float = 1.0, field_: float = 0.5) -> "SpinChainSpec":
        return cls(n_spins, 1, (coupling,), (field_,))


def build_spin_chain(spec: SpinChainSpec) -> HamiltonianModel:
    """
    ``sum_i J[i mod s] Z_i Z_{i+1} + sum_i omega[i mod s] Z_i`` on a ring.

    Example:
        >>> build_spin_chain(SpinChainSpec.uniform(4)).num_parameters
        2
    """
    n, s = spec.n_spins, spec.s
    terms = []
    for i in range(n):
        # with two spins the closing bond repeats the first pair
        terms.append((PauliString.from_sites(n, {i: "Z", (i + 1) % n: "Z"}).axes, i % s))
    for i in range(n):
        terms.append((PauliString.from_sites(n, {i: "Z"}).axes, s + i % s))
    names = [f"J_{k + 1}" for k in range(s)] + [f"omega_{k + 1}" for k in range(s)]
    return HamiltonianModel.from_terms(n, terms, spec.couplings + spec.fields, names)


@dataclass(frozen=True)
class CRGateSpec:
    """
    Cross-resonance gate ``(Z x A)/2 + (I x B)/2`` with readout and depolarization noise.

    Attributes:
        c: ``(c_zi, c_zx, c_zy, c_zz, c_ix, c_iy, c_iz)``.
        q: Readout fidelity.
        mu: Depolarization time constant.
        t0: Experiment start time.
    """

    c: Tuple[float, ...] = CR_REFERENCE
    q: float = 0.995
    mu: float = 5.0
    t0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if len(self.c) != len(CR_TERMS):
            raise SpecError(f"CR gate needs {len(CR_TERMS)} coefficients, got {len(self.c)}")

    def noise(self) -> NoiseSpec:
        return ReadoutNoise(self.q), DepolarizationModel(self.mu, self.t0)


def build_cr_gate(spec: CRGateSpec) -> HamiltonianModel:
    """Seven two-qubit Pauli terms, each weighted by half its ``c`` entry."""
    names = [f"c_{axes.lower()}" for axes in CR_TERMS]
    return HamiltonianModel.from_terms(
        2,
        [(axes, j) for j, axes in enumerate(CR_TERMS)],
        spec.c,
        names,
        scales=[0.5] * len(CR_TERMS),
    )


@dataclass(frozen=True)
class CrosstalkSpec:
    """Symmetric XY (``eta``) and ZZ (``epsilon``) coupling matrices with zero diagonal."""

    eta: Tuple[Tuple[float, ...], ...]
    epsilon: Tuple[Tuple[float, ...], ...]

    def __post_init__(self) -> None:
        for name in ("eta", "epsilon"):
            matrix = np.asarray(getattr(self, name), dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise SpecError(f"{name} must be a square matrix")
            if np.any(np.diag(matrix) != 0):
                raise SpecError(f"{name} has a nonzero diagonal")
            if not np.allclose(matrix, matrix.T):
                raise SpecError(f"{name} is not symmetric")
            object.__setattr__(self, name, tuple(tuple(row) for row in matrix.tolist()))
        if len(self.eta) != len(self.epsilon):
            raise SpecError("eta and epsilon disagree on the qubit count")

    @property
    def n(self) -> int:
        return len(self.eta)

    def pairs(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n)]

    @classmethod
    def reference(cls, n: int = 4) -> "CrosstalkSpec":
        """The four-qubit device couplings, or their leading ``n x n`` block."""
        if not 2 <= n <= 4:
            raise SpecError(f"reference crosstalk covers 2 to 4 qubits, got {n}")
        return cls(
            tuple(row[:n] for row in CROSSTALK_ETA[:n]),
            tuple(row[:n] for row in CROSSTALK_EPSILON[:n]),
        )


def build_crosstalk(spec: CrosstalkSpec) -> HamiltonianModel:
    """
    ``sum_{i<j} eta_ij (X_i X_j + Y_i Y_j) + sum_{i<j} epsilon_ij Z_i Z_j``.

    Free parameters: every ``eta_ij`` then every ``epsilon_ij``, pairs in
    lexicographic order.
    """
    n, pairs = spec.n, spec.pairs()
    terms, theta, names = [], [], []
    for k, (i, j) in enumerate(pairs):
        terms.append((PauliString.from_sites(n, {i: "X", j: "X"}).axes, k))
        terms.append((PauliString.from_sites(n, {i: "Y", j: "Y"}).axes, k))
        theta.append(spec.eta[i][j])
        names.append(f"eta_{i + 1}{j + 1}")
    for k, (i, j) in enumerate(pairs):
        terms.append((PauliString.from_sites(n, {i: "Z", j: "Z"}).axes, len(pairs) + k))
        theta.append(spec.epsilon[i][j])
        names.append(f"epsilon_{i + 1}{j + 1}")
    return HamiltonianModel.from_terms(n, terms, theta, names)


@dataclass(frozen=True)
class DriftSpec:
    """
    Sudden change of ``(omega_1, omega_2, epsilon)`` followed by online batches.

    Attributes:
        before: Parameters during pre-training.
        after: Parameters after the change.
        batch_size: New single-shot queries per batch.
        batches: Number of batches.
    """

    before: Tuple[float, float, float] = (0.5, 0.5, 1.0)
    after: Tuple[float, float, float] = (1.5, 1.5, 2.0)
    batch_size: int = 300
    batches: int = 10

    def __post_init__(self) -> None:
        if len(self.before) != 3 or len(self.after) != 3:
            raise SpecError("drift parameters are (omega_1, omega_2, epsilon)")
        if self.batch_size < 1:
            raise SpecError(f"batch size must be >= 1, got {self.batch_size}")
        if self.batches < 0:
            raise SpecError(f"batch count must be >= 0, got {self.batches}")


def build_drift(parameters: Sequence[float]) -> HamiltonianModel:
    """``omega_1 Z_1 + omega_2 Z_2 + epsilon Z_1 Z_2``."""
    return HamiltonianModel.from_terms(
        2, [("ZI", 0), ("IZ", 1), ("ZZ", 2)], parameters, ["omega_1", "omega_2", "epsilon"]
    )


@dataclass
class Scenario:
    """
    Ground truth of one study.

    Attributes:
        name: Scenario selector.
        truth: Hamiltonian with the true theta.
        noise: Channels applied when sampling data.
        learn_noise: Whether q and mu belong to the estimated vector.
    """

    name: str
    truth: HamiltonianModel
    noise: Optional[NoiseSpec] = None
    learn_noise: bool = False
    metadata: dict = field(default_factory=dict)

    def truth_vector(self) -> np.ndarray:
        """Ground truth in ``EstimationResult.estimate_vector`` order."""
        values = list(self.truth.theta)
        if self.learn_noise:
            readout, depolarization = self.noise
            values += [readout.q, depolarization.mu]
        return np.asarray(values, dtype=np.float64)
