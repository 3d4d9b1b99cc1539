"""Query model, synthetic dataset generation and grouping.

A query ``x = (U, t, M)`` prepares ``U|0...0>``, evolves for time ``t``,
rotates with ``M`` and measures every qubit once, returning an n-bit string.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DatasetError, DimensionMismatchError
from .noise import DepolarizationModel, ReadoutNoise, noisy_distribution
from .pauli import HamiltonianModel
from .states import (
    MEASUREMENTS,
    PREPARATIONS,
    LocalUnitary,
    StateVector,
    apply_local_unitary,
    apply_product,
    bitstring,
    evolve_amplitudes,
)

logger = logging.getLogger(__name__)

PREPARATION_ORDER = ("0", "1", "+", "+i")
MEASUREMENT_ORDER = ("Z", "X", "Y")
SELECTIONS = ("round-robin", "random")

NoiseSpec = Tuple[Optional[ReadoutNoise], Optional[DepolarizationModel]]


@dataclass(frozen=True, eq=False)
class Query:
    """One experimental setting ``(U, t, M)``."""

    u: LocalUnitary
    t: float
    m: LocalUnitary

    def __post_init__(self) -> None:
        if self.u.n != self.m.n:
            raise DimensionMismatchError(
                f"preparation acts on {self.u.n} qubits, measurement on {self.m.n}"
            )
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.u.n

    @property
    def key(self) -> Tuple:
        return (self.u.key, self.t, self.m.key)

    @property
    def preparation_key(self) -> Tuple:
        return self.u.key

    def initial_state(self) -> StateVector:
        return apply_local_unitary(self.u, StateVector.basis(self.n, 0))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Query) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)


@dataclass(frozen=True)
class DatasetEntry:
    """A query together with its single observed outcome."""

    query: Query
    outcome: str

    def __post_init__(self) -> None:
        if len(self.outcome) != self.query.n or set(self.outcome) - {"0", "1"}:
            raise DatasetError(
                f"outcome {self.outcome!r} is not a {self.query.n}-bit string"
            )

    @property
    def outcome_index(self) -> int:
        return int(self.outcome, 2)


@dataclass
class DatasetGroup:
    """
    All shots of one query.

    ``counts`` maps outcome strings to shot counts; distribution-level groups
    store fractional expected counts instead.
    """

    query: Query
    counts: Dict[str, float] = field(default_factory=dict)

    @property
    def shots(self) -> float:
        return sum(self.counts.values())

    def count_vector(self) -> np.ndarray:
        """Counts indexed by outcome basis index."""
        out = np.zeros(1 << self.query.n)
        for outcome, count in self.counts.items():
            out[int(outcome, 2)] += count
        return out

    def outcomes(self) -> List[str]:
        """Multiset of observed outcomes (integral counts only)."""
        return [y for y, c in self.counts.items() for _ in range(int(c))]


@dataclass
class GroupedDataset:
    """Dataset partitioned by exact query identity, in first-seen order."""

    groups: List[DatasetGroup] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self) -> Iterator[DatasetGroup]:
        return iter(self.groups)

    @property
    def total_shots(self) -> float:
        return sum(g.shots for g in self.groups)

    @property
    def n(self) -> int:
        if not self.groups:
            raise DatasetError("empty dataset has no qubit count")
        return self.groups[0].query.n

    def by_preparation_time(self) -> List[List[DatasetGroup]]:
        """Groups sharing ``(U, t)`` across measurement settings."""
        buckets: Dict[Tuple, List[DatasetGroup]] = {}
        for group in self.groups:
            buckets.setdefault((group.query.preparation_key, group.query.t), []).append(group)
        return list(buckets.values())


@dataclass
class QueryGrid:
    """
    Equally spaced time grid crossed with product preparation/measurement settings.

    Attributes:
        n: Number of qubits.
        duration: Protocol duration T.
        dt: Time spacing; times are ``t0 + k*dt`` for ``k = 1..round(T/dt)``.
        t0: Experiment start time.
        num_preparations: Distinct product preparations (staggered patterns
            first, then lexicographic product states).
        preparations: Explicit per-qubit preparation labels, overriding the default.
        measurements: Explicit per-qubit measurement bases, overriding the default.
        num_queries: Number of queries to emit; ``None`` covers every
            (time, preparation, measurement) combination once.
        selection: ``round-robin`` cycles deterministically through the
            combinations; ``random`` draws them with the dataset seed.
    """

    n: int
    duration: float = 2.0
    dt: float = 0.2
    t0: float = 0.0
    num_preparations: int = 4
    preparations: Optional[List[Tuple[str, ...]]] = None
    measurements: Optional[List[Tuple[str, ...]]] = None
    num_queries: Optional[int] = None
    selection: str = "round-robin"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DatasetError("grid needs at least one qubit")
        if not self.dt > 0 or not self.duration > 0:
            raise DatasetError("duration and dt must be positive")
        if self.selection not in SELECTIONS:
            raise DatasetError(f"selection must be one of {SELECTIONS}")
        if self.num_preparations < 1:
            raise DatasetError("num_preparations must be >= 1")
        for label_set, known in ((self.preparations, PREPARATIONS), (self.measurements, MEASUREMENTS)):
            for labels in label_set or ():
                if len(labels) != self.n or set(labels) - set(known):
                    raise DatasetError(f"setting {labels} is not {self.n} labels from {sorted(known)}")

    def times(self) -> np.ndarray:
        steps = int(round(self.duration / self.dt))
        return self.t0 + self.dt * np.arange(1, steps + 1)

    def preparation_labels(self) -> List[Tuple[str, ...]]:
        if self.preparations is not None:
            return [tuple(p) for p in self.preparations]
        count = min(self.num_preparations, 4 ** self.n)
        chosen: List[Tuple[str, ...]] = []
        for k in range(min(count, 4)):
            pattern = tuple(PREPARATION_ORDER[(k + i) % 4] for i in range(self.n))
            if pattern not in chosen:
                chosen.append(pattern)
        for pattern in itertools.product(PREPARATION_ORDER, repeat=self.n):
            if len(chosen) >= count:
                break
            if pattern not in chosen:
                chosen.append(pattern)
        return chosen

    def measurement_labels(self) -> List[Tuple[str, ...]]:
        if self.measurements is not None:
            return [tuple(m) for m in self.measurements]
        return list(itertools.product(MEASUREMENT_ORDER, repeat=self.n))

    def settings(self) -> List[Tuple[LocalUnitary, LocalUnitary]]:
        """Every (preparation, measurement) pair; preparations vary fastest."""
        preps = [LocalUnitary.preparation(p) for p in self.preparation_labels()]
        meas = [LocalUnitary.measurement(m) for m in self.measurement_labels()]
        return [(u, m) for m in meas for u in preps]

    def queries(self, seed: int = 0) -> List[Query]:
        times = self.times()
        settings = self.settings()
        if not len(times) or not settings:
            raise DatasetError("query grid is empty")
        total = self.num_queries if self.num_queries is not None else len(times) * len(settings)
        if total < 1:
            raise DatasetError("query grid is empty")
        if self.selection == "random":
            rng = np.random.default_rng([seed, 0x9E3779B9])
            time_index = rng.integers(len(times), size=total)
            setting_index = rng.integers(len(settings), size=total)
        else:
            k = np.arange(total)
            time_index = k % len(times)
            setting_index = (k // len(times)) % len(settings)
        return [
            Query(settings[s][0], float(times[ti]), settings[s][1])
            for ti, s in zip(time_index, setting_index)
        ]


def exact_distribution(
    h: HamiltonianModel, query: Query, noise: Optional[NoiseSpec] = None
) -> np.ndarray:
    """Outcome probabilities of a query including optional noise channels."""
    psi0 = query.initial_state()
    evolved = evolve_amplitudes(h, psi0, [query.t])[0]
    probs = np.abs(apply_product(query.m.stacked(), evolved)) ** 2
    if noise is not None:
        readout, depolarization = noise
        probs = noisy_distribution(probs, h.n, readout, depolarization, query.t)
    return probs


def _sample_query(
    h: HamiltonianModel,
    query: Query,
    noise: Optional[NoiseSpec],
    shots: int,
    seed: int,
    index: int,
) -> List[DatasetEntry]:
    probs = np.clip(exact_distribution(h, query, noise), 0.0, None)
    cdf = np.cumsum(probs / probs.sum())
    # Philox is counter-based: draw s of query `index` is fixed by (seed, index, s).
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))
    picks = np.minimum(np.searchsorted(cdf, rng.random(shots), side="right"), cdf.size - 1)
    return [DatasetEntry(query, bitstring(int(k), h.n)) for k in picks]


def generate_dataset(
    h_true: HamiltonianModel,
    noise: Optional[NoiseSpec],
    grid: QueryGrid,
    shots_per_query: int,
    seed: int,
    jobs: int = 1,
) -> List[DatasetEntry]:
    """
    Simulate single-shot outcomes for every query of a grid.

    Depolarization is applied before readout noise. Entries come out in
    query order, shots in shot order, whatever ``jobs`` is.

    Args:
        h_true: Ground-truth Hamiltonian.
        noise: Optional ``(ReadoutNoise, DepolarizationModel)``; either may be None.
        grid: Query grid.
        shots_per_query: Single-shot outcomes per query.
        seed: Dataset seed.
        jobs: Worker threads.

    Returns:
        ``len(queries) * shots_per_query`` dataset entries.

    Raises:
        DatasetError: If the grid is empty or ``shots_per_query < 1``.
    """
    if shots_per_query < 1:
        raise DatasetError(f"shots_per_query must be >= 1, got {shots_per_query}")
    if grid.n != h_true.n:
        raise DimensionMismatchError(f"grid has {grid.n} qubits, Hamiltonian {h_true.n}")
    queries = grid.queries(seed)
    logger.info(
        "Sampling %d queries x %d shots (seed %d, %d jobs)",
        len(queries), shots_per_query, seed, jobs,
    )

    def work(item: Tuple[int, Query]) -> List[DatasetEntry]:
        index, query = item
        return _sample_query(h_true, query, noise, shots_per_query, seed, index)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(work, enumerate(queries)))
    else:
        batches = [work(item) for item in enumerate(queries)]
    return [entry for batch in batches for entry in batch]


def group_dataset(d: Sequence[DatasetEntry]) -> GroupedDataset:
    """
    Group entries by identical ``(U, t, M)``, preserving first-seen order.

    Example:
        >>> group_dataset([]).groups
        []
    """
    groups: Dict[Tuple, DatasetGroup] = {}
    for entry in d:
        group = groups.get(entry.query.key)
        if group is None:
            group = groups[entry.query.key] = DatasetGroup(entry.query)
        group.counts[entry.outcome] = group.counts.get(entry.outcome, 0) + 1
    return GroupedDataset(list(groups.values()))


def expected_groups(
    h_true: HamiltonianModel,
    noise: Optional[NoiseSpec],
    grid: QueryGrid,
    shots_per_query: float = 1.0,
    seed: int = 0,
) -> GroupedDataset:
    """
    Infinite-shot dataset: each query weighted by its exact outcome distribution.

    Repeated queries of the grid are merged into one group.
    """
    groups: Dict[Tuple, DatasetGroup] = {}
    for query in grid.queries(seed):
        probs = exact_distribution(h_true, query, noise) * shots_per_query
        group = groups.get(query.key)
        if group is None:
            group = groups[query.key] = DatasetGroup(query)
        for index, weight in enumerate(probs):
            if weight > 0:
                label = bitstring(index, h_true.n)
                group.counts[label] = group.counts.get(label, 0.0) + float(weight)
    return GroupedDataset(list(groups.values()))
