"""Unit tests for queries, dataset generation and grouping."""

import numpy as np
import pytest

from hamiltonian_learning.exceptions import DatasetError, DimensionMismatchError
from hamiltonian_learning.noise import DepolarizationModel, ReadoutNoise
from hamiltonian_learning.pauli import HamiltonianModel
from hamiltonian_learning.queries import (
    DatasetEntry,
    Query,
    QueryGrid,
    exact_distribution,
    expected_groups,
    generate_dataset,
    group_dataset,
)
from hamiltonian_learning.states import LocalUnitary


def z_field(omega: float = 0.5) -> HamiltonianModel:
    return HamiltonianModel.from_terms(1, [("Z", 0)], [omega], ["omega"])


def plus_query(t: float) -> Query:
    return Query(LocalUnitary.preparation(["+"]), t, LocalUnitary.measurement(["X"]))


class TestQuery:
    """Tests for query identity."""

    def test_equal_queries_hash_equal(self):
        """Identical settings compare equal."""
        assert plus_query(0.4) == plus_query(0.4)
        assert len({plus_query(0.4), plus_query(0.4), plus_query(0.6)}) == 2

    def test_qubit_mismatch(self):
        """Preparation and measurement must share a qubit count."""
        with pytest.raises(DimensionMismatchError):
            Query(LocalUnitary.identity(2), 0.0, LocalUnitary.identity(1))

    def test_entry_outcome_validated(self):
        """Outcomes must be n-bit strings."""
        with pytest.raises(DatasetError):
            DatasetEntry(plus_query(0.1), "01")
        with pytest.raises(DatasetError):
            DatasetEntry(plus_query(0.1), "2")


class TestQueryGrid:
    """Tests for the default query grid."""

    def test_times(self):
        """Times run from t0 + dt to t0 + T."""
        np.testing.assert_allclose(QueryGrid(n=1, duration=1.0, dt=0.25).times(), [0.25, 0.5, 0.75, 1.0])

    def test_full_coverage_count(self):
        """Without num_queries every combination appears once."""
        grid = QueryGrid(n=2, duration=1.0, dt=0.5, num_preparations=4)
        assert len(grid.queries()) == 2 * 4 * 9

    def test_preparations_distinct(self):
        """Default preparations are distinct product states."""
        labels = QueryGrid(n=2, num_preparations=6).preparation_labels()
        assert len(labels) == len(set(labels)) == 6

    def test_preparation_cap(self):
        """A single qubit has only four preparations."""
        assert len(QueryGrid(n=1, num_preparations=10).preparation_labels()) == 4

    def test_random_selection_seeded(self):
        """Random selection is a function of the seed."""
        grid = QueryGrid(n=1, num_queries=50, selection="random")
        assert [q.key for q in grid.queries(3)] == [q.key for q in grid.queries(3)]
        assert [q.key for q in grid.queries(3)] != [q.key for q in grid.queries(4)]

    def test_invalid_selection(self):
        """Unknown selection modes raise DatasetError."""
        with pytest.raises(DatasetError):
            QueryGrid(n=1, selection="sorted")

    def test_non_positive_spacing(self):
        """dt must be positive."""
        with pytest.raises(DatasetError):
            QueryGrid(n=1, dt=0.0)

    def test_explicit_labels_checked(self):
        """Explicit preparations must name one known state per qubit."""
        with pytest.raises(DatasetError):
            QueryGrid(n=2, preparations=[("0",)])


class TestGenerateDataset:
    """Tests for sampling single-shot outcomes."""

    def test_identity_dynamics(self):
        """theta = 0 with identity settings always yields all zeros."""
        model = HamiltonianModel.from_terms(2, [("XX", 0)], [0.0])
        grid = QueryGrid(n=2, duration=0.4, dt=0.2, preparations=[("0", "0")], measurements=[("Z", "Z")])
        entries = generate_dataset(model, None, grid, 5, seed=1)
        assert len(entries) == 10
        assert {e.outcome for e in entries} == {"00"}

    def test_deterministic_outcome(self):
        """0.5 Z from |+> at t = pi, measured in X, always reads 1."""
        grid = QueryGrid(n=1, duration=np.pi, dt=np.pi, preparations=[("+",)], measurements=[("X",)])
        entries = generate_dataset(z_field(), None, grid, 20, seed=0)
        assert {e.outcome for e in entries} == {"1"}

    def test_fair_coin_concentration(self):
        """10**4 shots of a fair query land within 3 sigma of 0.5."""
        grid = QueryGrid(n=1, duration=1.0, dt=1.0, preparations=[("+",)], measurements=[("Z",)])
        entries = generate_dataset(z_field(), None, grid, 10_000, seed=7)
        frequency = sum(e.outcome == "0" for e in entries) / len(entries)
        assert abs(frequency - 0.5) < 3 * 0.5 / 100

    def test_same_seed_same_data(self):
        """The same seed reproduces the dataset exactly."""
        grid = QueryGrid(n=1, duration=1.0, dt=0.5)
        first = generate_dataset(z_field(), None, grid, 3, seed=11)
        second = generate_dataset(z_field(), None, grid, 3, seed=11)
        assert [(e.query.key, e.outcome) for e in first] == [(e.query.key, e.outcome) for e in second]

    def test_jobs_do_not_change_data(self):
        """Worker threads leave the dataset unchanged."""
        grid = QueryGrid(n=1, duration=1.0, dt=0.25)
        serial = generate_dataset(z_field(), None, grid, 4, seed=2)
        parallel = generate_dataset(z_field(), None, grid, 4, seed=2, jobs=4)
        assert [e.outcome for e in serial] == [e.outcome for e in parallel]

    def test_shots_must_be_positive(self):
        """shots_per_query < 1 raises DatasetError."""
        with pytest.raises(DatasetError):
            generate_dataset(z_field(), None, QueryGrid(n=1), 0, seed=0)

    def test_qubit_mismatch(self):
        """Grid and Hamiltonian must share a qubit count."""
        with pytest.raises(DimensionMismatchError):
            generate_dataset(z_field(), None, QueryGrid(n=2), 1, seed=0)


class TestExactDistribution:
    """Tests for exact outcome probabilities."""

    def test_noise_applied(self):
        """Readout noise moves weight to the flipped outcome."""
        query = Query(LocalUnitary.identity(1), 0.5, LocalUnitary.identity(1))
        noise = (ReadoutNoise(0.9), None)
        np.testing.assert_allclose(exact_distribution(z_field(), query, noise), [0.9, 0.1], atol=1e-12)

    def test_depolarization_uses_query_time(self):
        """The depolarizing weight is evaluated at the query time."""
        query = Query(LocalUnitary.identity(1), 1.0, LocalUnitary.identity(1))
        noise = (None, DepolarizationModel(mu=1.0))
        p_d = 1 - np.exp(-1.0)
        np.testing.assert_allclose(
            exact_distribution(z_field(), query, noise), [1 - p_d / 2, p_d / 2], atol=1e-12
        )


class TestGrouping:
    """Tests for grouping entries by query."""

    def test_empty(self):
        """No entries, no groups."""
        assert group_dataset([]).groups == []

    def test_identical_queries_merge(self):
        """Three entries of one query form one group of three shots."""
        entries = [DatasetEntry(plus_query(0.2), y) for y in ("0", "1", "0")]
        grouped = group_dataset(entries)
        assert len(grouped) == 1
        assert grouped.groups[0].shots == 3
        np.testing.assert_array_equal(grouped.groups[0].count_vector(), [2, 1])

    def test_times_separate(self):
        """Entries differing only in t form separate groups."""
        entries = [DatasetEntry(plus_query(0.2), "0"), DatasetEntry(plus_query(0.4), "0")]
        assert len(group_dataset(entries)) == 2

    def test_by_preparation_time(self):
        """Measurement settings of one (U, t) share a bucket."""
        u = LocalUnitary.preparation(["+"])
        entries = [
            DatasetEntry(Query(u, 0.2, LocalUnitary.measurement([b])), "0") for b in ("Z", "X", "Y")
        ] + [DatasetEntry(Query(u, 0.4, LocalUnitary.measurement(["Z"])), "1")]
        buckets = group_dataset(entries).by_preparation_time()
        assert [len(b) for b in buckets] == [3, 1]

    def test_empty_dataset_has_no_qubit_count(self):
        """Asking an empty dataset for n raises DatasetError."""
        with pytest.raises(DatasetError):
            group_dataset([]).n


class TestExpectedGroups:
    """Tests for distribution-level datasets."""

    def test_weights_are_probabilities(self):
        """Each group's counts are its exact distribution times the nominal shots."""
        grid = QueryGrid(n=1, duration=1.0, dt=0.5)
        data = expected_groups(z_field(), None, grid, shots_per_query=10.0)
        for group in data:
            expected = exact_distribution(z_field(), group.query) * 10.0
            np.testing.assert_allclose(group.count_vector(), expected, atol=1e-12)

    def test_repeated_queries_merge(self):
        """Queries repeated by the grid accumulate into one group."""
        grid = QueryGrid(n=1, duration=0.5, dt=0.5, preparations=[("0",)], measurements=[("Z",)], num_queries=3)
        data = expected_groups(z_field(), None, grid)
        assert len(data) == 1
        assert data.total_shots == pytest.approx(3.0)
