"""Unit tests for the study drivers."""

from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from hamiltonian_learning.exceptions import ConfigError, NonFiniteLossError, StudyAborted
from hamiltonian_learning.experiments import (
    CellStore,
    DriftTrace,
    ScalingRun,
    StudyContext,
    fit_power_law,
    run_constraint_point_study,
    run_cr_calibration,
    run_cr_distribution_fit,
    run_cr_distribution_study,
    run_crosstalk_study,
    run_drift_experiment,
    run_drift_study,
    run_dt_study,
    run_scaling_experiment,
    sample,
    saturation_point,
    train,
)
from hamiltonian_learning.learners import EstimationResult, TrainConfig
from hamiltonian_learning.queries import QueryGrid
from hamiltonian_learning.scenarios import (
    CRGateSpec,
    CrosstalkSpec,
    DriftSpec,
    Scenario,
    SpinChainSpec,
    build_spin_chain,
)

TARGET = "hamiltonian_learning.experiments"


def fake_result(error, theta=(0.0,)):
    return EstimationResult(theta_hat=np.asarray(theta, dtype=np.float64), names=["x"] * len(theta), mse=error)


def quadratic_train(learner, scenario, data, config):
    """MSE = 1 / N**2 where the fake dataset is the query count."""
    return fake_result(1.0 / data ** 2)


@pytest.fixture
def ctx():
    return StudyContext(grid=QueryGrid(n=2, duration=1.0, dt=0.5), config=TrainConfig(), repeats=2)


@pytest.fixture
def scenario(spin_pair):
    return Scenario("spin-chain", spin_pair)


@pytest.fixture
def fake_sample():
    with patch(f"{TARGET}.sample", side_effect=lambda scenario, grid, n, seed, shots=1: n) as mock:
        yield mock


class TestPowerLaw:
    """Tests for the log-log fit."""

    def test_exact_square_law(self):
        """MSE = N**-2 gives exponent 2 with zero residual."""
        exponent, intercept, stderr, residual = fit_power_law([10, 100, 1000], [1e-2, 1e-4, 1e-6])
        assert exponent == pytest.approx(2.0)
        assert intercept == pytest.approx(0.0, abs=1e-12)
        assert residual == pytest.approx(0.0, abs=1e-12)

    def test_two_points(self):
        """(1e4, 1e-2) and (1e6, 1e-5) give 1.5."""
        assert fit_power_law([1e4, 1e6], [1e-2, 1e-5])[0] == pytest.approx(1.5)

    def test_single_point(self):
        """One point has no slope."""
        with pytest.raises(ConfigError):
            fit_power_law([100], [0.1])

    def test_run_frame(self):
        """ScalingRun tables carry one row per count with the fit repeated."""
        frame = ScalingRun.fit([10, 100], [1e-2, 1e-4], label="ipinn").to_frame()
        assert list(frame.columns) == ["label", "query_count", "mse", "exponent", "intercept", "stderr", "residual"]
        assert frame["exponent"].tolist() == pytest.approx([2.0, 2.0])
        assert set(frame["label"]) == {"ipinn"}


class TestSaturation:
    """Tests for the collocation saturation rule."""

    def test_first_small_improvement(self):
        """Improvement 0.5 then 0.02: saturates at the third P."""
        assert saturation_point([10, 50, 100], [1.0, 0.5, 0.49]) == 100

    def test_never(self):
        """Steady halving never saturates."""
        assert saturation_point([1, 2, 4], [1.0, 0.5, 0.25]) is None

    def test_worse(self):
        """A worse MSE counts as saturation."""
        assert saturation_point([1, 2], [0.5, 0.6]) == 2


class TestSample:
    """Tests for drawing a cell's dataset."""

    def test_shots_per_setting(self, scenario, ctx):
        """20 entries at 5 shots are 4 settings of 5 shots each."""
        data = sample(scenario, ctx.grid, 20, 0, shots_per_query=5)
        assert len(data) == 4
        assert [group.shots for group in data] == [5, 5, 5, 5]
        assert data.total_shots == 20

    def test_round_robin_order(self, scenario, ctx):
        """Round-robin selection walks the times of the first setting first."""
        data = sample(scenario, ctx.grid, 4, 0)
        assert [group.query.t for group in data] == pytest.approx([0.5, 1.0, 0.5, 1.0])

    def test_random_selection(self, scenario, ctx):
        """Random selection follows the grid and depends on the seed."""
        grid = replace(ctx.grid, selection="random")
        a = [(g.query.t, g.counts) for g in sample(scenario, grid, 30, 0)]
        b = [(g.query.t, g.counts) for g in sample(scenario, grid, 30, 1)]
        assert sum(shots for _, counts in a for shots in counts.values()) == 30
        assert a != b

    def test_budget_below_one_setting(self, scenario, ctx):
        """Fewer entries than shots per setting is a ConfigError."""
        with pytest.raises(ConfigError) as info:
            sample(scenario, ctx.grid, 3, 0, shots_per_query=5)
        assert info.value.field == "dataset.shots_per_query"


class TestScalingExperiment:
    """Tests for the MSE-versus-N sweep."""

    def test_recovers_exponent(self, scenario, ctx, fake_sample):
        """A learner with MSE = N**-2 scores exponent 2."""
        with patch(f"{TARGET}.train", side_effect=quadratic_train):
            run = run_scaling_experiment(scenario, "ipinn", [10, 100, 1000], ctx)
        assert run.exponent == pytest.approx(2.0)
        assert run.mse == pytest.approx([1e-2, 1e-4, 1e-6])

    def test_seeds_averaged(self, scenario, ctx, fake_sample):
        """Each cell averages its repeats, seeded from the config seed."""
        with patch(f"{TARGET}.train", side_effect=lambda l, s, d, config: fake_result(float(config.seed + 1))):
            run = run_scaling_experiment(scenario, "ipinn", [10, 20], ctx)
        assert run.mse == [1.5, 1.5]
        assert [call.args[3] for call in fake_sample.call_args_list] == [0, 1, 0, 1]

    def test_shots_per_query_forwarded(self, scenario, ctx, fake_sample):
        """The context's shots per setting reach every dataset draw."""
        ctx.shots_per_query = 10
        with patch(f"{TARGET}.train", side_effect=quadratic_train):
            run_scaling_experiment(scenario, "ipinn", [10, 100], ctx)
        assert {call.args[4] for call in fake_sample.call_args_list} == {10}

    def test_needs_two_counts(self, scenario, ctx):
        """A single query count is rejected."""
        with pytest.raises(ConfigError):
            run_scaling_experiment(scenario, "ipinn", [10], ctx)

    def test_unknown_learner(self, scenario, ctx):
        """Only ipinn and dnn are learners."""
        with pytest.raises(ConfigError) as info:
            run_scaling_experiment(scenario, "svm", [10, 20], ctx)
        assert info.value.accepted == ["ipinn", "dnn"]

    def test_failed_cell_keeps_others(self, scenario, ctx, fake_sample):
        """One diverging cell aborts the study with the others as partial results."""

        def flaky(learner, scenario, data, config):
            if data == 100:
                raise NonFiniteLossError("physics", 3, float("nan"))
            return quadratic_train(learner, scenario, data, config)

        with patch(f"{TARGET}.train", side_effect=flaky):
            with pytest.raises(StudyAborted) as info:
                run_scaling_experiment(scenario, "ipinn", [10, 100, 1000], ctx)
        assert info.value.partial.query_counts == [10, 1000]
        assert "N=100" in str(info.value)

    def test_finished_cells_skipped(self, scenario, ctx, fake_sample):
        """Cells already in the store are not retrained."""
        ctx.store.record("scaling/spin-chain/ipinn/N=10", {"cell": "x", "mse": 1e-2})
        with patch(f"{TARGET}.train", side_effect=quadratic_train) as mock:
            run = run_scaling_experiment(scenario, "ipinn", [10, 100], ctx)
        assert mock.call_count == ctx.repeats
        assert run.mse[0] == 1e-2

    def test_parallel_cells(self, scenario, ctx, fake_sample):
        """Concurrent cells give the same table."""
        ctx.jobs = 3
        with patch(f"{TARGET}.train", side_effect=quadratic_train):
            run = run_scaling_experiment(scenario, "ipinn", [10, 100, 1000], ctx)
        assert run.mse == pytest.approx([1e-2, 1e-4, 1e-6])


class TestDtStudy:
    """Tests for the grid-spacing table."""

    def test_table_layout(self, scenario, ctx):
        """Rows are dataset sizes, columns are spacings."""
        with patch(f"{TARGET}.sample", side_effect=lambda s, grid, n, seed, shots=1: (n, grid.dt)), patch(
            f"{TARGET}.train", side_effect=lambda l, s, data, c: fake_result(data[0] * data[1])
        ):
            table = run_dt_study(scenario, "dnn", [100, 200], [0.1, 0.5], ctx)
        assert table.index.name == "settings"
        assert list(table.columns) == [0.1, 0.5]
        assert table.loc[200, 0.5] == pytest.approx(100.0)


class TestConstraintPointStudy:
    """Tests for the collocation sweep."""

    def test_saturation_and_slope(self, scenario, ctx, fake_sample):
        """MSE = 1/P up to P = 100 then flat: saturates at 200 with slope 1."""
        def by_points(learner, scenario, data, config):
            return fake_result(1.0 / min(config.constraint_points, 100))

        with patch(f"{TARGET}.train", side_effect=by_points):
            study = run_constraint_point_study(scenario, [200, 10, 100], [50], ctx)
        assert study.frame["P"].tolist() == [10, 100, 200]
        assert study.saturation == {50: 200}
        assert study.slopes[50] == pytest.approx(1.0)

    def test_points_positive(self, scenario, ctx):
        """P = 0 is rejected."""
        with pytest.raises(ConfigError):
            run_constraint_point_study(scenario, [0, 10], [50], ctx)


class TestCrosstalkStudy:
    """Tests for the per-coupling error table."""

    def test_long_table(self, ctx, fake_sample):
        """Every coupling of each learner gets a row with its squared error."""
        spec = CrosstalkSpec.reference(3)
        truth = [row[j] for row, j in ((spec.eta[0], 1), (spec.eta[0], 2), (spec.eta[1], 2))]
        truth += [row[j] for row, j in ((spec.epsilon[0], 1), (spec.epsilon[0], 2), (spec.epsilon[1], 2))]
        result = fake_result(0.0, np.asarray(truth) + 0.1)
        with patch(f"{TARGET}.train", return_value=result):
            frame = run_crosstalk_study(spec, ["ipinn", "dnn"], 100, ctx)
        assert len(frame) == 2 * 6
        assert frame["squared_error"].tolist() == pytest.approx([0.01] * 12)
        first = frame.iloc[0]
        assert (first["kind"], first["i"], first["j"], first["parameter"]) == ("eta", 1, 2, "eta_12")
        assert frame.iloc[3]["kind"] == "epsilon"

    def test_cached_cell(self, ctx):
        """A stored squared-error vector is reused without training."""
        spec = CrosstalkSpec.reference(2)
        ctx.store.record("crosstalk/2/ipinn/N=100", {"cell": "c", "mse": 0.0, "squared_error": [0.2, 0.3]})
        with patch(f"{TARGET}.train") as mock:
            frame = run_crosstalk_study(spec, ["ipinn"], 100, ctx)
        mock.assert_not_called()
        assert frame["squared_error"].tolist() == [0.2, 0.3]


class TestDriftExperiment:
    """Tests for online re-learning after a parameter change."""

    def test_trace_shape(self, ctx):
        """One row per batch with the estimate after it."""
        ctx.config = TrainConfig(
            hidden=(4,), epochs=2, constraint_points=3, log_every=0, theta_candidates=0, theta_warmup=0
        )
        spec = DriftSpec(batch_size=5, batches=2)
        trace = run_drift_experiment(spec, "ipinn", ctx, pretrain_queries=10, online_epochs=2)
        assert list(trace.frame.columns) == ["batch", "mse", "omega_1", "omega_2", "epsilon"]
        assert trace.frame["batch"].tolist() == [1, 2]
        assert np.isfinite(trace.pretrain_mse)

    def test_store_is_independent(self):
        """Fresh contexts do not share finished cells."""
        a = StudyContext(grid=QueryGrid(n=1), config=TrainConfig())
        b = StudyContext(grid=QueryGrid(n=1), config=TrainConfig())
        a.store.record("k", {"mse": 1.0})
        assert b.store.lookup("k") is None
        assert isinstance(a.store, CellStore)


class TestCRCalibration:
    """Tests for the CR-gate drivers."""

    def test_noiseless_and_noisy_runs(self, ctx, fake_sample):
        """Both variants are swept, the noisy one with learned channels."""
        seen = []

        def record(learner, scenario, data, config):
            seen.append((scenario.name, scenario.learn_noise, config.noise_t0))
            return quadratic_train(learner, scenario, data, config)

        with patch(f"{TARGET}.train", side_effect=record):
            runs = run_cr_calibration(CRGateSpec(t0=0.1), "dnn", [10, 100], ctx)
        assert set(runs) == {"noiseless", "noisy"}
        assert runs["noisy"].label == "dnn noisy"
        assert runs["noiseless"].exponent == pytest.approx(2.0)
        assert {(name, learn) for name, learn, _ in seen} == {("cr-gate", False), ("cr-gate-noisy", True)}
        assert {t0 for _, _, t0 in seen} == {0.1}

    def test_distribution_fit_uses_exact_weights(self, ctx):
        """The whole grid is covered once with the requested total weight."""
        with patch(f"{TARGET}.train", return_value=fake_result(0.0)) as mock:
            run_cr_distribution_fit(CRGateSpec(), "ipinn", ctx, shots=1e4)
        data = mock.call_args.args[2]
        assert len(data) == len(ctx.grid.queries())
        assert data.total_shots == pytest.approx(1e4)
        assert mock.call_args.args[1].noise is None

    def test_distribution_study_table(self, ctx):
        """One row per learner and variant with the estimates as columns."""
        result = EstimationResult(theta_hat=np.array([0.1, 0.2]), names=["c_zi", "c_zx"], mse=1e-5)
        with patch(f"{TARGET}.run_cr_distribution_fit", return_value=result) as mock:
            frame = run_cr_distribution_study(CRGateSpec(), ["ipinn", "dnn"], ctx, shots=500)
        assert list(frame.columns) == ["learner", "variant", "mse", "c_zi", "c_zx"]
        assert list(zip(frame["learner"], frame["variant"])) == [
            ("ipinn", "noiseless"), ("ipinn", "noisy"), ("dnn", "noiseless"), ("dnn", "noisy"),
        ]
        assert {call.kwargs["shots"] for call in mock.call_args_list} == {500}
        assert [call.kwargs["noisy"] for call in mock.call_args_list] == [False, True, False, True]

    def test_distribution_study_failure(self, ctx):
        """A failed fit aborts with the other rows kept."""

        def fit(spec, learner, ctx, noisy=False, shots=1e4):
            if noisy:
                raise NonFiniteLossError("data", 1, float("nan"))
            return fake_result(1e-6)

        with patch(f"{TARGET}.run_cr_distribution_fit", side_effect=fit):
            with pytest.raises(StudyAborted) as info:
                run_cr_distribution_study(CRGateSpec(), ["ipinn"], ctx)
        assert info.value.partial["variant"].tolist() == ["noiseless"]


def fake_drift(fail_seed=None):
    def run(spec, learner, ctx, pretrain_queries, online_epochs, seed):
        if seed == fail_seed:
            raise NonFiniteLossError("physics", 4, float("inf"))
        batches = pd.DataFrame({"batch": [1, 2], "mse": [0.1 / (seed + 1), 0.01], "epsilon": [1.9, 2.0]})
        return DriftTrace(0.5, batches)
    return run


class TestDriftStudy:
    """Tests for the per-seed drift cells."""

    def test_long_table(self, ctx):
        """Batch 0 is the pre-training error; rows carry learner and seed."""
        with patch(f"{TARGET}.run_drift_experiment", side_effect=fake_drift()):
            frame = run_drift_study(DriftSpec(), ["ipinn", "dnn"], ctx)
        assert len(frame) == 2 * ctx.repeats * 3
        first = frame[(frame["learner"] == "dnn") & (frame["seed"] == 1)]
        assert first["batch"].tolist() == [0, 1, 2]
        assert first["mse"].tolist() == pytest.approx([0.5, 0.05, 0.01])

    def test_failed_seed_keeps_others(self, ctx):
        """A diverging seed is logged and the finished traces come back as partial results."""
        with patch(f"{TARGET}.run_drift_experiment", side_effect=fake_drift(fail_seed=1)):
            with pytest.raises(StudyAborted) as info:
                run_drift_study(DriftSpec(), ["ipinn"], ctx)
        assert "drift/ipinn/seed=1" in str(info.value)
        assert set(info.value.partial["seed"]) == {0}

    def test_finished_cells_skipped(self, ctx):
        """A rerun against the same store only repeats the failed seed."""
        with patch(f"{TARGET}.run_drift_experiment", side_effect=fake_drift(fail_seed=1)):
            with pytest.raises(StudyAborted):
                run_drift_study(DriftSpec(), ["ipinn"], ctx)
        with patch(f"{TARGET}.run_drift_experiment", side_effect=fake_drift()) as mock:
            frame = run_drift_study(DriftSpec(), ["ipinn"], ctx)
        assert [call.args[5] for call in mock.call_args_list] == [1]
        assert sorted(set(frame["seed"])) == [0, 1]

    def test_unknown_learner(self, ctx):
        """Learners are checked before any cell runs."""
        with pytest.raises(ConfigError):
            run_drift_study(DriftSpec(), ["svm"], ctx)


def spin_chain(n):
    return Scenario("spin-chain", build_spin_chain(SpinChainSpec.uniform(n)))


def random_grid(n, **kwargs):
    return QueryGrid(n=n, selection="random", **kwargs)


@pytest.mark.slow
class TestDeskScaleRecovery:
    """End-to-end recovery of the two-spin chain from single shots."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ipinn_two_spins(self, seed):
        """J = 1 and omega = 0.5 from 1e4 random single-shot queries."""
        scenario = spin_chain(2)
        data = sample(scenario, random_grid(2), 10_000, seed)
        assert train("ipinn", scenario, data, TrainConfig(seed=seed, log_every=0)).mse < 1e-2


@pytest.mark.slow
class TestScalingExponents:
    """Query-count scaling of both learners on the four-spin chain."""

    def test_ipinn_beats_dnn(self):
        """iPINN-HL scales at least as fast as DNN-HL and at least as N**-1.5."""
        ctx = StudyContext(grid=random_grid(4), config=TrainConfig(log_every=0), repeats=2, jobs=2)
        counts = [1_000, 10_000, 100_000]
        ipinn = run_scaling_experiment(spin_chain(4), "ipinn", counts, ctx)
        dnn = run_scaling_experiment(spin_chain(4), "dnn", counts, ctx)
        assert ipinn.exponent >= 1.5
        assert ipinn.exponent >= dnn.exponent


@pytest.mark.slow
class TestGridSpacingTrend:
    """Finer time grids help at a fixed budget."""

    def test_fine_grid_wins(self):
        """MSE at dt = 0.02 is below MSE at dt = 0.2."""
        ctx = StudyContext(grid=random_grid(2), config=TrainConfig(log_every=0), repeats=2)
        table = run_dt_study(spin_chain(2), "ipinn", [1_000], [0.2, 0.02], ctx)
        assert table.loc[1_000, 0.02] < table.loc[1_000, 0.2]


@pytest.mark.slow
class TestCollocationSaturation:
    """More collocation points stop paying off."""

    def test_diminishing_returns(self):
        """Going from 100 to 200 points gains less than going from 10 to 50."""
        ctx = StudyContext(grid=random_grid(2), config=TrainConfig(log_every=0), repeats=2)
        study = run_constraint_point_study(spin_chain(2), [10, 50, 100, 200], [1_000], ctx)
        mse = dict(zip(study.frame["P"], study.frame["mse"]))
        assert mse[100] - mse[200] < mse[10] - mse[50]


@pytest.mark.slow
class TestDriftTracking:
    """Online re-learning after a sudden parameter change."""

    def test_recovers_within_ten_batches(self):
        """At least two of three seeds reach MSE < 1e-2 within ten batches of 300."""
        spec = DriftSpec(before=(0.5, 0.5, 1.0), after=(1.5, 1.5, 2.0), batch_size=300, batches=10)
        ctx = StudyContext(grid=random_grid(2), config=TrainConfig(log_every=0), repeats=3)
        frame = run_drift_study(spec, ["ipinn"], ctx)
        online = frame[frame["batch"] > 0]
        recovered = online.groupby("seed")["mse"].min() < 1e-2
        assert recovered.sum() >= 2


@pytest.mark.slow
class TestCRDistributionFit:
    """The CR gate from exact outcome distributions."""

    def test_noiseless_fit(self):
        """iPINN-HL lands within 1e-4 of the seven coefficients."""
        ctx = StudyContext(grid=QueryGrid(n=2), config=TrainConfig(log_every=0), repeats=1)
        assert run_cr_distribution_fit(CRGateSpec(), "ipinn", ctx, shots=1e4).mse < 1e-4
