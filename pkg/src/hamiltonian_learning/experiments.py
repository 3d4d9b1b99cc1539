"""Study drivers: scaling sweeps, grid-spacing and collocation studies, drift and CR calibration.

Each sweep is a list of cells; a cell trains one learner on one dataset size
for ``repeats`` seeds and reports the seed-averaged MSE. Completed cells can be
persisted to a store and are skipped when the sweep is rerun.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from .dnn import DNNTrainer, dnn_train
from .exceptions import ConfigError, HamiltonianLearningError, StudyAborted
from .learners import EstimationResult, IPINNTrainer, TrainConfig, ipinn_train, mse
from .queries import GroupedDataset, QueryGrid, expected_groups, generate_dataset, group_dataset
from .scenarios import (
    CRGateSpec,
    CrosstalkSpec,
    DriftSpec,
    Scenario,
    build_cr_gate,
    build_crosstalk,
    build_drift,
)
from .states import LocalUnitary

logger = logging.getLogger(__name__)

LEARNERS = ("ipinn", "dnn")
SATURATION_THRESHOLD = 0.05


def fit_power_law(query_counts: Sequence[float], errors: Sequence[float]) -> Tuple[float, float, float, float]:
    """
    Least-squares line through ``(log10 N, log10 MSE)``.

    Returns:
        ``(exponent, intercept, stderr, residual)`` where ``MSE ~ 10**intercept * N**-exponent``
        and ``residual`` is the RMS deviation in log10 units.

    Example:
        >>> round(fit_power_law([1e4, 1e6], [1e-2, 1e-6])[0], 12)
        2.0
    """
    x = np.log10(np.asarray(query_counts, dtype=np.float64))
    y = np.log10(np.asarray(errors, dtype=np.float64))
    if x.size < 2:
        raise ConfigError("study.query_counts", "need at least two points to fit a slope")
    fit = linregress(x, y)
    residual = float(np.sqrt(np.mean((y - (fit.intercept + fit.slope * x)) ** 2)))
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    return -float(fit.slope), float(fit.intercept), stderr, residual


@dataclass
class ScalingRun:
    """
    MSE against query count with its fitted power law ``MSE ~ N**-exponent``.

    Attributes:
        query_counts: Single-shot dataset sizes.
        mse: Seed-averaged MSE per count.
        exponent: Fitted scaling exponent.
        stderr: Standard error of the exponent.
        residual: RMS fit residual in log10 units.
        label: Learner/variant name for legends.
    """

    query_counts: List[int]
    mse: List[float]
    exponent: float = float("nan")
    intercept: float = float("nan")
    stderr: float = float("nan")
    residual: float = float("nan")
    label: str = ""

    @classmethod
    def fit(cls, query_counts: Sequence[int], errors: Sequence[float], label: str = "") -> "ScalingRun":
        exponent, intercept, stderr, residual = fit_power_law(query_counts, errors)
        return cls(list(query_counts), list(errors), exponent, intercept, stderr, residual, label)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "label": self.label,
            "query_count": self.query_counts,
            "mse": self.mse,
            "exponent": self.exponent,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "residual": self.residual,
        })


class CellStore:
    """In-memory record of finished cells; ``RunDirectory`` provides the persistent one."""

    def __init__(self) -> None:
        self.cells: Dict[str, dict] = {}

    def lookup(self, key: str) -> Optional[dict]:
        return self.cells.get(key)

    def record(self, key: str, row: dict) -> None:
        self.cells[key] = row


@dataclass
class StudyContext:
    """
    Shared knobs of a sweep.

    Attributes:
        grid: Base query grid; ``num_queries`` is set per cell and its
            ``selection`` decides how settings are drawn.
        config: Training hyperparameters; the seed is offset per repeat.
        repeats: Independent seeds per cell.
        jobs: Cells evaluated concurrently.
        store: Finished-cell record used to skip work on reruns.
        shots_per_query: Shots per distinct setting; a cell of size N draws
            ``N // shots_per_query`` settings.
    """

    grid: QueryGrid
    config: TrainConfig
    repeats: int = 3
    jobs: int = 1
    store: CellStore = field(default_factory=CellStore)
    shots_per_query: int = 1

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError("study.repeats", "must be >= 1")
        if self.shots_per_query < 1:
            raise ConfigError("dataset.shots_per_query", "must be >= 1")


def train(
    learner: str,
    scenario: Scenario,
    data: GroupedDataset,
    config: TrainConfig,
) -> EstimationResult:
    """Dispatch one training run and score it against the scenario truth."""
    config = replace(config, learn_noise=scenario.learn_noise)
    if learner == "ipinn":
        return ipinn_train(scenario.truth, data, config, scenario.truth_vector())
    if learner == "dnn":
        return dnn_train(scenario.truth, data, config, scenario.truth_vector())
    raise ConfigError("learner", f"unknown learner {learner!r}", LEARNERS)


def sample(
    scenario: Scenario, grid: QueryGrid, queries: int, seed: int, shots_per_query: int = 1
) -> GroupedDataset:
    """
    ``queries`` single-shot entries: ``queries // shots_per_query`` settings
    chosen by ``grid.selection``, each measured ``shots_per_query`` times.

    Raises:
        ConfigError: If fewer than one setting would be drawn.
    """
    settings = queries // shots_per_query
    if settings < 1:
        raise ConfigError("dataset.shots_per_query", f"{shots_per_query} shots per query exceed a budget of {queries}")
    grid = replace(grid, num_queries=settings)
    return group_dataset(generate_dataset(scenario.truth, scenario.noise, grid, shots_per_query, seed))


def _run_cell(key: str, ctx: StudyContext, work: Callable[[int], EstimationResult]) -> dict:
    errors = [work(ctx.config.seed + r).mse for r in range(ctx.repeats)]
    return {"cell": key, "mse": float(np.mean(errors)), "mse_seeds": errors}


def _guarded(key: str, ctx: StudyContext, compute: Callable[[], dict]) -> dict:
    done = ctx.store.lookup(key)
    if done is not None:
        logger.info("Skipping finished cell %s", key)
        return done
    try:
        row = compute()
    except HamiltonianLearningError as exc:
        logger.error("Cell %s failed: %s", key, exc)
        return {"cell": key, "mse": float("nan"), "error": str(exc)}
    ctx.store.record(key, row)
    logger.info("Cell %s: mse=%.6g", key, row["mse"])
    return row


def _map_cells(cells: List[Tuple[str, Callable[[], dict]]], ctx: StudyContext) -> List[dict]:
    """Evaluate cells, keeping going past failures; failed cells carry ``error``."""

    def guarded(cell: Tuple[str, Callable[[], dict]]) -> dict:
        return _guarded(cell[0], ctx, cell[1])

    if ctx.jobs > 1:
        with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
            return list(pool.map(guarded, cells))
    return [guarded(cell) for cell in cells]


def _sweep(cells: List[Tuple[str, Callable[[int], EstimationResult]]], ctx: StudyContext) -> List[dict]:
    """Seed-averaged cells through ``_map_cells``."""
    return _map_cells(
        [(key, lambda key=key, work=work: _run_cell(key, ctx, work)) for key, work in cells], ctx
    )


def check_learner(learner: str) -> None:
    if learner not in LEARNERS:
        raise ConfigError("learner", f"unknown learner {learner!r}", LEARNERS)


def _raise_on_failures(rows: List[dict], partial) -> None:
    failed = [row["cell"] for row in rows if "error" in row]
    if failed:
        raise StudyAborted(f"{len(failed)} cell(s) failed: {', '.join(failed)}", partial)


def run_scaling_experiment(
    scenario: Scenario,
    learner: str,
    query_counts: Sequence[int],
    ctx: StudyContext,
) -> ScalingRun:
    """
    Seed-averaged MSE per query count, with the fitted exponent.

    Raises:
        ConfigError: With fewer than two query counts.
        StudyAborted: If any cell failed; ``partial`` holds the finished counts.
    """
    check_learner(learner)
    if len(query_counts) < 2:
        raise ConfigError("study.query_counts", "need at least two query counts")
    cells = [
        (
            f"scaling/{scenario.name}/{learner}/N={n}",
            lambda seed, n=n: train(learner, scenario, sample(scenario, ctx.grid, n, seed, ctx.shots_per_query), replace(ctx.config, seed=seed)),
        )
        for n in query_counts
    ]
    rows = _sweep(cells, ctx)
    ok = [(n, row["mse"]) for n, row in zip(query_counts, rows) if "error" not in row]
    if len(ok) < len(rows):
        partial = ScalingRun([n for n, _ in ok], [e for _, e in ok], label=learner)
        _raise_on_failures(rows, partial)
    return ScalingRun.fit([n for n, _ in ok], [e for _, e in ok], label=learner)


def run_dt_study(
    scenario: Scenario,
    learner: str,
    settings_counts: Sequence[int],
    dts: Sequence[float],
    ctx: StudyContext,
) -> pd.DataFrame:
    """
    MSE table with one row per dataset size and one column per time spacing.

    The dataset size counts single-shot entries (distinct settings times
    shots). The grid keeps its duration; only ``dt`` changes.
    """
    check_learner(learner)
    cells, index = [], []
    for count in settings_counts:
        for dt in dts:
            grid = replace(ctx.grid, dt=float(dt))
            cells.append((
                f"dt/{scenario.name}/{learner}/N={count}/dt={dt:g}",
                lambda seed, g=grid, c=count: train(learner, scenario, sample(scenario, g, c, seed, ctx.shots_per_query), replace(ctx.config, seed=seed)),
            ))
            index.append((count, float(dt)))
    rows = _sweep(cells, ctx)
    frame = pd.DataFrame(
        [{"settings": c, "dt": dt, "mse": row["mse"]} for (c, dt), row in zip(index, rows)]
    )
    table = frame.pivot(index="settings", columns="dt", values="mse")
    _raise_on_failures(rows, table)
    return table


@dataclass
class ConstraintPointStudy:
    """
    MSE against collocation-point count P.

    Attributes:
        frame: Long table of ``(query_count, P, mse)``.
        saturation: First P per query count whose improvement over the
            previous P fell below 5 percent (``None`` if never).
        slopes: Fitted ``-d log MSE / d log P`` over the pre-saturation points.
    """

    frame: pd.DataFrame
    saturation: Dict[int, Optional[int]]
    slopes: Dict[int, float]


def saturation_point(p_values: Sequence[int], errors: Sequence[float]) -> Optional[int]:
    """
    First P whose relative MSE improvement over its predecessor is below 5 percent.

    Example:
        >>> saturation_point([10, 50, 100], [1.0, 0.5, 0.49])
        100
    """
    for k in range(1, len(p_values)):
        if (errors[k - 1] - errors[k]) / errors[k - 1] < SATURATION_THRESHOLD:
            return int(p_values[k])
    return None


def run_constraint_point_study(
    scenario: Scenario,
    p_values: Sequence[int],
    query_counts: Sequence[int],
    ctx: StudyContext,
) -> ConstraintPointStudy:
    """
    Sweep the number of collocation points P of iPINN-HL at fixed dataset sizes.

    Raises:
        ConfigError: If any P is below 1.
    """
    if any(p < 1 for p in p_values):
        raise ConfigError("study.constraint_points", "P must be >= 1")
    p_values = sorted(int(p) for p in p_values)
    cells, index = [], []
    for count in query_counts:
        for p in p_values:
            cells.append((
                f"points/{scenario.name}/N={count}/P={p}",
                lambda seed, c=count, p=p: train(
                    "ipinn", scenario, sample(scenario, ctx.grid, c, seed, ctx.shots_per_query),
                    replace(ctx.config, seed=seed, constraint_points=p),
                ),
            ))
            index.append((count, p))
    rows = _sweep(cells, ctx)
    frame = pd.DataFrame([{"query_count": c, "P": p, "mse": row["mse"]} for (c, p), row in zip(index, rows)])
    saturation, slopes = {}, {}
    for count, part in frame.groupby("query_count"):
        errors = part["mse"].tolist()
        saturation[int(count)] = saturation_point(p_values, errors)
        stop = p_values.index(saturation[int(count)]) if saturation[int(count)] else len(p_values)
        points = [(p, e) for p, e in zip(p_values[:max(stop, 2)], errors) if np.isfinite(e) and e > 0]
        slopes[int(count)] = fit_power_law(*zip(*points))[0] if len(points) >= 2 else float("nan")
    study = ConstraintPointStudy(frame, saturation, slopes)
    _raise_on_failures(rows, study)
    return study


@dataclass
class DriftTrace:
    """MSE against the post-change truth after pre-training and after each online batch."""

    pretrain_mse: float
    frame: pd.DataFrame


def run_drift_experiment(
    spec: DriftSpec,
    learner: str,
    ctx: StudyContext,
    pretrain_queries: int = 3000,
    online_epochs: int = 200,
    seed: Optional[int] = None,
) -> DriftTrace:
    """
    Pre-train on the initial parameters, switch the truth, then continue
    training on ``spec.batches`` fresh batches of ``spec.batch_size`` queries.

    Weights, theta and optimizer state carry over between batches.
    """
    check_learner(learner)
    seed = ctx.config.seed if seed is None else seed
    config = replace(ctx.config, seed=seed, learn_noise=False)
    before = Scenario("drift-before", build_drift(spec.before))
    after = Scenario("drift-after", build_drift(spec.after))
    truth = after.truth_vector()
    pretrain = sample(before, ctx.grid, pretrain_queries, seed, ctx.shots_per_query)
    if learner == "ipinn":
        if config.duration is None:
            config = replace(config, duration=float(ctx.grid.times().max()))
        preparations = [LocalUnitary.preparation(p) for p in ctx.grid.preparation_labels()]
        trainer = IPINNTrainer(before.truth, config, preparations, truth)
        trainer.fit(pretrain, config.epochs)
    else:
        trainer = DNNTrainer(before.truth, config, truth)
        trainer.fit(pretrain, config.epochs)
    pretrain_mse = mse(trainer.estimate(), truth)
    logger.info("Pre-trained %s: mse vs post-change truth %.6g", learner, pretrain_mse)
    rows = []
    for b in range(1, spec.batches + 1):
        data = sample(after, ctx.grid, spec.batch_size, seed + 7919 * b, ctx.shots_per_query)
        trainer.fit(data, online_epochs)
        estimate = trainer.estimate()
        rows.append({"batch": b, "mse": mse(estimate, truth), **dict(zip(after.truth.parameter_names(), estimate))})
        logger.info("Batch %d: mse=%.6g", b, rows[-1]["mse"])
    columns = ["batch", "mse"] + after.truth.parameter_names()
    return DriftTrace(pretrain_mse, pd.DataFrame(rows, columns=columns))


def run_drift_study(
    spec: DriftSpec,
    learners: Sequence[str],
    ctx: StudyContext,
    pretrain_queries: int = 3000,
    online_epochs: int = 200,
) -> pd.DataFrame:
    """
    Drift traces of every learner and repeat seed as one long table.

    Each ``(learner, seed)`` run is a cell: finished cells come from the
    store, and a failed cell is logged while the others continue. Batch 0
    holds the pre-training MSE against the post-change truth.

    Returns:
        Table ``(learner, seed, batch, mse, <parameters>)``.

    Raises:
        StudyAborted: If any cell failed; ``partial`` holds the finished traces.
    """
    for learner in learners:
        check_learner(learner)

    def work(learner: str, seed: int, key: str) -> dict:
        trace = run_drift_experiment(spec, learner, ctx, pretrain_queries, online_epochs, seed)
        frame = pd.concat([pd.DataFrame({"batch": [0], "mse": [trace.pretrain_mse]}), trace.frame], ignore_index=True)
        frame.insert(0, "seed", seed)
        frame.insert(0, "learner", learner)
        last = float(trace.frame["mse"].iloc[-1]) if len(trace.frame) else trace.pretrain_mse
        return {"cell": key, "mse": last, "trace": frame.to_dict("records")}

    cells = []
    for learner in learners:
        for r in range(ctx.repeats):
            seed = ctx.config.seed + r
            key = f"drift/{learner}/seed={seed}"
            cells.append((key, lambda learner=learner, seed=seed, key=key: work(learner, seed, key)))
    rows = _map_cells(cells, ctx)
    traces = [pd.DataFrame(row["trace"]) for row in rows if "error" not in row]
    frame = pd.concat(traces, ignore_index=True) if traces else pd.DataFrame(columns=["learner", "seed", "batch", "mse"])
    _raise_on_failures(rows, frame)
    return frame


def cr_scenario(spec: CRGateSpec, noisy: bool) -> Scenario:
    """The CR gate with its channels (noisy) or without them (seven parameters only)."""
    if noisy:
        return Scenario("cr-gate-noisy", build_cr_gate(spec), spec.noise(), learn_noise=True)
    return Scenario("cr-gate", build_cr_gate(spec))


def run_cr_calibration(
    spec: CRGateSpec,
    learner: str,
    query_counts: Sequence[int],
    ctx: StudyContext,
) -> Dict[str, ScalingRun]:
    """Noiseless (seven parameters) and noisy (plus q and mu) scaling runs."""
    config = replace(ctx.config, noise_t0=spec.t0)
    ctx = replace(ctx, config=config)
    runs: Dict[str, ScalingRun] = {}
    for variant, noisy in (("noiseless", False), ("noisy", True)):
        run = run_scaling_experiment(cr_scenario(spec, noisy), learner, query_counts, ctx)
        run.label = f"{learner} {variant}"
        runs[variant] = run
    return runs


def run_cr_distribution_fit(
    spec: CRGateSpec,
    learner: str,
    ctx: StudyContext,
    noisy: bool = False,
    shots: float = 1e4,
) -> EstimationResult:
    """Fit the CR gate to exact outcome distributions (no sampling noise)."""
    scenario = cr_scenario(spec, noisy)
    grid = replace(ctx.grid, num_queries=None, selection="round-robin")
    per_query = shots / len(grid.queries())
    data = expected_groups(scenario.truth, scenario.noise, grid, per_query)
    return train(learner, scenario, data, replace(ctx.config, noise_t0=spec.t0))


def run_cr_distribution_study(
    spec: CRGateSpec,
    learners: Sequence[str],
    ctx: StudyContext,
    shots: float = 1e4,
) -> pd.DataFrame:
    """
    Distribution-level CR fits for each learner, noiseless and noisy.

    Returns:
        Table ``(learner, variant, mse, <parameters>)``, one row per fit.

    Raises:
        StudyAborted: If any fit failed; ``partial`` holds the finished rows.
    """
    for learner in learners:
        check_learner(learner)

    def work(learner: str, variant: str, key: str) -> dict:
        result = run_cr_distribution_fit(spec, learner, ctx, noisy=variant == "noisy", shots=shots)
        estimate = dict(zip(result.names, result.estimate_vector().tolist()))
        return {"cell": key, "learner": learner, "variant": variant, "mse": result.mse, **estimate}

    cells = []
    for learner in learners:
        for variant in ("noiseless", "noisy"):
            key = f"cr-distribution/{learner}/{variant}/shots={shots:g}"
            cells.append((key, lambda learner=learner, variant=variant, key=key: work(learner, variant, key)))
    rows = _map_cells(cells, ctx)
    frame = pd.DataFrame([row for row in rows if "error" not in row])
    if len(frame):
        frame = frame.drop(columns="cell")
    _raise_on_failures(rows, frame)
    return frame


def run_crosstalk_study(
    spec: CrosstalkSpec,
    learners: Sequence[str],
    query_count: int,
    ctx: StudyContext,
) -> pd.DataFrame:
    """
    Seed-averaged squared error of every coupling for each learner.

    Returns:
        Long table ``(learner, kind, i, j, parameter, squared_error)`` with
        1-based qubit indices, ready to pivot into heat maps.
    """
    for learner in learners:
        check_learner(learner)
    scenario = Scenario(f"crosstalk-{spec.n}", build_crosstalk(spec))
    names = scenario.truth.parameter_names()
    truth = scenario.truth_vector()
    pairs = spec.pairs()
    rows = []
    for learner in learners:
        errors = []

        def work(seed: int, learner=learner) -> EstimationResult:
            result = train(learner, scenario, sample(scenario, ctx.grid, query_count, seed, ctx.shots_per_query), replace(ctx.config, seed=seed))
            errors.append((result.estimate_vector() - truth) ** 2)
            return result

        key = f"crosstalk/{spec.n}/{learner}/N={query_count}"
        cached = ctx.store.lookup(key)
        if cached is not None and "squared_error" in cached:
            squared = np.asarray(cached["squared_error"])
        else:
            row = _sweep([(key, work)], replace(ctx, store=CellStore()))[0]
            if "error" in row:
                raise StudyAborted(f"crosstalk cell {key} failed: {row['error']}", pd.DataFrame(rows))
            squared = np.mean(errors, axis=0)
            ctx.store.record(key, {**row, "squared_error": squared.tolist()})
        for k, name in enumerate(names):
            i, j = pairs[k % len(pairs)]
            rows.append({
                "learner": learner,
                "kind": "eta" if k < len(pairs) else "epsilon",
                "i": i + 1,
                "j": j + 1,
                "parameter": name,
                "squared_error": float(squared[k]),
            })
    return pd.DataFrame(rows)
