"""Command-line front end.

Verbs::

    hamiltonian-learning generate --config run.toml
    hamiltonian-learning fit --config run.toml [--resume]
    hamiltonian-learning study --config sweep.toml --jobs 4 [--resume]
    hamiltonian-learning report runs/sweep

Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration error,
3 non-finite loss, 4 I/O failure, 5 study finished with failed cells.
"""

import argparse
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional, Sequence

from .config import RunConfig, dumps_config, load_config, resolve_output
from .dataset_io import read_dataset, write_dataset
from .dnn import DNNTrainer
from .exceptions import (
    CheckpointError,
    ConfigError,
    DatasetError,
    HamiltonianLearningError,
    NonFiniteLossError,
    SpecError,
    StudyAborted,
)
from .experiments import (
    ScalingRun,
    run_constraint_point_study,
    run_cr_calibration,
    run_crosstalk_study,
    run_cr_distribution_study,
    run_drift_study,
    run_dt_study,
    run_scaling_experiment,
)
from .learners import EstimationResult, IPINNTrainer
from .queries import GroupedDataset, expected_groups, generate_dataset, group_dataset
from .reporting import (
    DirectoryCellStore,
    RunDirectory,
    plot_constraint_points,
    plot_crosstalk,
    plot_drift,
    plot_dt_table,
    plot_losses,
    plot_scaling,
    render_bundle,
    run_metadata,
    scaling_frame,
)
from .scenarios import Scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NON_FINITE = 3
EXIT_IO = 4
EXIT_STUDY_FAILED = 5

LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(message)s"
DATASET_FILE = "dataset.txt"
CHECKPOINT_FILE = "checkpoint.npz"
CHECKPOINT_EVERY = 500


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration.")
    common.add_argument("--seed", type=int, help="Override the dataset and training seed.")
    common.add_argument("--out", help="Output directory (default: config, then $HAMILTONIAN_LEARNING_OUTPUT).")
    common.add_argument("--jobs", type=int, default=1, help="Worker threads.")
    common.add_argument("--resume", action="store_true", help="Continue from the checkpoint or finished cells.")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging.")

    parser = argparse.ArgumentParser(
        prog="hamiltonian-learning",
        description="Learn Hamiltonian coefficients from single-shot measurement data.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("generate", parents=[common], help="Simulate a dataset and its manifest.")
    verbs.add_parser("fit", parents=[common], help="Train one learner on one dataset.")
    verbs.add_parser("study", parents=[common], help="Run a parameter sweep.")
    report = verbs.add_parser("report", parents=[common], help="Redraw plots from a run's CSV files.")
    report.add_argument("directory", nargs="?", help="Run directory (default: the output directory).")
    return parser


def apply_overrides(config: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return config
    return replace(
        config,
        dataset=replace(config.dataset, seed=seed),
        train=replace(config.train, seed=seed),
    )


def load_data(config: RunConfig, scenario: Scenario, jobs: int = 1) -> GroupedDataset:
    """
    The run's grouped dataset: loaded, exact distributions, or freshly sampled.

    Raises:
        ConfigError: If a loaded dataset's qubit count differs from the scenario's.
    """
    n = scenario.truth.n
    if config.dataset.path:
        data = group_dataset(read_dataset(config.dataset.path))
        if data.n != n:
            raise ConfigError("dataset.path", f"dataset has {data.n} qubits, scenario has {n}")
        return data
    grid = config.dataset.grid(n)
    if config.dataset.distribution:
        return expected_groups(scenario.truth, scenario.noise, grid, config.dataset.shots_per_query, config.dataset.seed)
    entries = generate_dataset(
        scenario.truth, scenario.noise, grid, config.dataset.shots_per_query, config.dataset.seed, jobs
    )
    return group_dataset(entries)


def _train_config(config: RunConfig, scenario: Scenario):
    train = replace(config.train, learn_noise=scenario.learn_noise)
    if scenario.noise is not None and scenario.noise[1] is not None:
        train = replace(train, noise_t0=scenario.noise[1].t0)
    return train


def cmd_generate(config: RunConfig, out: Path, jobs: int = 1) -> Path:
    """
    Write ``dataset.txt`` and ``manifest.json`` into ``out``.

    Raises:
        ConfigError: For distribution-level datasets, which have no single-shot form.
    """
    if config.dataset.distribution:
        raise ConfigError("dataset.distribution", "generate writes single-shot entries", [False])
    scenario = config.scenario.build()
    grid = config.dataset.grid(scenario.truth.n)
    entries = generate_dataset(
        scenario.truth, scenario.noise, grid, config.dataset.shots_per_query, config.dataset.seed, jobs
    )
    run = RunDirectory(out)
    path = write_dataset(entries, run.path(DATASET_FILE), scenario.truth.n)
    manifest = {
        "scenario": config.scenario.name,
        "params": config.scenario.params,
        "truth": dict(zip(scenario.truth.parameter_names(), scenario.truth.theta)),
        "seed": config.dataset.seed,
        "grid": asdict(grid),
        "entries": len(entries),
    }
    if scenario.noise is not None:
        readout, depolarization = scenario.noise
        manifest["noise"] = {
            "q": readout.q if readout is not None else None,
            "mu": float(depolarization.mu) if depolarization is not None else None,
        }
    run.write_json("manifest.json", manifest)
    logger.info("Wrote %d entries to %s", len(entries), path)
    return path


def cmd_fit(config: RunConfig, out: Path, jobs: int = 1, resume: bool = False) -> EstimationResult:
    """
    Train ``config.learner`` and write its result bundle.

    iPINN-HL checkpoints every ``CHECKPOINT_EVERY`` epochs; ``resume``
    continues from the last checkpoint to the configured epoch count.
    """
    start = time.perf_counter()
    scenario = config.scenario.build()
    data = load_data(config, scenario, jobs)
    train = _train_config(config, scenario)
    truth = scenario.truth_vector()
    run = RunDirectory(out, config.report.dpi, config.report.plots)
    run.write_text("config.toml", dumps_config(config))
    checkpoint = run.path(CHECKPOINT_FILE)

    if config.learner == "ipinn":
        trainer = IPINNTrainer.from_data(scenario.truth, data, train, truth)
        if resume and checkpoint.exists():
            trainer.restore(checkpoint)
        elif resume:
            logger.warning("No checkpoint at %s; starting from scratch", checkpoint)
        while trainer.epoch < train.epochs:
            trainer.fit(data, min(CHECKPOINT_EVERY, train.epochs - trainer.epoch))
            trainer.save(checkpoint)
        result = trainer.result()
    else:
        if resume:
            logger.warning("DNN-HL runs are not checkpointed; starting from scratch")
        result = DNNTrainer(scenario.truth, train, truth).fit(data, train.epochs)

    run.write_csv("losses.csv", result.to_frame())
    run.save_figure("losses.svg", plot_losses(result.to_frame()))
    run.write_json("result.json", {
        "learner": config.learner,
        "scenario": config.scenario.name,
        "estimate": dict(zip(result.names, result.estimate_vector())),
        "truth": dict(zip(result.names, truth)),
        "mse": result.mse,
        "clamp_count": result.clamp_count,
        "skipped_steps": result.skipped_steps,
    })
    run.write_json("metadata.json", run_metadata(train.seed, time.perf_counter() - start, groups=len(data)))
    logger.info("Final estimate %s (mse %.6g)", dict(zip(result.names, result.estimate_vector())), result.mse)
    return result


def _require_scenario(config: RunConfig, name: str) -> None:
    if config.scenario.name != name:
        raise ConfigError("scenario.name", f"study {config.study.kind!r} needs scenario {name!r}", [name])


def cmd_study(config: RunConfig, out: Path, jobs: int = 1, resume: bool = False) -> RunDirectory:
    """
    Run ``config.study.kind`` and write its CSV and SVG bundle.

    Finished cells are appended to ``cells.jsonl`` as they complete; with
    ``resume`` they are skipped on the next run.

    Raises:
        StudyAborted: After writing what finished, if any cell failed.
    """
    start = time.perf_counter()
    run = RunDirectory(out, config.report.dpi, config.report.plots)
    cells = run.path(DirectoryCellStore.FILENAME)
    if cells.exists() and not resume:
        cells.unlink()
    ctx = config.study_context(jobs, run.cell_store())
    run.write_text("config.toml", dumps_config(config))
    study = config.study
    failures: List[StudyAborted] = []

    def record(exc: StudyAborted) -> None:
        logger.error("%s", exc)
        failures.append(exc)

    if study.kind in ("scaling", "cr-calibration"):
        runs: List[ScalingRun] = []
        for learner in study.learners:
            try:
                if study.kind == "scaling":
                    runs.append(run_scaling_experiment(config.scenario.build(), learner, study.query_counts, ctx))
                else:
                    _require_scenario(config, "cr-gate")
                    runs.extend(run_cr_calibration(config.scenario.spec(), learner, study.query_counts, ctx).values())
            except StudyAborted as exc:
                if isinstance(exc.partial, ScalingRun):
                    runs.append(exc.partial)
                record(exc)
        if runs:
            frame = scaling_frame(runs)
            run.write_csv("scaling.csv", frame)
            run.save_figure("scaling.svg", plot_scaling(frame))
        if study.kind == "cr-calibration" and study.distribution_shots > 0:
            try:
                fits = run_cr_distribution_study(config.scenario.spec(), study.learners, ctx, study.distribution_shots)
            except StudyAborted as exc:
                fits = exc.partial
                record(exc)
            run.write_csv("cr_distribution.csv", fits)
    elif study.kind == "dt":
        try:
            table = run_dt_study(config.scenario.build(), config.learner, study.settings_counts, study.dts, ctx)
        except StudyAborted as exc:
            table = exc.partial
            record(exc)
        run.write_csv("dt.csv", table, index=True)
        run.save_figure("dt.svg", plot_dt_table(table))
    elif study.kind == "constraint-points":
        try:
            result = run_constraint_point_study(config.scenario.build(), study.constraint_points, study.query_counts, ctx)
        except StudyAborted as exc:
            result = exc.partial
            record(exc)
        run.write_csv("constraint_points.csv", result.frame)
        run.write_json("saturation.json", {"saturation": result.saturation, "slopes": result.slopes})
        run.save_figure("constraint_points.svg", plot_constraint_points(result.frame))
    elif study.kind == "drift":
        _require_scenario(config, "drift")
        try:
            frame = run_drift_study(
                config.scenario.spec(), study.learners, ctx, study.pretrain_queries, study.online_epochs
            )
        except StudyAborted as exc:
            frame = exc.partial
            record(exc)
        run.write_csv("drift.csv", frame)
        if len(frame):
            run.save_figure("drift.svg", plot_drift(frame))
    else:
        _require_scenario(config, "crosstalk")
        try:
            frame = run_crosstalk_study(config.scenario.spec(), study.learners, max(study.query_counts), ctx)
        except StudyAborted as exc:
            frame = exc.partial
            record(exc)
        run.write_csv("crosstalk.csv", frame)
        if len(frame):
            run.save_figure("crosstalk.svg", plot_crosstalk(frame))

    run.write_json("metadata.json", run_metadata(config.train.seed, time.perf_counter() - start, study=study.kind))
    if failures:
        raise StudyAborted("; ".join(str(f) for f in failures), run)
    return run


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        config = load_config(args.config) if args.config else RunConfig()
        config = apply_overrides(config, args.seed)
        out = resolve_output(config, args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs", f"must be >= 1, got {args.jobs}")
        if args.verb == "generate":
            cmd_generate(config, out, args.jobs)
        elif args.verb == "fit":
            cmd_fit(config, out, args.jobs, args.resume)
        elif args.verb == "study":
            cmd_study(config, out, args.jobs, args.resume)
        else:
            render_bundle(args.directory or out)
    except (ConfigError, SpecError) as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        logger.error("Training aborted: %s", exc)
        return EXIT_NON_FINITE
    except (DatasetError, CheckpointError, OSError) as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_IO
    except StudyAborted as exc:
        logger.error("Study finished with failures: %s", exc)
        return EXIT_STUDY_FAILED
    except HamiltonianLearningError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
