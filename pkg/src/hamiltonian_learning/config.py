"""Run configuration files (TOML).

A single file fully determines a run::

    learner = "ipinn"

    [scenario]
    name = "spin-chain"
    params = { n_spins = 2, s = 1, couplings = [1.0], fields = [0.5] }

    [train]
    epochs = 2000

    [dataset]
    seed = 0
    num_queries = 10000
"""

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ConfigError, HamiltonianLearningError
from .experiments import LEARNERS, StudyContext
from .learners import TrainConfig
from .queries import SELECTIONS, QueryGrid
from .scenarios import (
    CRGateSpec,
    CrosstalkSpec,
    DriftSpec,
    Scenario,
    SpinChainSpec,
    build_cr_gate,
    build_crosstalk,
    build_drift,
    build_spin_chain,
)

logger = logging.getLogger(__name__)

OUTPUT_ENV = "HAMILTONIAN_LEARNING_OUTPUT"
DEFAULT_OUTPUT = "runs"
SCENARIOS = ("spin-chain", "cr-gate", "crosstalk", "drift")
STUDIES = ("scaling", "dt", "constraint-points", "drift", "cr-calibration", "crosstalk")


def _check_keys(section: str, data: Dict[str, Any], cls) -> None:
    known = [f.name for f in fields(cls)]
    for key in data:
        if key not in known:
            raise ConfigError(f"{section}.{key}" if section else key, "unknown field", known)


def _plain(obj) -> Dict[str, Any]:
    """Dataclass fields as a TOML-ready dict, dropping ``None``."""
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


@dataclass
class ScenarioConfig:
    """Scenario selector and its parameter table."""

    name: str = "spin-chain"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in SCENARIOS:
            raise ConfigError("scenario.name", f"got {self.name!r}", SCENARIOS)

    def spec(self):
        """The scenario's parameter dataclass."""
        p = dict(self.params)
        try:
            if self.name == "spin-chain":
                p.setdefault("n_spins", 2)
                p.setdefault("s", 1)
                p.setdefault("couplings", [1.0] * p["s"])
                p.setdefault("fields", [0.5] * p["s"])
                return SpinChainSpec(**p)
            if self.name == "cr-gate":
                p.pop("noisy", None)
                return CRGateSpec(**p)
            if self.name == "crosstalk":
                if "eta" in p or "epsilon" in p:
                    return CrosstalkSpec(p["eta"], p["epsilon"])
                return CrosstalkSpec.reference(int(p.get("n", 4)))
            return DriftSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()})
        except TypeError as exc:
            raise ConfigError("scenario.params", str(exc)) from exc
        except KeyError as exc:
            raise ConfigError(f"scenario.params.{exc.args[0]}", "missing") from exc

    @property
    def noisy(self) -> bool:
        return bool(self.params.get("noisy", False))

    def build(self) -> Scenario:
        """Ground-truth scenario; the drift scenario uses its pre-change parameters."""
        spec = self.spec()
        if self.name == "spin-chain":
            return Scenario(self.name, build_spin_chain(spec))
        if self.name == "cr-gate":
            if self.noisy:
                return Scenario(self.name, build_cr_gate(spec), spec.noise(), learn_noise=True)
            return Scenario(self.name, build_cr_gate(spec))
        if self.name == "crosstalk":
            return Scenario(self.name, build_crosstalk(spec))
        return Scenario(self.name, build_drift(spec.before))


@dataclass
class DatasetConfig:
    """
    Where the data come from.

    Attributes:
        path: Load an existing dataset file instead of generating one.
        seed: Dataset seed.
        shots_per_query: Single-shot outcomes per query.
        num_queries: Queries drawn from the grid (``None`` covers it once).
        duration: Protocol duration T.
        dt: Time spacing.
        t0: Experiment start time.
        num_preparations: Distinct product preparations.
        selection: ``round-robin`` or ``random``.
        distribution: Use exact outcome distributions instead of samples.
    """

    path: Optional[str] = None
    seed: int = 0
    shots_per_query: int = 1
    num_queries: Optional[int] = None
    duration: float = 2.0
    dt: float = 0.2
    t0: float = 0.0
    num_preparations: int = 4
    selection: str = "round-robin"
    distribution: bool = False

    def __post_init__(self) -> None:
        if self.selection not in SELECTIONS:
            raise ConfigError("dataset.selection", f"got {self.selection!r}", SELECTIONS)
        if self.shots_per_query < 1:
            raise ConfigError("dataset.shots_per_query", "must be >= 1")
        if self.num_queries is not None and self.num_queries < 1:
            raise ConfigError("dataset.num_queries", "must be >= 1")

    def grid(self, n: int) -> QueryGrid:
        try:
            return QueryGrid(
                n=n, duration=self.duration, dt=self.dt, t0=self.t0,
                num_preparations=self.num_preparations, num_queries=self.num_queries,
                selection=self.selection,
            )
        except HamiltonianLearningError as exc:
            raise ConfigError("dataset", str(exc)) from exc


@dataclass
class StudyConfig:
    """Sweep definition for the ``study`` verb."""

    kind: str = "scaling"
    query_counts: List[int] = field(default_factory=lambda: [1000, 3000, 10000, 30000, 100000])
    repeats: int = 3
    dts: List[float] = field(default_factory=lambda: [0.2, 0.1, 0.02])
    settings_counts: List[int] = field(default_factory=lambda: [100, 1000, 10000])
    constraint_points: List[int] = field(default_factory=lambda: [10, 50, 100, 200])
    learners: List[str] = field(default_factory=lambda: list(LEARNERS))
    pretrain_queries: int = 3000
    online_epochs: int = 200
    distribution_shots: float = 1e4

    def __post_init__(self) -> None:
        if self.kind not in STUDIES:
            raise ConfigError("study.kind", f"got {self.kind!r}", STUDIES)
        for learner in self.learners:
            if learner not in LEARNERS:
                raise ConfigError("study.learners", f"got {learner!r}", LEARNERS)
        if self.repeats < 1:
            raise ConfigError("study.repeats", "must be >= 1")
        if self.distribution_shots < 0:
            raise ConfigError("study.distribution_shots", "must be >= 0 (0 skips the distribution fits)")


@dataclass
class ReportConfig:
    plots: bool = True
    dpi: int = 100


@dataclass
class RunConfig:
    """
    Complete description of a run.

    Attributes:
        learner: ``ipinn`` or ``dnn``.
        scenario: Ground-truth family and parameters.
        train: Training hyperparameters.
        dataset: Data source and query grid.
        study: Sweep definition for the ``study`` verb.
        report: Output options.
        output: Output root; falls back to ``$HAMILTONIAN_LEARNING_OUTPUT``.
    """

    learner: str = "ipinn"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    output: Optional[str] = None

    def __post_init__(self) -> None:
        if self.learner not in LEARNERS:
            raise ConfigError("learner", f"got {self.learner!r}", LEARNERS)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build and validate a config from parsed TOML.

        Raises:
            ConfigError: Naming the offending field and the accepted values.
        """
        _check_keys("", data, cls)
        sections = {}
        for name, section_cls in (
            ("scenario", ScenarioConfig), ("dataset", DatasetConfig),
            ("study", StudyConfig), ("report", ReportConfig),
        ):
            table = data.get(name, {})
            if not isinstance(table, dict):
                raise ConfigError(name, "expected a table")
            _check_keys(name, table, section_cls)
            try:
                sections[name] = section_cls(**table)
            except TypeError as exc:
                raise ConfigError(name, str(exc)) from exc
        try:
            train = TrainConfig.from_dict(data.get("train", {}))
        except TypeError as exc:
            raise ConfigError("train", str(exc)) from exc
        return cls(
            learner=data.get("learner", "ipinn"),
            train=train,
            output=data.get("output"),
            **sections,
        )

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"learner": self.learner}
        if self.output is not None:
            out["output"] = self.output
        out["scenario"] = {"name": self.scenario.name, "params": dict(self.scenario.params)}
        out["train"] = self.train.to_dict()
        out["dataset"] = _plain(self.dataset)
        out["study"] = _plain(self.study)
        out["report"] = _plain(self.report)
        return out

    def study_context(self, jobs: int = 1, store=None) -> StudyContext:
        scenario = self.scenario.build()
        kwargs = {"store": store} if store is not None else {}
        return StudyContext(
            grid=self.dataset.grid(scenario.truth.n),
            config=self.train,
            repeats=self.study.repeats,
            jobs=jobs,
            shots_per_query=self.dataset.shots_per_query,
            **kwargs,
        )


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read a TOML run configuration.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigError: For syntax errors or invalid fields.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from exc
    logger.debug("Loaded config from %s", path)
    return RunConfig.from_dict(data)


def dumps_config(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dumps_config(config), encoding="utf-8")
    return path


def resolve_output(config: RunConfig, override: Optional[str] = None) -> Path:
    """``--out``, then the config, then ``$HAMILTONIAN_LEARNING_OUTPUT``, then ``runs``."""
    return Path(override or config.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
