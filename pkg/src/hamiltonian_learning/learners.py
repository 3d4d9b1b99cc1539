"""Physics-informed Hamiltonian learning (iPINN-HL).

One neural-network quantum state per preparation is trained jointly with the
shared Hamiltonian parameters theta on three losses: the data term (observed
outcomes), the Schrödinger residual at sampled collocation times, and the
initial-condition mismatch.
"""

import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.optimize
import torch

from .checkpoint import load_checkpoint, require, save_checkpoint
from .exceptions import (
    CheckpointError,
    ConfigError,
    DatasetError,
    NonFiniteLossError,
    ShapeMismatchError,
    UnroutedEntryError,
)
from .networks import DEFAULT_HIDDEN, MLP, AdamState, adam_step, amplitude_table, grad
from .noise import DepolarizationForm, DepolarizationModel, depolarization_weight, depolarize_probs, readout_channel
from .pauli import HamiltonianModel
from .physics import (
    DTYPE,
    PauliAction,
    apply_product_pairs,
    pair_abs2,
    pairs_to_complex,
    propagate_states,
    times_i,
)
from .queries import DatasetGroup, GroupedDataset, Query
from .states import LocalUnitary, StateVector, apply_local_unitary

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
DATA_LIKELIHOODS = ("literal", "log")

GroupData = Union[GroupedDataset, Sequence[DatasetGroup]]


@dataclass
class TrainConfig:
    """
    Hyperparameters shared by both learners.

    Attributes:
        lambda_physics: Weight of the Schrödinger-residual loss.
        lambda_initial: Weight of the initial-condition loss.
        constraint_points: Collocation times P sampled per member and epoch.
        duration: Protocol duration T; ``None`` uses the latest observed time.
        epochs: Optimizer epochs.
        learning_rate: Adam step size for network weights.
        theta_learning_rate: Adam step size for Hamiltonian and noise parameters.
        seed: Seed for initialization and collocation sampling.
        theta_init_box: Uniform initialization interval for theta.
        theta_candidates: Draws from the box scored by the exact-dynamics
            likelihood before training; the best one is polished and used as
            the starting theta. ``0`` keeps the single uniform draw.
        theta_warmup: Leading epochs during which only the networks are
            updated and theta (and noise) stay at their starting values.
        hidden: Hidden-layer widths of each quantum-state network.
        log_every: Epochs between progress lines.
        data_likelihood: ``log`` likelihood of the normalized outcome
            distribution, or the ``literal`` squared-amplitude data loss.
        learn_noise: Estimate readout fidelity q and depolarization time mu.
        readout_init: Starting q when learning noise.
        mu_init: Starting mu when learning noise.
        noise_t0: Experiment start time of the depolarization model.
        depolarization_form: Time dependence of the depolarizing weight.
        reconstruction_epochs: Per-group state-reconstruction epochs (DNN-HL).
        reconstruction_learning_rate: Reconstruction step size (DNN-HL).
        reconstruction_hidden: Hidden widths of the reconstruction networks.
        noise_epochs: Epochs of the DNN-HL noise fit; ``None`` reuses ``epochs``.
    """

    lambda_physics: float = 1.0
    lambda_initial: float = 1.0
    constraint_points: int = 100
    duration: Optional[float] = None
    epochs: int = 2000
    learning_rate: float = 1e-3
    theta_learning_rate: float = 1e-2
    seed: int = 0
    theta_init_box: Tuple[float, float] = (-2.0, 2.0)
    theta_candidates: int = 128
    theta_warmup: int = 500
    hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    log_every: int = 100
    data_likelihood: str = "log"
    learn_noise: bool = False
    readout_init: float = 0.9
    mu_init: float = 2.0
    noise_t0: float = 0.0
    depolarization_form: str = DepolarizationForm.ONE_MINUS_EXP.value
    reconstruction_epochs: int = 500
    reconstruction_learning_rate: float = 1e-2
    reconstruction_hidden: Tuple[int, ...] = (32, 32)
    noise_epochs: Optional[int] = None

    def __post_init__(self) -> None:
        self.theta_init_box = tuple(float(v) for v in self.theta_init_box)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.reconstruction_hidden = tuple(int(v) for v in self.reconstruction_hidden)
        if self.lambda_physics < 0 or self.lambda_initial < 0:
            raise ConfigError("train.lambda", "loss weights must be >= 0")
        if self.constraint_points < 1:
            raise ConfigError("train.constraint_points", "P must be >= 1")
        if self.epochs < 1:
            raise ConfigError("train.epochs", "must be >= 1")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("train.duration", "must be > 0")
        if len(self.theta_init_box) != 2 or self.theta_init_box[0] > self.theta_init_box[1]:
            raise ConfigError("train.theta_init_box", "expected [low, high] with low <= high")
        if self.theta_candidates < 0 or self.theta_warmup < 0:
            raise ConfigError("train.theta_candidates", "theta_candidates and theta_warmup must be >= 0")
        if self.data_likelihood not in DATA_LIKELIHOODS:
            raise ConfigError("train.data_likelihood", f"got {self.data_likelihood!r}", DATA_LIKELIHOODS)
        forms = [f.value for f in DepolarizationForm]
        if self.depolarization_form not in forms:
            raise ConfigError("train.depolarization_form", f"got {self.depolarization_form!r}", forms)
        if not 0.5 < self.readout_init < 1 or not self.mu_init > 0:
            raise ConfigError("train.readout_init", "need 0.5 < readout_init < 1 and mu_init > 0")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"train.{key}", "unknown field", sorted(known))
        return cls(**data)


@dataclass
class EstimationResult:
    """
    Outcome of one training run.

    Attributes:
        theta_hat: Estimated Hamiltonian parameters.
        names: Labels of ``estimate_vector()`` entries.
        noise: Estimated ``q`` and ``mu`` when noise was learned.
        traces: Per-epoch values of each loss component (and ``mse``).
        theta_trajectory: ``(epochs, len(names))`` estimates after each epoch.
        mse: Final mean squared error against the truth, if known.
        wall_time: Seconds spent training.
        clamp_count: Log-probabilities clamped at the floor.
        skipped_steps: Adam steps skipped for non-finite gradients.
    """

    theta_hat: np.ndarray
    names: List[str]
    noise: Dict[str, float] = field(default_factory=dict)
    traces: Dict[str, List[float]] = field(default_factory=dict)
    theta_trajectory: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mse: Optional[float] = None
    wall_time: float = 0.0
    clamp_count: int = 0
    skipped_steps: int = 0

    def estimate_vector(self) -> np.ndarray:
        """theta followed by ``q`` and ``mu`` when they were estimated."""
        extra = [self.noise[k] for k in ("q", "mu") if k in self.noise]
        return np.concatenate([np.asarray(self.theta_hat, dtype=np.float64), extra])

    def to_frame(self) -> pd.DataFrame:
        """Per-epoch loss traces and parameter trajectory."""
        epochs = len(self.theta_trajectory)
        frame = pd.DataFrame({"epoch": np.arange(1, epochs + 1)})
        for name in ("data", "physics", "initial", "total"):
            if name in self.traces:
                frame[f"loss_{name}"] = self.traces[name]
        for j, name in enumerate(self.names):
            frame[name] = self.theta_trajectory[:, j]
        if "mse" in self.traces:
            frame["mse"] = self.traces["mse"]
        return frame


def mse(theta_hat: Sequence[float], theta_true: Sequence[float]) -> float:
    """
    Mean of squared componentwise errors.

    Raises:
        ShapeMismatchError: If the vectors differ in length.

    Example:
        >>> round(mse([1.1, 1.9], [1.0, 2.0]), 12)
        0.01
    """
    a = np.asarray(theta_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(theta_true, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"estimate has {a.size} entries, truth {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def initial_theta(config: TrainConfig, count: int, generator: torch.Generator) -> torch.Tensor:
    low, high = config.theta_init_box
    return low + (high - low) * torch.rand(count, generator=generator, dtype=DTYPE)


def screen_theta(
    objective: Callable[[torch.Tensor], torch.Tensor],
    first: torch.Tensor,
    config: TrainConfig,
    generator: torch.Generator,
) -> torch.Tensor:
    """
    Multi-start initialization: best of ``first`` and ``config.theta_candidates``
    box draws under ``objective``, then refined by Nelder-Mead.

    Non-finite scores never win. The refinement keeps the screened value if
    it does not improve on it.
    """
    candidates = [first.detach().clone()] + [
        initial_theta(config, first.numel(), generator) for _ in range(config.theta_candidates)
    ]

    def score(theta: torch.Tensor) -> float:
        with torch.no_grad():
            value = objective(theta).item()
        return value if np.isfinite(value) else np.inf

    scores = [score(c) for c in candidates]
    best = int(np.argmin(scores))
    start = candidates[best].numpy()
    refined = scipy.optimize.minimize(
        lambda x: score(torch.as_tensor(x, dtype=DTYPE)),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 400 * start.size},
    )
    logger.info("Screened %d theta starts: best %.6g, refined %.6g", len(candidates), scores[best], refined.fun)
    if np.isfinite(refined.fun) and refined.fun <= scores[best]:
        return torch.as_tensor(refined.x, dtype=DTYPE)
    return candidates[best]


class NoiseSlots(torch.nn.Module):
    """
    Learnable readout and depolarization parameters.

    ``q = 0.5 + 0.5 sigmoid(a)`` and ``mu = exp(b)`` keep both in range for
    any real ``(a, b)``.
    """

    def __init__(self, q0: float, mu0: float, t0: float = 0.0, form: str = "one-minus-exp") -> None:
        super().__init__()
        ratio = min(max((q0 - 0.5) / 0.5, 1e-6), 1 - 1e-6)
        self.a = torch.nn.Parameter(torch.tensor(np.log(ratio / (1 - ratio)), dtype=DTYPE))
        self.b = torch.nn.Parameter(torch.tensor(np.log(mu0), dtype=DTYPE))
        self.t0 = float(t0)
        self.form = DepolarizationForm(form)

    def q(self) -> torch.Tensor:
        return 0.5 + 0.5 * torch.sigmoid(self.a)

    def mu(self) -> torch.Tensor:
        return torch.exp(self.b)

    def depolarization(self, times: torch.Tensor) -> torch.Tensor:
        model = DepolarizationModel(mu=self.mu(), t0=self.t0, form=self.form)
        return depolarization_weight(model, times)

    def values(self) -> Dict[str, float]:
        return {"q": self.q().item(), "mu": self.mu().item()}


class NNQSEnsemble(torch.nn.Module):
    """
    One quantum-state network per distinct preparation.

    Attributes:
        n: Number of qubits.
        duration: Time scale T used to normalize the time input.
        keys: Preparation keys, in member order.
        initial: ``(L, 2**n, 2)`` amplitude pairs of each member's initial state.
    """

    def __init__(
        self,
        n: int,
        preparations: Sequence[LocalUnitary],
        duration: float,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        if not preparations:
            raise DatasetError("ensemble needs at least one preparation")
        self.n = n
        self.duration = float(duration)
        self.keys = [u.key for u in preparations]
        self._index = {key: l for l, key in enumerate(self.keys)}
        sizes = (n + 1,) + tuple(hidden) + (2,)
        self.networks = torch.nn.ModuleList(MLP(sizes, generator) for _ in preparations)
        amplitudes = np.stack([
            apply_local_unitary(u, StateVector.basis(n, 0)).amplitudes for u in preparations
        ])
        self.initial = torch.as_tensor(np.stack([amplitudes.real, amplitudes.imag], axis=-1), dtype=DTYPE)

    def __len__(self) -> int:
        return len(self.keys)

    def member(self, query: Query) -> int:
        """Index of the network responsible for ``query``'s preparation."""
        try:
            return self._index[query.preparation_key]
        except KeyError:
            raise UnroutedEntryError(f"no ensemble member for preparation {query.preparation_key}") from None

    def amplitudes(self, member: int, times: torch.Tensor, tangent: bool = False):
        """Amplitude table ``(P, 2**n, 2)`` of one member (and its time tangent)."""
        return amplitude_table(self.networks[member], times, self.n, self.duration, tangent)


@dataclass
class DataBatch:
    """
    Dataset laid out for vectorized evaluation.

    Each group reads row ``rows[g]`` of the stacked per-member amplitude
    tables; ``member_times[l]`` lists the distinct times of member ``l``.
    """

    member_times: List[torch.Tensor]
    rows: torch.Tensor
    times: torch.Tensor
    factors_re: torch.Tensor
    factors_im: torch.Tensor
    counts: torch.Tensor
    total: float

    @classmethod
    def build(cls, ensemble: NNQSEnsemble, data: GroupData) -> "DataBatch":
        groups = list(data)
        if not groups:
            raise DatasetError("dataset is empty")
        members = [ensemble.member(g.query) for g in groups]
        distinct: List[List[float]] = [sorted({g.query.t for g, l in zip(groups, members) if l == k}) for k in range(len(ensemble))]
        offsets = np.cumsum([0] + [len(ts) for ts in distinct])
        positions = [{t: offsets[l] + j for j, t in enumerate(ts)} for l, ts in enumerate(distinct)]
        rows = [positions[l][g.query.t] for g, l in zip(groups, members)]
        factors = np.stack([g.query.m.stacked() for g in groups])
        counts = np.stack([g.count_vector() for g in groups])
        return cls(
            member_times=[torch.tensor(ts, dtype=DTYPE) for ts in distinct],
            rows=torch.as_tensor(rows, dtype=torch.long),
            times=torch.tensor([g.query.t for g in groups], dtype=DTYPE),
            factors_re=torch.as_tensor(factors.real, dtype=DTYPE),
            factors_im=torch.as_tensor(factors.imag, dtype=DTYPE),
            counts=torch.as_tensor(counts, dtype=DTYPE),
            total=float(counts.sum()),
        )


def _as_batch(ensemble: NNQSEnsemble, data: Union[DataBatch, GroupData]) -> DataBatch:
    return data if isinstance(data, DataBatch) else DataBatch.build(ensemble, data)


def measured_amplitudes(ensemble: NNQSEnsemble, batch: DataBatch) -> torch.Tensor:
    """``<y|M Psi_w(t)>`` for every group and outcome, shape ``(G, 2**n, 2)``."""
    tables = [
        ensemble.amplitudes(l, ts) for l, ts in enumerate(batch.member_times) if ts.numel()
    ]
    stacked = torch.cat(tables)
    return apply_product_pairs(batch.factors_re, batch.factors_im, stacked[batch.rows])


def physics_loss(ensemble: NNQSEnsemble, action: PauliAction, theta: torch.Tensor, times: torch.Tensor) -> torch.Tensor:
    """
    Schrödinger residual ``sum |i dPsi/dt - H(theta) Psi|**2``.

    Summed over basis states, collocation times and members. ``times`` is
    either ``(P,)`` shared by all members or ``(L, P)``.
    """
    times = torch.as_tensor(times, dtype=DTYPE)
    total = torch.zeros((), dtype=DTYPE)
    for l in range(len(ensemble)):
        member_times = times if times.ndim == 1 else times[l]
        amps, damps = ensemble.amplitudes(l, member_times, tangent=True)
        residual = times_i(damps) - action.apply(theta, amps)
        total = total + pair_abs2(residual).sum()
    return total


def initial_loss(ensemble: NNQSEnsemble) -> torch.Tensor:
    """Mean squared amplitude mismatch at ``t = 0`` per member, summed over members."""
    total = torch.zeros((), dtype=DTYPE)
    zero = torch.zeros(1, dtype=DTYPE)
    for l in range(len(ensemble)):
        amps = ensemble.amplitudes(l, zero)[0]
        total = total + pair_abs2(ensemble.initial[l] - amps).mean()
    return total


def data_loss(ensemble: NNQSEnsemble, data: Union[DataBatch, GroupData]) -> torch.Tensor:
    """``-(1/N) sum_k |<y_k|M_k Psi_w(t_k)>|**2`` over all shots."""
    batch = _as_batch(ensemble, data)
    weights = pair_abs2(measured_amplitudes(ensemble, batch))
    return -(batch.counts * weights).sum() / batch.total


def noisy_likelihood(
    weights: torch.Tensor,
    n: int,
    q: Union[float, torch.Tensor] = 1.0,
    p_d: Union[float, torch.Tensor] = 0.0,
) -> torch.Tensor:
    """
    Observed-outcome distribution from unnormalized pure outcome weights.

    The weights are normalized, mixed toward uniform with ``p_d`` and passed
    through the readout channel with fidelity ``q``.

    Args:
        weights: ``(..., 2**n)`` non-negative weights ``|amplitude|**2``.
        n: Number of qubits.
        q: Readout fidelity.
        p_d: Depolarizing weight, scalar or one per leading batch entry.
    """
    norm = weights.sum(dim=-1, keepdim=True).clamp_min(PROBABILITY_FLOOR)
    probs = depolarize_probs(weights / norm, p_d, n)
    return readout_channel(probs, q)


def log_likelihood_loss(
    probs: torch.Tensor, counts: torch.Tensor, total: float
) -> Tuple[torch.Tensor, int]:
    """``-(1/N) sum counts * log p`` with ``p`` floored; also returns how many observed cells hit the floor."""
    clamped = int(((probs < PROBABILITY_FLOOR) & (counts > 0)).sum())
    return -(counts * torch.log(probs.clamp_min(PROBABILITY_FLOOR))).sum() / total, clamped


def exact_data_loss(
    ensemble: NNQSEnsemble,
    action: PauliAction,
    theta: torch.Tensor,
    data: Union[DataBatch, GroupData],
    noise: Optional[NoiseSlots] = None,
) -> torch.Tensor:
    """
    Log-likelihood data loss with every member replaced by ``exp(-iH(theta)t)``
    applied to its preparation; the networks are not evaluated.
    """
    batch = _as_batch(ensemble, data)
    initial = pairs_to_complex(ensemble.initial)
    tables = []
    for l, ts in enumerate(batch.member_times):
        if ts.numel():
            evolved = propagate_states(action, theta, initial[l:l + 1], ts.tolist())[0]
            tables.append(torch.stack([evolved.real, evolved.imag], dim=-1))
    weights = pair_abs2(apply_product_pairs(batch.factors_re, batch.factors_im, torch.cat(tables)[batch.rows]))
    if noise is None:
        probs = noisy_likelihood(weights, ensemble.n)
    else:
        probs = noisy_likelihood(weights, ensemble.n, noise.q(), noise.depolarization(batch.times))
    return log_likelihood_loss(probs, batch.counts, batch.total)[0]


class LossTerms(NamedTuple):
    data: torch.Tensor
    physics: torch.Tensor
    initial: torch.Tensor
    total: torch.Tensor
    clamped: int = 0


def weighted_total(
    data: torch.Tensor, physics: torch.Tensor, initial: torch.Tensor, config: TrainConfig
) -> torch.Tensor:
    return data + config.lambda_physics * physics + config.lambda_initial * initial


def total_loss(
    ensemble: NNQSEnsemble,
    action: PauliAction,
    theta: torch.Tensor,
    data: Optional[Union[DataBatch, GroupData]],
    config: TrainConfig,
    times: torch.Tensor,
    noise: Optional[NoiseSlots] = None,
) -> LossTerms:
    """
    ``L_data + lambda_physics * L_physics + lambda_initial * L_initial``.

    ``data=None`` drops the data term. The log-likelihood data term is used
    when noise is learned or ``config.data_likelihood == "log"``.
    """
    clamped = 0
    if data is None:
        l_data = torch.zeros((), dtype=DTYPE)
    elif noise is None and config.data_likelihood == "literal":
        l_data = data_loss(ensemble, data)
    else:
        batch = _as_batch(ensemble, data)
        weights = pair_abs2(measured_amplitudes(ensemble, batch))
        if noise is None:
            probs = noisy_likelihood(weights, ensemble.n)
        else:
            probs = noisy_likelihood(weights, ensemble.n, noise.q(), noise.depolarization(batch.times))
        l_data, clamped = log_likelihood_loss(probs, batch.counts, batch.total)
    l_physics = physics_loss(ensemble, action, theta, times)
    l_initial = initial_loss(ensemble)
    return LossTerms(l_data, l_physics, l_initial, weighted_total(l_data, l_physics, l_initial, config), clamped)


def preparations_of(data: GroupData) -> List[LocalUnitary]:
    """Distinct preparations in first-seen order."""
    seen: Dict[Tuple, LocalUnitary] = {}
    for group in data:
        seen.setdefault(group.query.preparation_key, group.query.u)
    return list(seen.values())


def latest_time(data: GroupData) -> float:
    return max(g.query.t for g in data)


def _split_grad(loss: torch.Tensor, params: List[torch.Tensor]) -> List[torch.Tensor]:
    flat = grad(loss, params)
    return [g.reshape(p.shape) for g, p in zip(torch.split(flat, [p.numel() for p in params]), params)]


class IPINNTrainer:
    """
    Resumable iPINN-HL trainer.

    ``fit`` may be called repeatedly on new data; weights, theta, noise slots,
    Adam moments and the sampling generator carry over between calls.
    """

    kind = "ipinn"

    def __init__(
        self,
        model: HamiltonianModel,
        config: TrainConfig,
        preparations: Sequence[LocalUnitary],
        truth: Optional[Sequence[float]] = None,
    ) -> None:
        self.model = model
        self.config = config
        self.truth = None if truth is None else np.asarray(truth, dtype=np.float64)
        self.duration = float(config.duration or 1.0)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.action = PauliAction(model)
        self.theta = torch.nn.Parameter(initial_theta(config, model.num_parameters, self.generator))
        self.ensemble = NNQSEnsemble(model.n, preparations, self.duration, config.hidden, self.generator)
        self.noise = (
            NoiseSlots(config.readout_init, config.mu_init, config.noise_t0, config.depolarization_form)
            if config.learn_noise else None
        )
        physical = [self.theta] + (list(self.noise.parameters()) if self.noise is not None else [])
        self._physical = {id(p) for p in physical}
        self.adam = AdamState([
            {"params": list(self.ensemble.parameters())},
            {"params": physical, "lr": config.theta_learning_rate},
        ], lr=config.learning_rate)
        self.screened = False
        self.epoch = 0
        self.traces: Dict[str, List[float]] = {k: [] for k in ("data", "physics", "initial", "total")}
        if self.truth is not None:
            self.traces["mse"] = []
        self.trajectory: List[np.ndarray] = []
        self.clamp_count = 0
        self.wall_time = 0.0

    @classmethod
    def from_data(
        cls,
        model: HamiltonianModel,
        data: GroupData,
        config: TrainConfig,
        truth: Optional[Sequence[float]] = None,
    ) -> "IPINNTrainer":
        if config.duration is None:
            config = replace(config, duration=latest_time(data))
        return cls(model, config, preparations_of(data), truth)

    @property
    def names(self) -> List[str]:
        extra = ["q", "mu"] if self.noise is not None else []
        return self.model.parameter_names() + extra

    def estimate(self) -> np.ndarray:
        theta = self.theta.detach().numpy().copy()
        if self.noise is None:
            return theta
        values = self.noise.values()
        return np.concatenate([theta, [values["q"], values["mu"]]])

    def sample_times(self) -> torch.Tensor:
        shape = (len(self.ensemble), self.config.constraint_points)
        return self.duration * torch.rand(shape, generator=self.generator, dtype=DTYPE)

    def screen(self, data: Union[DataBatch, GroupData]) -> None:
        """
        Replace the starting theta by the multi-start screen over ``data``.

        Runs at most once, before the first epoch; a no-op when
        ``config.theta_candidates`` is 0.
        """
        if self.screened or self.epoch > 0:
            return
        self.screened = True
        if self.config.theta_candidates < 1:
            return
        batch = _as_batch(self.ensemble, data)
        best = screen_theta(
            lambda theta: exact_data_loss(self.ensemble, self.action, theta, batch, self.noise),
            self.theta, self.config, self.generator,
        )
        with torch.no_grad():
            self.theta.copy_(best)

    def step(self, batch: DataBatch) -> LossTerms:
        """One epoch: resample collocation times, evaluate the losses, update."""
        terms = total_loss(
            self.ensemble, self.action, self.theta, batch, self.config, self.sample_times(), self.noise
        )
        for name in ("data", "physics", "initial"):
            value = getattr(terms, name).item()
            if not np.isfinite(value):
                raise NonFiniteLossError(name, self.epoch + 1, value)
        params = self.adam.params
        grads = _split_grad(terms.total, params)
        if self.epoch < self.config.theta_warmup:
            grads = [torch.zeros_like(g) if id(p) in self._physical else g for p, g in zip(params, grads)]
        adam_step(self.adam, params, grads)
        return terms

    def fit(self, data: Union[DataBatch, GroupData], epochs: Optional[int] = None) -> EstimationResult:
        """
        Train for ``epochs`` more epochs on ``data``.

        The first call screens the starting theta on ``data``.

        Raises:
            NonFiniteLossError: If a loss component becomes NaN or infinite.
            UnroutedEntryError: If a query's preparation has no network.
        """
        epochs = self.config.epochs if epochs is None else epochs
        batch = _as_batch(self.ensemble, data)
        clamped_before = self.clamp_count
        start = time.perf_counter()
        self.screen(batch)
        for _ in range(epochs):
            terms = self.step(batch)
            self.epoch += 1
            self.clamp_count += terms.clamped
            for name in ("data", "physics", "initial", "total"):
                self.traces[name].append(getattr(terms, name).item())
            estimate = self.estimate()
            self.trajectory.append(estimate)
            if self.truth is not None:
                self.traces["mse"].append(mse(estimate, self.truth))
            if self.config.log_every and self.epoch % self.config.log_every == 0:
                logger.info(
                    "Epoch %d: data=%.6g physics=%.6g initial=%.6g%s",
                    self.epoch, self.traces["data"][-1], self.traces["physics"][-1],
                    self.traces["initial"][-1],
                    f" mse={self.traces['mse'][-1]:.6g}" if self.truth is not None else "",
                )
        self.wall_time += time.perf_counter() - start
        if self.clamp_count > clamped_before:
            logger.warning(
                "%d log-probabilities clamped at %g", self.clamp_count - clamped_before, PROBABILITY_FLOOR
            )
        return self.result()

    def result(self) -> EstimationResult:
        estimate = self.estimate()
        k = self.model.num_parameters
        return EstimationResult(
            theta_hat=estimate[:k],
            names=self.names,
            noise=self.noise.values() if self.noise is not None else {},
            traces={name: list(values) for name, values in self.traces.items()},
            theta_trajectory=np.array(self.trajectory).reshape(len(self.trajectory), len(self.names)),
            mse=None if self.truth is None else mse(estimate, self.truth),
            wall_time=self.wall_time,
            clamp_count=self.clamp_count,
            skipped_steps=self.adam.skipped,
        )

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"state.{name}": value.detach().numpy().copy() for name, value in self.state_tensors().items()}
        arrays.update(self.adam.state_arrays())
        arrays["rng"] = self.generator.get_state().numpy().copy()
        for name, values in self.traces.items():
            arrays[f"trace.{name}"] = np.asarray(values, dtype=np.float64)
        arrays["trajectory"] = np.array(self.trajectory).reshape(len(self.trajectory), len(self.names))
        return arrays

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        tensors = {f"ensemble.{k}": v for k, v in self.ensemble.state_dict().items()}
        tensors["theta"] = self.theta
        if self.noise is not None:
            tensors["noise.a"], tensors["noise.b"] = self.noise.a, self.noise.b
        return tensors

    def save(self, path) -> None:
        """Checkpoint everything needed to continue this run bit-identically."""
        save_checkpoint(path, self.state_arrays(), {
            "kind": self.kind,
            "epoch": self.epoch,
            "clamp_count": self.clamp_count,
            "wall_time": self.wall_time,
            "names": self.names,
            "duration": self.duration,
        })

    def restore(self, path) -> None:
        """
        Load a checkpoint written by ``save`` for the same model and config.

        Raises:
            CheckpointError: If the checkpoint belongs to another learner or model.
        """
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != self.kind or meta.get("names") != self.names:
            raise CheckpointError(f"checkpoint is for {meta.get('kind')} {meta.get('names')}, not this run")
        with torch.no_grad():
            for name, tensor in self.state_tensors().items():
                tensor.copy_(torch.as_tensor(require(arrays, f"state.{name}"), dtype=DTYPE))
        self.adam.load_arrays(arrays)
        self.generator.set_state(torch.as_tensor(require(arrays, "rng"), dtype=torch.uint8))
        for name in self.traces:
            self.traces[name] = [float(v) for v in require(arrays, f"trace.{name}")]
        self.trajectory = [row.copy() for row in require(arrays, "trajectory")]
        self.epoch = int(meta["epoch"])
        self.clamp_count = int(meta["clamp_count"])
        self.wall_time = float(meta["wall_time"])
        logger.info("Resumed %s run at epoch %d from %s", self.kind, self.epoch, path)


def ipinn_train(
    model: HamiltonianModel,
    data: GroupData,
    config: TrainConfig,
    truth: Optional[Sequence[float]] = None,
) -> EstimationResult:
    """
    Run iPINN-HL on a grouped dataset.

    Args:
        model: Hamiltonian structure; its theta is ignored.
        data: Grouped (or distribution-level) dataset.
        config: Training hyperparameters.
        truth: Ground-truth estimate vector, for MSE traces.
    """
    trainer = IPINNTrainer.from_data(model, data, config, truth)
    return trainer.fit(data, config.epochs)
