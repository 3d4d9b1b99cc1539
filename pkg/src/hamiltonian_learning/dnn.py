"""Tomography-then-fit baseline (DNN-HL).

Each ``(preparation, time)`` point is first reconstructed as a state vector
by a small network trained on its shots; theta is then fitted so that the
exactly propagated preparations match the reconstructions up to global phase.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .exceptions import DatasetError, NonFiniteLossError, ReconstructionError
from .learners import (
    EstimationResult,
    GroupData,
    NoiseSlots,
    TrainConfig,
    initial_theta,
    log_likelihood_loss,
    mse,
    noisy_likelihood,
    preparations_of,
    screen_theta,
)
from .networks import MLP, AdamState, adam_step, spin_features
from .pauli import HamiltonianModel
from .physics import CDTYPE, DTYPE, PauliAction, apply_product_pairs, pair_abs2, propagate_states
from .queries import DatasetGroup, GroupedDataset
from .states import StateVector, apply_local_unitary, evolve

logger = logging.getLogger(__name__)

_ZERO_NORM = 1e-12


def _factor_pairs(groups: Sequence[DatasetGroup]):
    factors = np.stack([g.query.m.stacked() for g in groups])
    return torch.as_tensor(factors.real, dtype=DTYPE), torch.as_tensor(factors.imag, dtype=DTYPE)


def _reconstruct_once(
    groups: Sequence[DatasetGroup], net: MLP, epochs: int, lr: float
) -> Optional[np.ndarray]:
    n = groups[0].query.n
    features = spin_features(n)
    f_re, f_im = _factor_pairs(groups)
    counts = torch.as_tensor(np.stack([g.count_vector() for g in groups]), dtype=DTYPE)
    total = float(counts.sum())
    adam = AdamState(net.parameters(), lr=lr)
    for _ in range(epochs):
        amps = net(features)
        norm = pair_abs2(amps).sum()
        if norm.item() < _ZERO_NORM:
            return None
        psi = amps / torch.sqrt(norm)
        probs = pair_abs2(apply_product_pairs(f_re, f_im, psi.expand(len(groups), -1, -1)))
        loss, _ = log_likelihood_loss(probs, counts, total)
        params = adam.params
        adam_step(adam, params, torch.autograd.grad(loss, params))
    with torch.no_grad():
        amps = net(features)
    vector = amps[:, 0].numpy() + 1j * amps[:, 1].numpy()
    if np.linalg.norm(vector) ** 2 < _ZERO_NORM:
        return None
    return vector


def dnn_reconstruct(
    groups: Sequence[DatasetGroup],
    net: MLP,
    epochs: int,
    lr: float = 1e-2,
    generator: Optional[torch.Generator] = None,
) -> StateVector:
    """
    Maximum-likelihood state reconstruction from shots at one ``(U, t)``.

    The network maps spin features of a basis string to an amplitude; the
    amplitude vector is normalized before computing ``|<y|M psi>|**2`` for
    each measurement setting in ``groups``.

    Args:
        groups: Groups sharing preparation and time, one per measurement.
        net: Network of input width ``n``.
        epochs: Adam epochs.
        lr: Adam step size.
        generator: Source for the one re-initialization on a zero output.

    Returns:
        The normalized reconstructed state.

    Raises:
        ReconstructionError: If there are no shots or the output stays zero.
    """
    groups = list(groups)
    if not groups or sum(g.shots for g in groups) <= 0:
        raise ReconstructionError("no shots to reconstruct from")
    keys = {(g.query.preparation_key, g.query.t) for g in groups}
    if len(keys) > 1:
        raise ReconstructionError("groups do not share one preparation and time")
    for attempt in range(2):
        vector = _reconstruct_once(groups, net, epochs, lr)
        if vector is not None:
            return StateVector.normalized(vector)
        logger.warning("Reconstruction output vanished (attempt %d); re-initializing", attempt + 1)
        net.reset_parameters(generator)
    raise ReconstructionError("reconstructed amplitudes are all zero")


def dnn_data_loss(
    states: torch.Tensor,
    action: PauliAction,
    theta: torch.Tensor,
    initial: torch.Tensor,
    members: Sequence[int],
    times: Sequence[float],
) -> torch.Tensor:
    """
    ``sum_i 2 - 2 |<phi_i| exp(-i H(theta) t_i) |psi0_{members[i]}>|``.

    The phase-minimized distance between each reconstruction and the exactly
    propagated preparation.

    Args:
        states: ``(I, 2**n)`` complex reconstructed states.
        action: Hamiltonian structure.
        theta: Parameters.
        initial: ``(L, 2**n)`` complex preparations.
        members: Preparation index of each state.
        times: Evolution time of each state.
    """
    total = torch.zeros((), dtype=DTYPE)
    members = list(members)
    for l in sorted(set(members)):
        idx = [i for i, m in enumerate(members) if m == l]
        distinct = sorted({float(times[i]) for i in idx})
        row = {t: j for j, t in enumerate(distinct)}
        evolved = propagate_states(action, theta, initial[l:l + 1], distinct)[0]
        picked = evolved[[row[float(times[i])] for i in idx]]
        overlaps = (states[idx].conj() * picked).sum(dim=-1)
        total = total + (2 - 2 * overlaps.abs()).sum()
    return total


@dataclass
class ReconstructedStates:
    """Reconstructions with their preparation index and evolution time."""

    states: np.ndarray
    initial: np.ndarray
    members: List[int]
    times: List[float]
    groups: List[List[DatasetGroup]]

    @classmethod
    def exact(cls, h_true: HamiltonianModel, data: GroupData) -> "ReconstructedStates":
        """Exactly evolved states in place of reconstructions."""
        return cls._assemble(data, lambda groups: evolve(h_true, groups[0].query.initial_state(), groups[0].query.t))

    @classmethod
    def _assemble(cls, data: GroupData, build) -> "ReconstructedStates":
        buckets = GroupedDataset(list(data)).by_preparation_time()
        if not buckets:
            raise DatasetError("dataset is empty")
        preparations = preparations_of(data)
        index = {u.key: l for l, u in enumerate(preparations)}
        initial = np.stack([apply_local_unitary(u, StateVector.basis(u.n, 0)).amplitudes for u in preparations])
        return cls(
            states=np.stack([build(groups).amplitudes for groups in buckets]),
            initial=initial,
            members=[index[groups[0].query.preparation_key] for groups in buckets],
            times=[groups[0].query.t for groups in buckets],
            groups=buckets,
        )


class DNNTrainer:
    """
    DNN-HL: reconstruct every ``(U, t)`` point, then fit theta by Adam from a
    screened multi-start initialization.

    With ``config.learn_noise`` a final stage fits readout fidelity and
    depolarization time on the noisy likelihood of the data with theta fixed.
    """

    kind = "dnn"

    def __init__(self, model: HamiltonianModel, config: TrainConfig, truth: Optional[Sequence[float]] = None) -> None:
        self.model = model
        self.config = config
        self.truth = None if truth is None else np.asarray(truth, dtype=np.float64)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.action = PauliAction(model)
        self.theta = torch.nn.Parameter(initial_theta(config, model.num_parameters, self.generator))
        self.adam = AdamState([self.theta], lr=config.theta_learning_rate)
        self.noise = (
            NoiseSlots(config.readout_init, config.mu_init, config.noise_t0, config.depolarization_form)
            if config.learn_noise else None
        )
        self.traces: Dict[str, List[float]] = {"data": []}
        if self.truth is not None:
            self.traces["mse"] = []
        self.trajectory: List[np.ndarray] = []
        self.clamp_count = 0
        self.wall_time = 0.0

    @property
    def names(self) -> List[str]:
        return self.model.parameter_names() + (["q", "mu"] if self.noise is not None else [])

    def estimate(self) -> np.ndarray:
        theta = self.theta.detach().numpy().copy()
        if self.noise is None:
            return theta
        values = self.noise.values()
        return np.concatenate([theta, [values["q"], values["mu"]]])

    def reconstruct(self, data: GroupData) -> ReconstructedStates:
        """Reconstruct every ``(U, t)`` point of ``data``."""
        n = self.model.n
        sizes = (n,) + self.config.reconstruction_hidden + (2,)

        def build(groups: List[DatasetGroup]) -> StateVector:
            net = MLP(sizes, self.generator)
            return dnn_reconstruct(
                groups, net, self.config.reconstruction_epochs,
                self.config.reconstruction_learning_rate, self.generator,
            )

        states = ReconstructedStates._assemble(data, build)
        logger.info("Reconstructed %d states", len(states.times))
        return states

    def _record(self, loss: float) -> None:
        self.traces["data"].append(loss)
        estimate = self.estimate()
        self.trajectory.append(estimate)
        if self.truth is not None:
            self.traces["mse"].append(mse(estimate, self.truth))

    def fit(
        self,
        data: GroupData,
        epochs: Optional[int] = None,
        states: Optional[ReconstructedStates] = None,
    ) -> EstimationResult:
        """
        Fit theta (and noise) to ``data``.

        Args:
            data: Grouped dataset.
            epochs: Theta-fit epochs; defaults to ``config.epochs``.
            states: Precomputed (or exact) states; skips reconstruction.

        Raises:
            NonFiniteLossError: If the fit loss becomes NaN or infinite.
            ReconstructionError: If a point cannot be reconstructed.
        """
        epochs = self.config.epochs if epochs is None else epochs
        start = time.perf_counter()
        if states is None:
            states = self.reconstruct(data)
        phi = torch.as_tensor(states.states, dtype=CDTYPE)
        initial = torch.as_tensor(states.initial, dtype=CDTYPE)
        if not self.traces["data"] and self.config.theta_candidates > 0:
            best = screen_theta(
                lambda theta: dnn_data_loss(phi, self.action, theta, initial, states.members, states.times),
                self.theta, self.config, self.generator,
            )
            with torch.no_grad():
                self.theta.copy_(best)
        for epoch in range(epochs):
            loss = dnn_data_loss(phi, self.action, self.theta, initial, states.members, states.times)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError("data", len(self.traces["data"]) + 1, value)
            adam_step(self.adam, [self.theta], torch.autograd.grad(loss, [self.theta]))
            self._record(value)
            if self.config.log_every and (epoch + 1) % self.config.log_every == 0:
                logger.info("Epoch %d: fit loss=%.6g", len(self.traces["data"]), value)
        if self.noise is not None:
            self._fit_noise(states)
        self.wall_time += time.perf_counter() - start
        return self.result()

    def _fit_noise(self, states: ReconstructedStates) -> None:
        groups = [g for bucket in states.groups for g in bucket]
        with torch.no_grad():
            initial = torch.as_tensor(states.initial, dtype=CDTYPE)
            rows = []
            for group, bucket_index in ((g, k) for k, bucket in enumerate(states.groups) for g in bucket):
                member = states.members[bucket_index]
                evolved = propagate_states(self.action, self.theta, initial[member:member + 1], [group.query.t])[0, 0]
                rows.append(torch.stack([evolved.real, evolved.imag], dim=-1))
            f = np.stack([g.query.m.stacked() for g in groups])
            f_re, f_im = torch.as_tensor(f.real, dtype=DTYPE), torch.as_tensor(f.imag, dtype=DTYPE)
            weights = pair_abs2(apply_product_pairs(f_re, f_im, torch.stack(rows)))
        counts = torch.as_tensor(np.stack([g.count_vector() for g in groups]), dtype=DTYPE)
        times = torch.tensor([g.query.t for g in groups], dtype=DTYPE)
        total = float(counts.sum())
        adam = AdamState(self.noise.parameters(), lr=self.config.theta_learning_rate)
        for _ in range(self.config.noise_epochs or self.config.epochs):
            probs = noisy_likelihood(weights, self.model.n, self.noise.q(), self.noise.depolarization(times))
            loss, clamped = log_likelihood_loss(probs, counts, total)
            self.clamp_count += clamped
            params = adam.params
            adam_step(adam, params, torch.autograd.grad(loss, params))
        self.adam.skipped += adam.skipped
        # the trajectory's last row reflects the fitted noise
        if self.trajectory:
            self.trajectory[-1] = self.estimate()
            if self.truth is not None:
                self.traces["mse"][-1] = mse(self.trajectory[-1], self.truth)
        logger.info("Noise fit: q=%.6g mu=%.6g", *self.noise.values().values())

    def result(self) -> EstimationResult:
        estimate = self.estimate()
        return EstimationResult(
            theta_hat=estimate[: self.model.num_parameters],
            names=self.names,
            noise=self.noise.values() if self.noise is not None else {},
            traces={name: list(values) for name, values in self.traces.items()},
            theta_trajectory=np.array(self.trajectory).reshape(len(self.trajectory), len(self.names)),
            mse=None if self.truth is None else mse(estimate, self.truth),
            wall_time=self.wall_time,
            clamp_count=self.clamp_count,
            skipped_steps=self.adam.skipped,
        )


def dnn_train(
    model: HamiltonianModel,
    data: GroupData,
    config: TrainConfig,
    truth: Optional[Sequence[float]] = None,
    states: Optional[ReconstructedStates] = None,
) -> EstimationResult:
    """Run DNN-HL on a grouped dataset; ``states`` bypasses reconstruction."""
    trainer = DNNTrainer(model, config, truth)
    return trainer.fit(data, config.epochs, states)
