"""Physics-informed Hamiltonian learning from single-shot measurement data."""

__version__ = "0.1.0"

from .dnn import DNNTrainer, dnn_train
from .learners import EstimationResult, IPINNTrainer, TrainConfig, ipinn_train, mse
from .noise import DepolarizationModel, ReadoutNoise, noisy_distribution
from .pauli import HamiltonianModel, PauliString, build_dense
from .queries import Query, QueryGrid, generate_dataset, group_dataset
from .scenarios import build_cr_gate, build_crosstalk, build_drift, build_spin_chain
from .states import LocalUnitary, StateVector, evolve, measurement_probs

__all__ = [
    "DNNTrainer",
    "DepolarizationModel",
    "EstimationResult",
    "HamiltonianModel",
    "IPINNTrainer",
    "LocalUnitary",
    "PauliString",
    "Query",
    "QueryGrid",
    "ReadoutNoise",
    "StateVector",
    "TrainConfig",
    "build_cr_gate",
    "build_crosstalk",
    "build_dense",
    "build_drift",
    "build_spin_chain",
    "dnn_train",
    "evolve",
    "generate_dataset",
    "group_dataset",
    "ipinn_train",
    "measurement_probs",
    "mse",
    "noisy_distribution",
]
