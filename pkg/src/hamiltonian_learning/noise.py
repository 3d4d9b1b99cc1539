"""Readout bit-flip and depolarization channels on outcome distributions.

Noise never touches state vectors: both channels act on the probability
vector of computational-basis outcomes, which for measurements after a
product rotation is exactly their effect on the statistics. The functions
accept NumPy arrays or torch tensors so learners can differentiate through
them with respect to learnable noise parameters.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Any, Union

import numpy as np
import torch

from .exceptions import DimensionMismatchError, NoiseParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor]


class DepolarizationForm(str, enum.Enum):
    """Time dependence of the depolarizing weight."""

    ONE_MINUS_EXP = "one-minus-exp"
    LITERAL_EXP = "literal-exp"


@dataclass(frozen=True)
class ReadoutNoise:
    """
    Symmetric bit-flip readout identical on every qubit.

    Attributes:
        q: Probability a measured bit is reported unflipped, in [0.5, 1].
    """

    q: float

    def __post_init__(self) -> None:
        _check_fidelity(self.q)


@dataclass(frozen=True)
class DepolarizationModel:
    """
    Depolarizing weight ``p_d(t)`` growing (or decaying) with time constant mu.

    Attributes:
        mu: Time constant, same units as the evolution time.
        t0: Experiment start time.
        form: ``one-minus-exp`` (default) or the ``literal-exp`` variant.
    """

    mu: float
    t0: float = 0.0
    form: DepolarizationForm = DepolarizationForm.ONE_MINUS_EXP

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise NoiseParameterError(f"depolarization time constant must be > 0, got {self.mu}")
        object.__setattr__(self, "form", DepolarizationForm(self.form))


def _is_torch(*values: Any) -> bool:
    return any(isinstance(v, torch.Tensor) for v in values)


def _check_fidelity(q: Any) -> None:
    if isinstance(q, torch.Tensor):
        return
    if not 0.5 <= float(q) <= 1.0:
        raise NoiseParameterError(f"readout fidelity q must lie in [0.5, 1], got {q}")


def _qubits(size: int) -> int:
    n = size.bit_length() - 1
    if size < 2 or 1 << n != size:
        raise DimensionMismatchError(f"distribution length {size} is not a power of two")
    return n


def readout_channel(p_true: ArrayLike, q: Union[float, torch.Tensor]) -> ArrayLike:
    """
    Apply independent symmetric bit flips to every qubit of a distribution.

    ``p~(y~) = sum_y prod_i [q if y~_i == y_i else 1 - q] p(y)``; leading
    batch axes are carried through.

    Args:
        p_true: Outcome probabilities, last axis of length ``2**n``.
        q: Probability that a bit is reported faithfully.

    Returns:
        The noisy distribution, same shape and backend as ``p_true``.

    Raises:
        NoiseParameterError: If ``q`` lies outside [0.5, 1].

    Example:
        >>> readout_channel(np.array([1.0, 0.0]), 0.9)
        array([0.9, 0.1])
    """
    _check_fidelity(q)
    n = _qubits(p_true.shape[-1])
    batch = tuple(p_true.shape[:-1])
    if _is_torch(p_true, q):
        q = torch.as_tensor(q, dtype=torch.float64)
        p_true = torch.as_tensor(p_true, dtype=torch.float64)
        flip = torch.stack([torch.stack([q, 1 - q]), torch.stack([1 - q, q])])
        tensordot, moveaxis = torch.tensordot, torch.moveaxis
    else:
        q = float(q)
        flip = np.array([[q, 1 - q], [1 - q, q]])
        tensordot, moveaxis = np.tensordot, np.moveaxis
    tensor = p_true.reshape(batch + (2,) * n)
    offset = len(batch)
    for i in range(n):
        tensor = moveaxis(tensordot(flip, tensor, ([1], [offset + i])), 0, offset + i)
    return tensor.reshape(batch + (1 << n,))


def depolarization_weight(model: DepolarizationModel, t: Union[float, torch.Tensor]) -> Any:
    """
    Mixing weight ``p_d(t)`` toward the maximally mixed distribution.

    The default form returns ``1 - exp(-(t - t0)/mu)``; ``literal-exp``
    returns ``exp(-(t - t0)/mu)``.

    Raises:
        NoiseParameterError: If ``t < t0``.

    Example:
        >>> round(depolarization_weight(DepolarizationModel(mu=1.0), 1.0), 4)
        0.6321
    """
    mu, t0 = model.mu, model.t0
    if _is_torch(mu, t):
        if not isinstance(t, torch.Tensor) and t < t0:
            raise NoiseParameterError(f"time {t} precedes experiment start {t0}")
        decay = torch.exp(-(torch.as_tensor(t, dtype=torch.float64) - t0) / mu)
    else:
        if t < t0:
            raise NoiseParameterError(f"time {t} precedes experiment start {t0}")
        decay = math.exp(-(t - t0) / mu)
    if model.form is DepolarizationForm.LITERAL_EXP:
        return decay
    return 1 - decay


def depolarize_probs(p_pure: ArrayLike, p_d: Union[float, ArrayLike], n: int) -> ArrayLike:
    """
    Mix a distribution with the uniform one: ``(1 - p_d) p + p_d / 2**n``.

    ``p_d`` may be a scalar or carry one value per leading batch entry.

    Raises:
        NoiseParameterError: If a numeric ``p_d`` lies outside [0, 1].
        DimensionMismatchError: If the distribution length is not ``2**n``.

    Example:
        >>> depolarize_probs(np.array([1.0, 0, 0, 0]), 0.5, 2)
        array([0.625, 0.125, 0.125, 0.125])
    """
    if p_pure.shape[-1] != 1 << n:
        raise DimensionMismatchError(
            f"distribution length {p_pure.shape[-1]} does not match {n} qubits"
        )
    if not _is_torch(p_d):
        values = np.asarray(p_d, dtype=np.float64)
        if np.any(values < 0) or np.any(values > 1):
            raise NoiseParameterError(f"depolarizing weight must lie in [0, 1], got {p_d}")
        if values.ndim:
            p_d = values[..., None]
    elif p_d.ndim:
        p_d = p_d.unsqueeze(-1)
    return (1 - p_d) * p_pure + p_d / (1 << n)


def noisy_distribution(
    p_pure: ArrayLike,
    n: int,
    readout: Union[ReadoutNoise, None] = None,
    depolarization: Union[DepolarizationModel, None] = None,
    t: float = 0.0,
) -> ArrayLike:
    """Depolarize first, then apply readout flips (physical order)."""
    probs = p_pure
    if depolarization is not None:
        probs = depolarize_probs(probs, depolarization_weight(depolarization, t), n)
    if readout is not None:
        probs = readout_channel(probs, readout.q)
    return probs
