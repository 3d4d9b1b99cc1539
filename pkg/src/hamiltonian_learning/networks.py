"""Neural-network quantum states, exact time tangents and the Adam optimizer.

Reverse-mode gradients come from torch autograd. Time derivatives of the
network are propagated forward alongside the activations as dual-number
tangents, built from ordinary torch operations, so the tangent itself stays
differentiable in the weights (forward-over-reverse).
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .exceptions import DimensionMismatchError, NonScalarLossError, ShapeMismatchError
from .physics import DTYPE

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64, 64, 64)

Bits = Union[str, Sequence[int]]


class MLP(torch.nn.Module):
    """
    Fully connected tanh network with two real outputs (Re, Im).

    Attributes:
        sizes: Layer widths from input to output.
    """

    def __init__(self, sizes: Sequence[int], generator: Optional[torch.Generator] = None) -> None:
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.sizes[:-1], self.sizes[1:])
        )
        self.reset_parameters(generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        """Glorot-uniform weights and zero biases drawn from ``generator``."""
        with torch.no_grad():
            for layer in self.layers:
                bound = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    @property
    def in_features(self) -> int:
        return self.sizes[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = torch.tanh(layer(h))
        return self.layers[-1](h)

    def forward_with_tangent(
        self, x: torch.Tensor, dx: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Output and its directional derivative along input direction ``dx``.

        ``dz = W dh`` through each affine map and ``dh' = (1 - tanh(z)**2) dz``
        through each activation.
        """
        h, dh = x, dx
        for layer in self.layers[:-1]:
            h = torch.tanh(layer(h))
            dh = (1 - h ** 2) * (dh @ layer.weight.T)
        last = self.layers[-1]
        return last(h), dh @ last.weight.T


def spin_features(n: int) -> torch.Tensor:
    """All ``2**n`` bit-strings as ``+1/-1`` features (bit 0 -> +1), shape ``(2**n, n)``."""
    index = torch.arange(1 << n)
    shifts = torch.arange(n - 1, -1, -1)
    bits = (index[:, None] >> shifts) & 1
    return (1 - 2 * bits).to(DTYPE)


def _bits_tensor(m: Bits) -> torch.Tensor:
    values = [int(b) for b in m]
    return torch.tensor([1 - 2 * b for b in values], dtype=DTYPE)


def _check_width(mlp: MLP, n: int) -> None:
    if mlp.in_features != n + 1:
        raise DimensionMismatchError(
            f"network expects {mlp.in_features - 1} bits plus time, got {n} bits"
        )


def encode(times: torch.Tensor, n: int, duration: float) -> torch.Tensor:
    """
    Network inputs for every basis state at every time.

    Returns:
        ``(P, 2**n, n + 1)`` tensor: scaled time ``t / T`` then spin features.
    """
    times = torch.as_tensor(times, dtype=DTYPE).reshape(-1)
    spins = spin_features(n)
    scaled = (times / duration)[:, None, None].expand(-1, spins.shape[0], 1)
    return torch.cat([scaled, spins.expand(times.shape[0], -1, -1)], dim=-1)


def amplitude_table(
    mlp: MLP, times: torch.Tensor, n: int, duration: float, tangent: bool = False
) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """
    Amplitude pairs ``(P, 2**n, 2)`` and, optionally, their raw-time derivative.
    """
    _check_width(mlp, n)
    x = encode(times, n, duration)
    if not tangent:
        return mlp(x)
    dx = torch.zeros_like(x)
    dx[..., 0] = 1.0 / duration
    return mlp.forward_with_tangent(x, dx)


def forward(mlp: MLP, t: float, m: Bits, duration: float = 1.0) -> torch.Tensor:
    """
    Amplitude ``Psi_w(t, m)`` as a ``(Re, Im)`` pair.

    Args:
        mlp: Network with input width ``n + 1``.
        t: Raw time; scaled by ``duration`` before entering the network.
        m: Basis bit-string.
        duration: Protocol duration T.

    Raises:
        DimensionMismatchError: If ``m`` does not have ``n`` bits.
    """
    _check_width(mlp, len(m))
    x = torch.cat([torch.tensor([t / duration], dtype=DTYPE), _bits_tensor(m)])
    return mlp(x)


def time_tangent(mlp: MLP, t: float, m: Bits, duration: float = 1.0) -> torch.Tensor:
    """
    Exact ``dPsi_w/dt`` at ``(t, m)`` as a ``(Re, Im)`` pair, including the ``1/T`` factor.

    Raises:
        DimensionMismatchError: If ``m`` does not have ``n`` bits.
    """
    _check_width(mlp, len(m))
    x = torch.cat([torch.tensor([t / duration], dtype=DTYPE), _bits_tensor(m)])
    dx = torch.zeros_like(x)
    dx[0] = 1.0 / duration
    return mlp.forward_with_tangent(x, dx)[1]


def grad(loss: torch.Tensor, params: Sequence[torch.Tensor], create_graph: bool = False) -> torch.Tensor:
    """
    Reverse-mode gradient of a scalar loss, flattened over ``params`` in order.

    Parameters the loss does not depend on get zeros.

    Raises:
        NonScalarLossError: If ``loss`` has more than one element.
    """
    if loss.numel() != 1:
        raise NonScalarLossError(f"loss has shape {tuple(loss.shape)}")
    params = list(params)
    if not loss.requires_grad:
        return torch.zeros(sum(p.numel() for p in params), dtype=DTYPE)
    grads = torch.autograd.grad(
        loss.reshape(()), params, allow_unused=True, create_graph=create_graph
    )
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1)
        for g, p in zip(grads, params)
    ])


class AdamState:
    """
    Bias-corrected Adam over registered parameter groups.

    Thin owner of a ``torch.optim.Adam`` that adds a step counter and skips
    (and reports) steps with non-finite gradients.
    """

    def __init__(
        self,
        params: Union[Iterable[torch.Tensor], List[dict]],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.optimizer = torch.optim.Adam(params, lr=lr, betas=betas, eps=eps)
        self.step_count = 0
        self.skipped = 0

    @property
    def params(self) -> List[torch.Tensor]:
        return [p for group in self.optimizer.param_groups for p in group["params"]]

    def state_arrays(self) -> dict:
        """Moments and per-parameter step counts as float64 NumPy arrays."""
        out = {"adam.step_count": np.array([self.step_count, self.skipped], dtype=np.float64)}
        for k, p in enumerate(self.params):
            state = self.optimizer.state.get(p)
            if state:
                out[f"adam.{k}.exp_avg"] = state["exp_avg"].detach().numpy().copy()
                out[f"adam.{k}.exp_avg_sq"] = state["exp_avg_sq"].detach().numpy().copy()
                out[f"adam.{k}.step"] = np.array([float(state["step"])])
        return out

    def load_arrays(self, arrays: dict) -> None:
        counts = arrays["adam.step_count"]
        self.step_count, self.skipped = int(counts[0]), int(counts[1])
        for k, p in enumerate(self.params):
            if f"adam.{k}.exp_avg" in arrays:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(arrays[f"adam.{k}.step"][0]), dtype=torch.float32),
                    "exp_avg": torch.as_tensor(arrays[f"adam.{k}.exp_avg"], dtype=DTYPE).clone(),
                    "exp_avg_sq": torch.as_tensor(arrays[f"adam.{k}.exp_avg_sq"], dtype=DTYPE).clone(),
                }


def adam_step(state: AdamState, params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    """
    One Adam update of ``params`` in place using ``grads``.

    Args:
        state: Optimizer state owning ``params``.
        params: Parameters, in the order registered with ``state``.
        grads: One gradient per parameter.

    Returns:
        The (updated) parameters.

    Raises:
        ShapeMismatchError: If counts or shapes disagree.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ShapeMismatchError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"gradient shape {tuple(g.shape)} != parameter {tuple(p.shape)}")
    if not all(bool(torch.isfinite(g).all()) for g in grads):
        state.skipped += 1
        logger.warning("Skipping Adam step %d: non-finite gradient", state.step_count + 1)
        return params
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step_count += 1
    return params
