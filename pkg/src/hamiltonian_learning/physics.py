"""Differentiable Hamiltonian action and propagation in torch.

Amplitude tensors carry real and imaginary parts on a trailing axis of
size 2, so every loss stays a real function of real parameters.
"""

import logging
from typing import Dict, Sequence

import numpy as np
import torch

from .pauli import HamiltonianModel

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CDTYPE = torch.complex128


def pair_abs2(pairs: torch.Tensor) -> torch.Tensor:
    """``|z|**2`` of ``(..., 2)`` real pairs."""
    return pairs[..., 0] ** 2 + pairs[..., 1] ** 2


def pairs_to_complex(pairs: torch.Tensor) -> torch.Tensor:
    return torch.complex(pairs[..., 0], pairs[..., 1])


def times_i(pairs: torch.Tensor) -> torch.Tensor:
    """Multiply real pairs by the imaginary unit."""
    return torch.stack([-pairs[..., 1], pairs[..., 0]], dim=-1)


class PauliAction:
    """
    Sparse action of a parameterized Hamiltonian on amplitude pairs.

    Each term is a signed permutation, so ``(P psi)[r] = phase[r] psi[src[r]]``
    with ``src`` the image map (Pauli flips are involutions).
    """

    def __init__(self, model: HamiltonianModel) -> None:
        self.n = model.n
        self.dim = 1 << model.n
        self.num_parameters = model.num_parameters
        images = np.zeros((len(model.terms), self.dim), dtype=np.int64)
        phases = np.zeros((len(model.terms), self.dim), dtype=np.complex128)
        for j, (pauli, _) in enumerate(model.terms):
            images[j], phases[j] = pauli.signed_permutation()
        gathered = np.take_along_axis(phases, images, axis=1)
        self.source = torch.as_tensor(images, dtype=torch.long)
        self.phase_re = torch.as_tensor(gathered.real, dtype=DTYPE)
        self.phase_im = torch.as_tensor(gathered.imag, dtype=DTYPE)
        # column k of term j holds phases[j, k] in row images[j, k]
        self.rows = self.source
        self.column_phase = torch.as_tensor(phases, dtype=CDTYPE)
        self.slots = torch.as_tensor(
            [model.tying[coeff] for _, coeff in model.terms], dtype=torch.long
        )
        self.scales = torch.as_tensor(
            [model.scales[coeff] if model.scales else 1.0 for _, coeff in model.terms], dtype=DTYPE
        )

    def coefficients(self, theta: torch.Tensor) -> torch.Tensor:
        return theta[self.slots] * self.scales

    def apply(self, theta: torch.Tensor, psi: torch.Tensor) -> torch.Tensor:
        """
        ``H(theta) psi`` for ``psi`` of shape ``(..., 2**n, 2)``.

        Differentiable in both ``theta`` and ``psi``.
        """
        if self.slots.numel() == 0:
            return torch.zeros_like(psi)
        gathered = psi[..., self.source, :]
        g_re, g_im = gathered[..., 0], gathered[..., 1]
        re = self.phase_re * g_re - self.phase_im * g_im
        im = self.phase_re * g_im + self.phase_im * g_re
        c = self.coefficients(theta)
        return torch.stack(
            [torch.einsum("j,...jk->...k", c, re), torch.einsum("j,...jk->...k", c, im)],
            dim=-1,
        )

    def dense(self, theta: torch.Tensor) -> torch.Tensor:
        """Dense complex Hamiltonian, differentiable in ``theta``."""
        out = torch.zeros(self.dim, self.dim, dtype=CDTYPE)
        if self.slots.numel() == 0:
            return out
        values = self.coefficients(theta).to(CDTYPE)[:, None] * self.column_phase
        columns = torch.arange(self.dim).repeat(self.slots.numel())
        return out.index_put((self.rows.reshape(-1), columns), values.reshape(-1), accumulate=True)


def propagate_states(
    action: PauliAction,
    theta: torch.Tensor,
    initial: torch.Tensor,
    times: Sequence[float],
) -> torch.Tensor:
    """
    Exact ``exp(-iH(theta)t) psi0`` for a batch of initial states.

    Times are visited in increasing order and each step reuses the matrix
    exponential of its increment, so uniform grids cost one exponential.

    Args:
        action: Hamiltonian structure.
        theta: Parameter tensor.
        initial: ``(L, 2**n)`` complex initial states.
        times: Non-negative times, strictly increasing.

    Returns:
        ``(L, len(times), 2**n)`` complex tensor.
    """
    hamiltonian = action.dense(theta)
    state = initial.transpose(0, 1)
    steps: Dict[float, torch.Tensor] = {}
    out = []
    current = 0.0
    for t in times:
        delta = float(t) - current
        key = round(delta, 12)
        step = steps.get(key)
        if step is None:
            step = steps[key] = torch.linalg.matrix_exp(-1j * delta * hamiltonian)
        state = step @ state
        out.append(state.transpose(0, 1))
        current = float(t)
    if not out:
        return initial.new_zeros((initial.shape[0], 0, initial.shape[1]))
    return torch.stack(out, dim=1)


def apply_product_pairs(
    factors_re: torch.Tensor, factors_im: torch.Tensor, amps: torch.Tensor
) -> torch.Tensor:
    """
    Contract per-group product unitaries against amplitude pairs.

    Args:
        factors_re: ``(G, n, 2, 2)`` real parts of the single-qubit factors.
        factors_im: ``(G, n, 2, 2)`` imaginary parts.
        amps: ``(G, 2**n, 2)`` amplitude pairs.

    Returns:
        ``(G, 2**n, 2)`` rotated amplitude pairs.
    """
    groups, n = factors_re.shape[0], factors_re.shape[1]
    x_re, x_im = amps[..., 0], amps[..., 1]
    for i in range(n):
        shape = (groups, 1 << i, 2, 1 << (n - 1 - i))
        a_re, a_im = x_re.reshape(shape), x_im.reshape(shape)
        u_re, u_im = factors_re[:, i], factors_im[:, i]
        y_re = torch.einsum("grs,gasb->garb", u_re, a_re) - torch.einsum("grs,gasb->garb", u_im, a_im)
        y_im = torch.einsum("grs,gasb->garb", u_re, a_im) + torch.einsum("grs,gasb->garb", u_im, a_re)
        x_re, x_im = y_re.reshape(groups, -1), y_im.reshape(groups, -1)
    return torch.stack([x_re, x_im], dim=-1)
