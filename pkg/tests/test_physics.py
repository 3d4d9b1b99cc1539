"""Unit tests for the torch Hamiltonian action and propagation."""

import numpy as np
import torch

from hamiltonian_learning.pauli import HamiltonianModel, build_dense
from hamiltonian_learning.physics import (
    CDTYPE,
    DTYPE,
    PauliAction,
    apply_product_pairs,
    pair_abs2,
    pairs_to_complex,
    propagate_states,
    times_i,
)
from hamiltonian_learning.scenarios import CRGateSpec, build_cr_gate
from hamiltonian_learning.states import LocalUnitary, StateVector, apply_product, evolve_amplitudes


def random_model(rng, n, terms=4):
    axes = ["".join(rng.choice(list("IXYZ"), size=n)) for _ in range(terms)]
    slots = rng.integers(0, 2, size=terms)
    return HamiltonianModel.from_terms(
        n, list(zip(axes, slots.tolist())), rng.uniform(-1, 1, size=2), scales=rng.uniform(0.5, 2, size=terms)
    )


def as_pairs(z):
    return torch.as_tensor(np.stack([z.real, z.imag], axis=-1), dtype=DTYPE)


class TestPairs:
    """Tests for real-pair helpers."""

    def test_times_i(self):
        """i (a + bi) = -b + ai."""
        torch.testing.assert_close(times_i(torch.tensor([2.0, 3.0], dtype=DTYPE)), torch.tensor([-3.0, 2.0], dtype=DTYPE))

    def test_abs2_and_complex(self):
        """|3 + 4i|**2 = 25."""
        z = torch.tensor([[3.0, 4.0]], dtype=DTYPE)
        assert float(pair_abs2(z)[0]) == 25.0
        assert complex(pairs_to_complex(z)[0]) == 3 + 4j


class TestPauliAction:
    """Tests for the sparse Hamiltonian action."""

    def test_apply_matches_dense(self, rng):
        """H psi agrees with the dense matrix for random tied and scaled models."""
        for _ in range(20):
            n = int(rng.integers(1, 4))
            model = random_model(rng, n)
            psi = rng.normal(size=(3, 1 << n)) + 1j * rng.normal(size=(3, 1 << n))
            out = PauliAction(model).apply(torch.as_tensor(model.theta, dtype=DTYPE), as_pairs(psi))
            expected = psi @ build_dense(model).T
            np.testing.assert_allclose(pairs_to_complex(out).numpy(), expected, atol=1e-12)

    def test_dense_matches_numpy(self, rng):
        """The torch dense matrix equals the NumPy one."""
        model = build_cr_gate(CRGateSpec())
        dense = PauliAction(model).dense(torch.as_tensor(model.theta, dtype=DTYPE))
        np.testing.assert_allclose(dense.numpy(), build_dense(model), atol=1e-12)

    def test_linear_in_theta(self):
        """Gradients of <psi|H|psi> with respect to theta are the term expectations."""
        model = HamiltonianModel.from_terms(1, [("Z", 0), ("X", 1)], [0.3, 0.7])
        theta = torch.tensor([0.3, 0.7], dtype=DTYPE, requires_grad=True)
        psi = as_pairs(np.array([1.0, 0.0]))
        energy = (psi * PauliAction(model).apply(theta, psi)).sum()
        (g,) = torch.autograd.grad(energy, theta)
        torch.testing.assert_close(g, torch.tensor([1.0, 0.0], dtype=DTYPE))

    def test_empty_model(self):
        """A model without terms acts as zero."""
        model = HamiltonianModel(1, (), np.zeros(0), ())
        psi = torch.ones(2, 2, dtype=DTYPE)
        assert torch.equal(PauliAction(model).apply(torch.zeros(0, dtype=DTYPE), psi), torch.zeros_like(psi))


class TestPropagation:
    """Tests for exact propagation in torch."""

    def test_matches_spectral_evolution(self, rng):
        """Torch propagation agrees with the eigendecomposition path."""
        model = random_model(rng, 2)
        psi0 = StateVector.normalized(rng.normal(size=4) + 1j * rng.normal(size=4))
        times = [0.1, 0.3, 0.5, 1.2]
        out = propagate_states(
            PauliAction(model), torch.as_tensor(model.theta, dtype=DTYPE),
            torch.as_tensor(psi0.amplitudes[None, :], dtype=CDTYPE), times,
        )
        np.testing.assert_allclose(out[0].numpy(), evolve_amplitudes(model, psi0, times), atol=1e-10)

    def test_no_times(self):
        """An empty time list gives an empty time axis."""
        model = HamiltonianModel.from_terms(1, [("Z", 0)], [1.0])
        out = propagate_states(PauliAction(model), torch.ones(1, dtype=DTYPE), torch.ones(2, 2, dtype=CDTYPE), [])
        assert out.shape == (2, 0, 2)


class TestProductPairs:
    """Tests for batched product unitaries on pairs."""

    def test_matches_numpy_contraction(self, rng):
        """Per-group factors agree with the NumPy contraction."""
        settings = [LocalUnitary.measurement(b) for b in (["X", "Y"], ["Z", "X"], ["Y", "Y"])]
        factors = np.stack([m.stacked() for m in settings])
        psi = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
        out = apply_product_pairs(
            torch.as_tensor(factors.real, dtype=DTYPE), torch.as_tensor(factors.imag, dtype=DTYPE), as_pairs(psi)
        )
        for g in range(3):
            np.testing.assert_allclose(pairs_to_complex(out[g]).numpy(), apply_product(factors[g], psi[g]), atol=1e-12)
