"""Unit tests for readout and depolarization channels."""

import math

import numpy as np
import pytest
import torch

from hamiltonian_learning.exceptions import DimensionMismatchError, NoiseParameterError
from hamiltonian_learning.noise import (
    DepolarizationForm,
    DepolarizationModel,
    ReadoutNoise,
    depolarization_weight,
    depolarize_probs,
    noisy_distribution,
    readout_channel,
)


class TestReadoutChannel:
    """Tests for symmetric bit-flip readout."""

    def test_faithful_readout_is_identity(self, rng):
        """q = 1 leaves any distribution unchanged."""
        p = rng.dirichlet(np.ones(8))
        np.testing.assert_allclose(readout_channel(p, 1.0), p)

    def test_single_qubit(self):
        """One qubit in |0> with q = 0.9 reads 0.9 / 0.1."""
        np.testing.assert_allclose(readout_channel(np.array([1.0, 0.0]), 0.9), [0.9, 0.1])

    def test_two_qubit_product(self):
        """Two faithful bits at q = 0.995 give 0.990025."""
        out = readout_channel(np.array([1.0, 0.0, 0.0, 0.0]), 0.995)
        assert abs(out[0] - 0.990025) <= 1e-12
        assert out.sum() == pytest.approx(1.0, abs=1e-14)

    def test_batch_axes(self, rng):
        """Leading axes are processed independently."""
        p = rng.dirichlet(np.ones(4), size=3)
        out = readout_channel(p, 0.8)
        for row, expected in zip(out, p):
            np.testing.assert_allclose(row, readout_channel(expected, 0.8))

    def test_torch_gradient_flows(self):
        """Torch inputs keep the graph to q."""
        q = torch.tensor(0.9, dtype=torch.float64, requires_grad=True)
        out = readout_channel(torch.tensor([1.0, 0.0], dtype=torch.float64), q)
        out[0].backward()
        assert q.grad.item() == pytest.approx(1.0)

    @pytest.mark.parametrize("q", [0.4, 1.01])
    def test_fidelity_range(self, q):
        """q outside [0.5, 1] raises NoiseParameterError."""
        with pytest.raises(NoiseParameterError):
            readout_channel(np.array([1.0, 0.0]), q)

    def test_not_power_of_two(self):
        """Distribution lengths must be powers of two."""
        with pytest.raises(DimensionMismatchError):
            readout_channel(np.ones(3) / 3, 0.9)

    def test_readout_noise_validates(self):
        """ReadoutNoise rejects out-of-range fidelity."""
        with pytest.raises(NoiseParameterError):
            ReadoutNoise(0.3)


class TestDepolarization:
    """Tests for the time-dependent depolarizing weight and channel."""

    def test_weight_at_start(self):
        """The default form has no depolarization at t0."""
        assert depolarization_weight(DepolarizationModel(mu=2.0, t0=1.0), 1.0) == 0.0

    def test_weight_after_one_time_constant(self):
        """t - t0 = mu gives 1 - exp(-1)."""
        model = DepolarizationModel(mu=3.0, t0=0.5)
        assert depolarization_weight(model, 3.5) == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_literal_form(self):
        """The literal-exp variant starts at 1."""
        model = DepolarizationModel(mu=1.0, form=DepolarizationForm.LITERAL_EXP)
        assert depolarization_weight(model, 0.0) == 1.0

    def test_form_from_string(self):
        """Forms may be given by value."""
        assert DepolarizationModel(mu=1.0, form="literal-exp").form is DepolarizationForm.LITERAL_EXP

    def test_time_before_start(self):
        """t < t0 raises NoiseParameterError."""
        with pytest.raises(NoiseParameterError):
            depolarization_weight(DepolarizationModel(mu=1.0, t0=1.0), 0.5)

    @pytest.mark.parametrize("mu", [0.0, -1.0])
    def test_mu_positive(self, mu):
        """mu must be positive."""
        with pytest.raises(NoiseParameterError):
            DepolarizationModel(mu=mu)

    def test_torch_mu(self):
        """A tensor mu gives a differentiable weight."""
        mu = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
        weight = depolarization_weight(DepolarizationModel(mu=mu), torch.tensor([2.0], dtype=torch.float64))
        weight.sum().backward()
        assert mu.grad is not None

    def test_zero_weight_passthrough(self, rng):
        """p_d = 0 leaves the distribution unchanged."""
        p = rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(depolarize_probs(p, 0.0, 2), p)

    def test_full_weight_uniform(self, rng):
        """p_d = 1 gives the uniform distribution."""
        np.testing.assert_allclose(depolarize_probs(rng.dirichlet(np.ones(8)), 1.0, 3), np.full(8, 1 / 8))

    def test_half_mixing(self):
        """p_d = 0.5 on |00> gives 0.625 and 0.125 elsewhere."""
        out = depolarize_probs(np.array([1.0, 0.0, 0.0, 0.0]), 0.5, 2)
        np.testing.assert_allclose(out, [0.625, 0.125, 0.125, 0.125], atol=1e-12)

    def test_per_row_weights(self):
        """One weight per batch row."""
        p = np.array([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(depolarize_probs(p, np.array([0.0, 1.0]), 1), [[1.0, 0.0], [0.5, 0.5]])

    def test_weight_out_of_range(self):
        """Weights outside [0, 1] are rejected."""
        with pytest.raises(NoiseParameterError):
            depolarize_probs(np.array([1.0, 0.0]), 1.5, 1)

    def test_length_mismatch(self):
        """The distribution must have 2**n entries."""
        with pytest.raises(DimensionMismatchError):
            depolarize_probs(np.array([1.0, 0.0]), 0.5, 2)


class TestNoisyDistribution:
    """Tests for channel composition."""

    def test_composed_value(self):
        """Depolarize at 0.5 then read out at q = 0.9: p(0) = 0.70."""
        # mu chosen so that p_d(t = 1) = 0.5
        depolarization = DepolarizationModel(mu=1 / math.log(2))
        out = noisy_distribution(np.array([1.0, 0.0]), 1, ReadoutNoise(0.9), depolarization, t=1.0)
        assert abs(out[0] - 0.70) <= 1e-12

    def test_no_channels(self, rng):
        """Without channels the distribution is returned as is."""
        p = rng.dirichlet(np.ones(4))
        np.testing.assert_array_equal(noisy_distribution(p, 2), p)

    def test_sums_to_one(self, rng):
        """The composed channel preserves normalization."""
        p = rng.dirichlet(np.ones(8))
        out = noisy_distribution(p, 3, ReadoutNoise(0.97), DepolarizationModel(mu=2.0), t=1.3)
        assert out.sum() == pytest.approx(1.0, abs=1e-14)
