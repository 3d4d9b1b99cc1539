"""Pytest configuration and shared fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to Python path for imports
src_path = Path(__file__).parent / "src"
sys.path.insert(0, str(src_path))


@pytest.fixture
def rng():
    """Seeded generator so every random draw in a test is reproducible."""
    return np.random.default_rng(20240611)


@pytest.fixture
def spin_pair():
    """Two-spin ring with J = 1 and omega = 0.5."""
    from hamiltonian_learning.scenarios import SpinChainSpec, build_spin_chain

    return build_spin_chain(SpinChainSpec.uniform(2))
