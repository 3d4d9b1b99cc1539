"""Unit tests for checkpoint files."""

import numpy as np
import pytest

from hamiltonian_learning.checkpoint import CHECKPOINT_VERSION, load_checkpoint, require, save_checkpoint
from hamiltonian_learning.exceptions import CheckpointError


class TestCheckpoint:
    """Tests for saving and loading trainer state."""

    def test_arrays_and_metadata(self, tmp_path):
        """Arrays and metadata come back unchanged."""
        arrays = {"theta": np.array([0.1, -2.5]), "rng": np.arange(5, dtype=np.uint8)}
        save_checkpoint(tmp_path / "c.npz", arrays, {"epoch": 7, "names": ["a", "b"]})
        loaded, meta = load_checkpoint(tmp_path / "c.npz")
        np.testing.assert_array_equal(loaded["theta"], arrays["theta"])
        assert loaded["rng"].dtype == np.uint8
        assert meta["epoch"] == 7
        assert meta["version"] == CHECKPOINT_VERSION

    def test_path_kept(self, tmp_path):
        """A name without the .npz suffix is written as given."""
        path = save_checkpoint(tmp_path / "state.ckpt", {"x": np.zeros(1)}, {})
        assert path.exists()
        assert not (tmp_path / "state.ckpt.npz").exists()

    def test_float_arrays_widened(self, tmp_path):
        """Float32 inputs are stored as float64."""
        save_checkpoint(tmp_path / "c.npz", {"w": np.ones(3, dtype=np.float32)}, {})
        assert load_checkpoint(tmp_path / "c.npz")[0]["w"].dtype == np.float64

    def test_missing_file(self, tmp_path):
        """A missing checkpoint raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.npz")

    def test_foreign_archive(self, tmp_path):
        """An npz without metadata is not a checkpoint."""
        path = tmp_path / "plain.npz"
        with open(path, "wb") as handle:
            np.savez(handle, x=np.zeros(2))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_require(self):
        """Missing entries raise CheckpointError naming them."""
        with pytest.raises(CheckpointError, match="'theta'"):
            require({}, "theta")
