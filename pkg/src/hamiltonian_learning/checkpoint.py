"""Versioned ``.npz`` checkpoints for trainer state."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_META_KEY = "__metadata__"


def save_checkpoint(
    path: Union[str, Path], arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]
) -> Path:
    """
    Write named arrays plus JSON metadata.

    Float arrays are stored little-endian float64; ``uint8`` arrays (generator
    states) are stored as-is.
    """
    path = Path(path)
    payload = {}
    for name, value in arrays.items():
        value = np.asarray(value)
        payload[name] = value if value.dtype == np.uint8 else value.astype("<f8")
    meta = dict(metadata, version=CHECKPOINT_VERSION)
    payload[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    # np.savez appends .npz to bare names; write through a handle to keep the path
    with open(path, "wb") as handle:
        np.savez(handle, **payload)
    logger.debug("Saved checkpoint with %d arrays to %s", len(arrays), path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        FileNotFoundError: If the file is missing.
        CheckpointError: If metadata is absent or the version differs.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if _META_KEY not in archive.files:
            raise CheckpointError(f"{path} has no checkpoint metadata")
        metadata = json.loads(archive[_META_KEY].tobytes().decode("utf-8"))
        arrays = {name: archive[name] for name in archive.files if name != _META_KEY}
    if metadata.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {metadata.get('version')} unsupported (expected {CHECKPOINT_VERSION})"
        )
    return arrays, metadata


def require(arrays: Dict[str, np.ndarray], name: str) -> np.ndarray:
    """Fetch a named array or fail with ``CheckpointError``."""
    if name not in arrays:
        raise CheckpointError(f"checkpoint is missing {name!r}")
    return arrays[name]
