"""Line-oriented dataset files.

Line 1 is the version header ``# hamiltonian-learning dataset v1 qubits=N``;
every following line is one entry::

    <preparation>\t<time>\t<measurement>\t<outcome>

Preparation and measurement are comma-separated per-qubit tokens: a gate
name from ``GATES`` or an explicit matrix ``[a;b;c;d]`` (row-major complex
literals). Paths ending in ``.gz`` are gzip-compressed.
"""

import gzip
import io
import logging
import re
from pathlib import Path
from typing import IO, List, Sequence, Union

import numpy as np

from .exceptions import DatasetError, DatasetFormatError, DatasetVersionError
from .queries import DatasetEntry, Query
from .states import GATES, LocalUnitary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_HEADER = re.compile(r"^# hamiltonian-learning dataset v(\d+) qubits=(\d+)$")

PathLike = Union[str, Path]


def _encode_unitary(u: LocalUnitary) -> str:
    tokens = []
    for label, factor in zip(u.labels, u.factors):
        if label is not None:
            tokens.append(label)
        else:
            tokens.append("[" + ";".join(repr(complex(z)) for z in factor.reshape(-1)) + "]")
    return ",".join(tokens)


def _decode_unitary(text: str, n: int) -> LocalUnitary:
    tokens = text.split(",")
    if len(tokens) != n:
        raise ValueError(f"expected {n} single-qubit tokens, got {len(tokens)}")
    factors, labels = [], []
    for token in tokens:
        if token in GATES:
            factors.append(GATES[token])
            labels.append(token)
        elif token.startswith("[") and token.endswith("]"):
            values = [complex(v) for v in token[1:-1].split(";")]
            if len(values) != 4:
                raise ValueError(f"matrix token {token!r} needs 4 entries")
            factors.append(np.array(values).reshape(2, 2))
            labels.append(None)
        else:
            raise ValueError(f"unknown gate token {token!r}")
    return LocalUnitary(tuple(factors), tuple(labels))


def _open(path: Path, mode: str) -> IO[str]:
    if path.suffix == ".gz":
        raw = open(path, mode + "b")
        # mtime=0 keeps compressed output byte-identical across runs
        archive = gzip.GzipFile(filename="", mode=mode + "b", fileobj=raw, mtime=0)
        return _ClosingWrapper(archive, raw)
    return open(path, mode, encoding="utf-8", newline="\n")


class _ClosingWrapper(io.TextIOWrapper):
    """Text view of a gzip stream that also closes the underlying file."""

    def __init__(self, archive: gzip.GzipFile, raw: IO[bytes]) -> None:
        super().__init__(archive, encoding="utf-8", newline="\n")
        self._raw = raw

    def close(self) -> None:
        try:
            super().close()
        finally:
            self._raw.close()


def write_dataset(entries: Sequence[DatasetEntry], path: PathLike, n: int = 0) -> Path:
    """
    Write entries to a dataset file.

    Args:
        entries: Dataset entries, all on the same qubit count.
        path: Destination; ``.gz`` selects compression.
        n: Qubit count for the header when ``entries`` is empty.

    Returns:
        The written path.

    Raises:
        DatasetError: If entries mix qubit counts or no count is known.
    """
    path = Path(path)
    counts = {e.query.n for e in entries}
    if len(counts) > 1:
        raise DatasetError(f"entries mix qubit counts {sorted(counts)}")
    qubits = counts.pop() if counts else n
    if qubits < 1:
        raise DatasetError("qubit count unknown for an empty dataset")
    with _open(path, "w") as handle:
        handle.write(f"# hamiltonian-learning dataset v{FORMAT_VERSION} qubits={qubits}\n")
        for entry in entries:
            q = entry.query
            handle.write(
                f"{_encode_unitary(q.u)}\t{q.t!r}\t{_encode_unitary(q.m)}\t{entry.outcome}\n"
            )
    logger.debug("Wrote %d entries to %s", len(entries), path)
    return path


def read_dataset(path: PathLike) -> List[DatasetEntry]:
    """
    Read a dataset file written by ``write_dataset``.

    Raises:
        FileNotFoundError: If the file does not exist.
        DatasetVersionError: If the header names another version.
        DatasetFormatError: For a malformed line, naming its line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    entries: List[DatasetEntry] = []
    with _open(path, "r") as handle:
        header = handle.readline().rstrip("\n")
        match = _HEADER.match(header)
        if match is None:
            raise DatasetFormatError(1, f"missing dataset header, got {header!r}")
        if int(match.group(1)) != FORMAT_VERSION:
            raise DatasetVersionError(
                f"dataset version {match.group(1)} unsupported (expected {FORMAT_VERSION})"
            )
        n = int(match.group(2))
        for line_number, line in enumerate(handle, start=2):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise DatasetFormatError(line_number, f"expected 4 fields, got {len(fields)}")
            prep, time, meas, outcome = fields
            try:
                query = Query(_decode_unitary(prep, n), float(time), _decode_unitary(meas, n))
                entries.append(DatasetEntry(query, outcome))
            except (ValueError, DatasetError) as exc:
                raise DatasetFormatError(line_number, str(exc)) from exc
    logger.debug("Read %d entries from %s", len(entries), path)
    return entries
