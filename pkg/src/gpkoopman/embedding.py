"""Snapshot ingestion and delay-embedded training-set construction.

A multivariate time series of M tasks observed at N+1 equally spaced
instants is turned into regression pairs: the input at step k is the
stack of the p previous snapshots and the output is the snapshot at k.
Per-dimension scaling parameters (max absolute value seen in the data)
are recorded so that kernels can operate on normalized coordinates.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ParseError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SnapshotSequence:
    """An observed M x (N+1) multivariate time series.

    Parameters
    ----------
    values : ndarray, shape (M, N+1)
        One row per task, one column per snapshot.
    sample_period : float
        Spacing between snapshots in seconds.
    labels : tuple of str, optional
        Per-task names; generated as ``task1..taskM`` when omitted.
    """

    values: np.ndarray
    sample_period: float
    labels: tuple = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"values must be 2-D, got ndim={v.ndim}")
        m, ncols = v.shape
        if m < 1 or ncols < 2:
            raise InsufficientDataError(
                f"need at least 1 task and 2 snapshots, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("values contain non-finite entries")
        if not (self.sample_period > 0 and np.isfinite(self.sample_period)):
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")
        labels = self.labels
        if labels is None:
            labels = tuple(f"task{i + 1}" for i in range(m))
        else:
            labels = tuple(str(x) for x in labels)
            if len(labels) != m:
                raise ValueError(f"{len(labels)} labels for {m} tasks")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "labels", labels)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        """N, the index of the last snapshot (there are N+1 snapshots)."""
        return self.values.shape[1] - 1


@dataclass(frozen=True)
class TrainingSet:
    """Delay-embedded regression pairs (z_k, y_k), k = p..N.

    ``inputs`` has one row per pair: row k-p is the stack
    [y_{k-p}; ...; y_{k-1}] of the p snapshots preceding k.  ``outputs``
    row k-p is y_k.  ``input_scales`` holds the max absolute value of
    each input coordinate over the pairs, ``output_scales`` the max
    absolute value of each task over *all* snapshots; zero maxima are
    replaced by 1 so that division by a scale is always defined.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    embedding_order: int
    input_scales: np.ndarray
    output_scales: np.ndarray
    sample_period: float

    def __post_init__(self):
        for name in ("inputs", "outputs", "input_scales", "output_scales"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs disagree on the number of pairs")

    @property
    def n_pairs(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.outputs.shape[1]

    @property
    def next_input(self) -> np.ndarray:
        """The one-past-the-end embedded input [y_{N-p+1}; ...; y_N]."""
        m = self.n_tasks
        return np.concatenate([self.inputs[-1, m:], self.outputs[-1]])


def load_timeseries(source, sample_period: float) -> SnapshotSequence:
    """Read a CSV table (one row per snapshot, one column per task).

    ``source`` may be a path, a text or binary stream, or raw bytes/str.
    A header row is detected by its first cell not parsing as a number.
    Raises :class:`ParseError` on ragged rows or non-numeric cells and
    :class:`InsufficientDataError` when fewer than two data rows remain.
    """
    if isinstance(source, bytes):
        stream = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str) and "\n" not in source and "," not in source:
        stream = open(source, "r", encoding="utf-8", newline="")
    elif isinstance(source, str):
        stream = io.StringIO(source)
    elif isinstance(source, io.RawIOBase) or isinstance(source, io.BufferedIOBase):
        stream = io.TextIOWrapper(source, encoding="utf-8")
    else:
        stream = source  # assume text file-like

    try:
        rows = []
        header = None
        for irow, cells in enumerate(csv.reader(stream)):
            if not cells or all(c.strip() == "" for c in cells):
                continue  # blank line
            if irow == 0:
                try:
                    float(cells[0])
                except ValueError:
                    header = [c.strip() for c in cells]
                    continue
            parsed = []
            for icol, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"row {irow}: cell {icol} ({cell!r}) is not numeric", row=irow
                    ) from None
            if rows and len(parsed) != len(rows[0]):
                raise ParseError(
                    f"row {irow}: expected {len(rows[0])} columns, got {len(parsed)}",
                    row=irow,
                )
            rows.append(parsed)
    finally:
        if stream is not source:
            stream.close()

    if len(rows) < 2:
        raise InsufficientDataError(f"need at least 2 snapshot rows, got {len(rows)}")
    table = np.array(rows, dtype=float)
    labels = tuple(header) if header else None
    return SnapshotSequence(values=table.T, sample_period=sample_period, labels=labels)


def build_training_set(seq: SnapshotSequence, p: int) -> TrainingSet:
    """Construct the N-p+1 delay-embedded pairs of order ``p``.

    Requires 1 <= p <= N-1 so that at least two pairs exist.
    """
    if p <= 0:
        raise ValueError(f"embedding order must be positive, got {p}")
    n_steps = seq.n_steps
    if p >= n_steps:
        raise InsufficientDataError(
            f"embedding order p={p} needs at least p+2 snapshots, got {n_steps + 1}"
        )
    y = seq.values  # (M, N+1)
    m = seq.n_tasks
    n_pairs = n_steps - p + 1
    inputs = np.empty((n_pairs, m * p))
    for k in range(p, n_steps + 1):
        inputs[k - p] = y[:, k - p:k].T.ravel()
    outputs = y[:, p:].T.copy()

    input_scales = np.abs(inputs).max(axis=0)
    input_scales[input_scales == 0.0] = 1.0
    output_scales = np.abs(y).max(axis=1)
    output_scales[output_scales == 0.0] = 1.0

    return TrainingSet(
        inputs=inputs,
        outputs=outputs,
        embedding_order=p,
        input_scales=input_scales,
        output_scales=output_scales,
        sample_period=seq.sample_period,
    )


def scaled_input(z: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Divide an embedded input component-wise by its scaling parameters."""
    z = np.asarray(z, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if z.shape[-1] != scales.shape[-1]:
        raise ValueError(f"dimension mismatch: input {z.shape[-1]}, scales {scales.shape[-1]}")
    return z / scales
