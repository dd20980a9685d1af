"""Core data model: logits tables, derived predictions, and the LGTS v1 file.

A :class:`LogitsTable` is the universal currency of the toolkit: an N x C
matrix of raw classifier outputs plus (optionally) N ground-truth labels.
Everything downstream --- metrics, calibrators, representations --- consumes
tables or the per-instance :class:`PredictionView` derived from them.

All core types are immutable after construction (arrays are marked
read-only) and all operations here are pure functions, so instances are safe
to share across concurrent workers.

LGTS v1 on-disk layout (little-endian, no padding):

    bytes 0-3    magic ``LGTS`` (ASCII)
    byte  4      version, currently 1
    bytes 5-8    uint32 N (instances)
    bytes 9-12   uint32 C (classes)
    next 4*N*C   float32 logits, row-major
    next 4*N     uint32 labels

Logits are stored as 32-bit floats and promoted to 64-bit in memory.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import kernels

LGTS_MAGIC = b"LGTS"
LGTS_VERSION = 1


class CascalError(Exception):
    """Base class for all toolkit errors."""


class InvalidTableError(CascalError, ValueError):
    """A logits table violates a structural constraint (shape, N, C)."""


class NonFiniteLogitsError(InvalidTableError):
    """Logits contain NaN or infinity; the message names the first bad row."""


class LabelRangeError(InvalidTableError):
    """A label is negative or >= the class count."""


class UnlabeledTableError(CascalError, ValueError):
    """An operation that needs ground truth was given a label-free table."""


class ConfigError(CascalError, ValueError):
    """A run configuration is contradictory or out of range."""


class LogitsFormatError(CascalError, ValueError):
    """Base class for LGTS file-format problems."""


class BadMagicError(LogitsFormatError):
    pass


class UnsupportedVersionError(LogitsFormatError):
    pass


class TruncatedPayloadError(LogitsFormatError):
    pass


def _validate_logits(logits: np.ndarray, min_classes: int = 2) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise InvalidTableError(f"logits must be 2-D, got shape {logits.shape}")
    n, c = logits.shape
    if n < 1:
        raise InvalidTableError("table must hold at least one instance")
    if c < min_classes:
        raise InvalidTableError(f"class count must be >= {min_classes}, got {c}")
    finite_rows = np.isfinite(logits).all(axis=1)
    if not finite_rows.all():
        row = int(np.argmin(finite_rows))
        raise NonFiniteLogitsError(f"non-finite logit in row {row}")
    return logits


@dataclass(frozen=True)
class LogitsTable:
    """Immutable N x C raw classifier outputs with optional labels."""

    logits: np.ndarray
    labels: np.ndarray | None = None
    name: str = "table"

    def __post_init__(self):
        logits = _validate_logits(self.logits)
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (logits.shape[0],):
                raise InvalidTableError(
                    f"labels shape {labels.shape} does not match N={logits.shape[0]}"
                )
            if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
                bad = int(np.argmax((labels < 0) | (labels >= logits.shape[1])))
                raise LabelRangeError(
                    f"label {labels[bad]} at row {bad} outside [0, {logits.shape[1]})"
                )
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @property
    def n_instances(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def with_labels(self, labels) -> "LogitsTable":
        return LogitsTable(self.logits, labels, self.name)

    def without_labels(self) -> "LogitsTable":
        return LogitsTable(self.logits, None, self.name)


@dataclass(frozen=True)
class PredictionView:
    """Per-instance derivations of a table: softmax rows, argmax, confidence.

    ``correct`` is None for label-free tables; operations that need ground
    truth raise :class:`UnlabeledTableError` in that case.
    """

    probs: np.ndarray
    pred: np.ndarray
    conf: np.ndarray
    correct: np.ndarray | None
    labels: np.ndarray | None

    def __post_init__(self):
        for arr in (self.probs, self.pred, self.conf, self.correct, self.labels):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n_instances(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise UnlabeledTableError("operation requires ground-truth labels")
        return self.labels


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (row-max subtraction, so huge logits are safe)."""
    logits = _validate_logits(
        np.atleast_2d(np.asarray(logits, dtype=np.float64)), min_classes=1
    )
    return kernels.scaled_softmax(logits, np.ones(logits.shape[0]))


def view_from_probs(
    probs: np.ndarray, labels: np.ndarray | None
) -> PredictionView:
    """Build a view from an already-computed probability matrix.

    Argmax ties break to the lowest class index.
    """
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    pred = np.argmax(probs, axis=1).astype(np.int64)
    conf = probs[np.arange(probs.shape[0]), pred].copy()
    correct = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        correct = pred == labels
    return PredictionView(probs=probs, pred=pred, conf=conf, correct=correct, labels=labels)


def derive_predictions(table: LogitsTable) -> PredictionView:
    """Softmax each row and take the argmax class and its probability."""
    return view_from_probs(softmax_rows(table.logits), table.labels)


def force_argmax(probs: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Guard a probability matrix so argmax ties cannot move off ``pred``.

    Per-row positive rescaling never reorders entries, but rounding can
    collapse a near-tie into an exact tie, and the lowest-index tie rule may
    then disagree with the original prediction.  Rows where that happened get
    the predicted entry nudged just above the rival maximum and renormalized;
    all other rows are returned untouched.
    """
    current = np.argmax(probs, axis=1)
    bad = np.nonzero(current != pred)[0]
    if bad.size == 0:
        return probs
    probs = probs.copy()
    for i in bad:
        row = probs[i].copy()
        row[pred[i]] = row[current[i]] * (1.0 + 1e-9) + 1e-300
        probs[i] = row / row.sum()
    return probs


def content_hash(table: LogitsTable) -> str:
    """SHA-256 over (N, C, logits, labels); used as a cache key."""
    h = hashlib.sha256()
    h.update(np.array([table.n_instances, table.n_classes], dtype="<u4").tobytes())
    h.update(np.ascontiguousarray(table.logits, dtype="<f8").tobytes())
    if table.labels is not None:
        h.update(np.ascontiguousarray(table.labels, dtype="<u4").tobytes())
    return h.hexdigest()


def write_logits_file(table: LogitsTable, path) -> None:
    """Write a table in LGTS v1 format (atomically: temp file + rename).

    Labels are required by the format; logits are truncated to float32.
    """
    if table.labels is None:
        raise UnlabeledTableError("LGTS files carry labels; table has none")
    path = os.fspath(path)
    payload = bytearray()
    payload += LGTS_MAGIC
    payload += bytes([LGTS_VERSION])
    payload += np.array([table.n_instances, table.n_classes], dtype="<u4").tobytes()
    payload += np.ascontiguousarray(table.logits, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(table.labels, dtype="<u4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def read_logits_file(path) -> LogitsTable:
    """Read an LGTS v1 file; the table name is the file stem."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != LGTS_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {LGTS_MAGIC!r}")
    if len(blob) < 13:
        raise TruncatedPayloadError(f"{path}: header truncated at {len(blob)} bytes")
    version = blob[4]
    if version != LGTS_VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}, expected {LGTS_VERSION}")
    n, c = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=2, offset=5))
    expected = 13 + 4 * n * c + 4 * n
    if len(blob) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(blob)} bytes, expected {expected} for N={n}, C={c}"
        )
    logits = np.frombuffer(blob, dtype="<f4", count=n * c, offset=13)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=13 + 4 * n * c)
    if labels.size and labels.max() >= c:
        bad = int(np.argmax(labels >= c))
        raise LabelRangeError(f"{path}: label {labels[bad]} at row {bad} >= C={c}")
    name = os.path.splitext(os.path.basename(path))[0]
    return LogitsTable(
        logits=logits.astype(np.float64).reshape(n, c),
        labels=labels.astype(np.int64),
        name=name,
    )
