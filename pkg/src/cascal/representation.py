"""Distribution summaries fed to the temperature networks.

Two views of a prediction set:

* per predicted class, split into low / mid / high confidence subgroups,
  the mean and per-dimension variance of the probability vectors;
* per confidence bin (M equal-width bins over (0, 1]), the same moments.

Variances are population variances (divide by the cell count).  Empty cells
are zero-filled and report size 0, so shapes depend only on (C,) or (M, C),
never on which cells happen to be occupied.
"""

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import PredictionView, TruncatedPayloadError, BadMagicError

DEFAULT_THRESHOLDS = (0.5, 0.8)
DEFAULT_CONF_BINS = 10
N_LEVELS = 3  # low / mid / high

_REP_MAGIC = b"CREP"
_KIND_CATEGORY = 1
_KIND_CONFIDENCE = 2


@dataclass(frozen=True)
class CategoryRepresentation:
    """Moments of predicted-probability vectors per (predicted class, level)."""

    mean: np.ndarray      # (C, 3, C)
    variance: np.ndarray  # (C, 3, C)
    sizes: np.ndarray     # (C, 3) int64

    @property
    def n_classes(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ConfidenceRepresentation:
    """Moments of predicted-probability vectors per confidence bin."""

    mean: np.ndarray      # (M, C)
    variance: np.ndarray  # (M, C)
    sizes: np.ndarray     # (M,) int64
    bin_of: np.ndarray    # (N,) bin index of every instance

    @property
    def n_bins(self) -> int:
        return self.mean.shape[0]

    @property
    def n_classes(self) -> int:
        return self.mean.shape[1]


def _validate_thresholds(thresholds):
    lo, hi = float(thresholds[0]), float(thresholds[1])
    if not (0.0 < lo < hi < 1.0):
        raise ValueError(f"confidence thresholds must satisfy 0 < lo < hi < 1, got {(lo, hi)}")
    return lo, hi


def confidence_level(conf: np.ndarray, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """0 for conf <= lo, 1 for lo < conf <= hi, 2 above.  Edges go down."""
    lo, hi = _validate_thresholds(thresholds)
    return np.searchsorted(np.array([lo, hi]), conf, side="left").astype(np.int64)


def category_subgroups(view: PredictionView, thresholds=DEFAULT_THRESHOLDS):
    """Index arrays per (predicted class, level); a partition of 0..N-1."""
    level = confidence_level(view.conf, thresholds)
    c = view.probs.shape[1]
    out = []
    for cls in range(c):
        in_cls = view.pred == cls
        out.append([np.nonzero(in_cls & (level == lv))[0] for lv in range(N_LEVELS)])
    return out


def _cell_stats(cell: np.ndarray, probs: np.ndarray, n_cells: int):
    counts, sums, sumsq = kernels.cell_moments(cell, probs, n_cells)
    counts = counts.astype(np.int64)
    mean = np.zeros_like(sums)
    occupied = counts > 0
    np.divide(sums, counts[:, None], out=mean, where=occupied[:, None])
    var = np.zeros_like(sums)
    np.divide(sumsq, counts[:, None], out=var, where=occupied[:, None])
    var -= mean * mean
    np.maximum(var, 0.0, out=var)  # one-pass form can round a hair negative
    var[~occupied] = 0.0
    return counts, mean, var


def category_representation(
    view: PredictionView, thresholds=DEFAULT_THRESHOLDS
) -> CategoryRepresentation:
    c = view.probs.shape[1]
    level = confidence_level(view.conf, thresholds)
    cell = view.pred * N_LEVELS + level
    counts, mean, var = _cell_stats(cell, view.probs, c * N_LEVELS)
    return CategoryRepresentation(
        mean=mean.reshape(c, N_LEVELS, c),
        variance=var.reshape(c, N_LEVELS, c),
        sizes=counts.reshape(c, N_LEVELS),
    )


def confidence_representation(
    view: PredictionView, n_bins: int = DEFAULT_CONF_BINS
) -> ConfidenceRepresentation:
    c = view.probs.shape[1]
    bin_of = kernels.bin_index(view.conf, n_bins)
    counts, mean, var = _cell_stats(bin_of, view.probs, n_bins)
    return ConfidenceRepresentation(mean=mean, variance=var, sizes=counts, bin_of=bin_of)


def representation_key(view: PredictionView) -> str:
    """Content hash of the probabilities/predictions a representation depends on."""
    h = hashlib.sha256()
    h.update(np.asarray(view.probs.shape, dtype="<u4").tobytes())
    h.update(np.ascontiguousarray(view.probs, dtype="<f8").tobytes())
    return h.hexdigest()


# --- flat binary blobs ------------------------------------------------------
# layout: magic, u8 kind, u32 shape header, then float64 payload arrays in a
# fixed order.  sizes and bin indices are exact small integers, stored as f64
# to keep a single payload dtype.


def representation_to_bytes(rep) -> bytes:
    if isinstance(rep, CategoryRepresentation):
        c = rep.n_classes
        head = _REP_MAGIC + struct.pack("<BII", _KIND_CATEGORY, c, 0)
        body = (
            np.ascontiguousarray(rep.mean, dtype="<f8").tobytes()
            + np.ascontiguousarray(rep.variance, dtype="<f8").tobytes()
            + np.ascontiguousarray(rep.sizes, dtype="<f8").tobytes()
        )
        return head + body
    if isinstance(rep, ConfidenceRepresentation):
        m, c = rep.mean.shape
        head = _REP_MAGIC + struct.pack("<BIII", _KIND_CONFIDENCE, m, c, len(rep.bin_of))
        body = (
            np.ascontiguousarray(rep.mean, dtype="<f8").tobytes()
            + np.ascontiguousarray(rep.variance, dtype="<f8").tobytes()
            + np.ascontiguousarray(rep.sizes, dtype="<f8").tobytes()
            + np.ascontiguousarray(rep.bin_of, dtype="<f8").tobytes()
        )
        return head + body
    raise TypeError(f"not a representation: {type(rep).__name__}")


def representation_from_bytes(blob: bytes):
    if blob[:4] != _REP_MAGIC:
        raise BadMagicError(f"bad representation magic {blob[:4]!r}")
    kind = blob[4]
    if kind == _KIND_CATEGORY:
        c, _ = struct.unpack_from("<II", blob, 5)
        off = 13
        want = off + 8 * (2 * c * N_LEVELS * c + c * N_LEVELS)
        if len(blob) != want:
            raise TruncatedPayloadError(f"expected {want} bytes, got {len(blob)}")
        k = c * N_LEVELS * c
        mean = np.frombuffer(blob, "<f8", k, off).reshape(c, N_LEVELS, c).copy()
        var = np.frombuffer(blob, "<f8", k, off + 8 * k).reshape(c, N_LEVELS, c).copy()
        sizes = np.frombuffer(blob, "<f8", c * N_LEVELS, off + 16 * k)
        return CategoryRepresentation(mean, var, sizes.astype(np.int64).reshape(c, N_LEVELS))
    if kind == _KIND_CONFIDENCE:
        m, c, n = struct.unpack_from("<III", blob, 5)
        off = 17
        want = off + 8 * (2 * m * c + m + n)
        if len(blob) != want:
            raise TruncatedPayloadError(f"expected {want} bytes, got {len(blob)}")
        k = m * c
        mean = np.frombuffer(blob, "<f8", k, off).reshape(m, c).copy()
        var = np.frombuffer(blob, "<f8", k, off + 8 * k).reshape(m, c).copy()
        sizes = np.frombuffer(blob, "<f8", m, off + 16 * k).astype(np.int64)
        bin_of = np.frombuffer(blob, "<f8", n, off + 16 * k + 8 * m).astype(np.int64)
        return ConfidenceRepresentation(mean, var, sizes, bin_of)
    raise BadMagicError(f"unknown representation kind byte {kind}")


def save_representation(rep, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(representation_to_bytes(rep))
    os.replace(tmp, path)


def load_representation(path):
    with open(path, "rb") as fh:
        return representation_from_bytes(fh.read())
