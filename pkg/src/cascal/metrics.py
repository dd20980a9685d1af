"""Calibration error metrics over prediction views.

All binned metrics use ``n_bins`` equal-width bins over (0, 1] with half-open
intervals (lo, hi]: a value sitting exactly on an interior edge belongs to the
bin below, and a confidence of exactly 1.0 lands in the last bin.  Empty bins
contribute zero.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._util import atomic_write_text, fmt_float
from .core import PredictionView

DEFAULT_BINS = 15
_NLL_FLOOR = 1e-12


@dataclass(frozen=True)
class BinStats:
    """Per-bin reliability summary: counts, mean confidence, accuracy."""

    edges: np.ndarray       # (n_bins + 1,) bin boundaries over [0, 1]
    counts: np.ndarray      # (n_bins,) int64 instances per bin
    mean_confidence: np.ndarray  # (n_bins,) zero where empty
    accuracy: np.ndarray    # (n_bins,) zero where empty

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def n_instances(self) -> int:
        return int(self.counts.sum())

    def expected_error(self) -> float:
        """Count-weighted mean absolute gap between confidence and accuracy."""
        n = self.n_instances
        if n == 0:
            return 0.0
        gaps = np.abs(self.mean_confidence - self.accuracy)
        return float(np.sum(self.counts * gaps) / n)


def reliability_bins(view: PredictionView, n_bins: int = DEFAULT_BINS) -> BinStats:
    view.require_labels()
    idx = kernels.bin_index(view.conf, n_bins)
    correct = view.correct.astype(np.float64)
    counts, conf_sum, acc_sum = kernels.bin_totals(idx, view.conf, correct, n_bins)
    nonzero = counts > 0
    mean_conf = np.zeros(n_bins)
    acc = np.zeros(n_bins)
    np.divide(conf_sum, counts, out=mean_conf, where=nonzero)
    np.divide(acc_sum, counts, out=acc, where=nonzero)
    return BinStats(
        edges=kernels.bin_edges(n_bins),
        counts=counts,
        mean_confidence=mean_conf,
        accuracy=acc,
    )


def ece(view: PredictionView, n_bins: int = DEFAULT_BINS) -> float:
    """Top-label expected calibration error."""
    return reliability_bins(view, n_bins).expected_error()


def sce(view: PredictionView, n_bins: int = DEFAULT_BINS) -> float:
    """Static calibration error: the per-class analogue of ece.

    Every (instance, class) probability is binned; each cell's |accuracy -
    confidence| gap is weighted by count / (N * C).  Probabilities of exactly
    zero fall in bin 0 by the clamping rule of bin_index.
    """
    view.require_labels()
    probs = view.probs
    n, c = probs.shape
    flat = np.ascontiguousarray(probs.ravel())
    # combined cell id: class major, bin minor, one bin_totals pass overall.
    # ravel is row-major, so the class of flat entry k is k % c.
    per_class_bin = kernels.bin_index(flat, n_bins)
    class_of = np.tile(np.arange(c, dtype=np.int64), n)
    cell = class_of * n_bins + per_class_bin
    hit = (view.labels[:, None] == np.arange(c)).astype(np.float64).ravel()
    counts, conf_sum, acc_sum = kernels.bin_totals(cell, flat, hit, c * n_bins)
    nonzero = counts > 0
    gaps = np.zeros(c * n_bins)
    np.subtract(conf_sum, acc_sum, out=gaps, where=nonzero)
    np.divide(gaps, counts, out=gaps, where=nonzero)
    return float(np.sum(counts * np.abs(gaps)) / (n * c))


def accuracy(view: PredictionView) -> float:
    view.require_labels()
    return float(np.mean(view.correct))


def nll(view: PredictionView) -> float:
    """Mean negative log-likelihood of the true label, floored at 1e-12."""
    view.require_labels()
    p = view.probs[np.arange(view.probs.shape[0]), view.labels]
    return float(-np.mean(np.log(np.maximum(p, _NLL_FLOOR))))


def bins_to_csv(stats: BinStats) -> str:
    lines = ["bin_lo,bin_hi,count,conf,acc"]
    for b in range(stats.n_bins):
        lines.append(
            ",".join(
                (
                    fmt_float(stats.edges[b]),
                    fmt_float(stats.edges[b + 1]),
                    str(int(stats.counts[b])),
                    fmt_float(stats.mean_confidence[b]),
                    fmt_float(stats.accuracy[b]),
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_bins_csv(stats: BinStats, path) -> None:
    atomic_write_text(path, bins_to_csv(stats))


def reliability_svg(stats: BinStats, title: str = "") -> str:
    """Reliability diagram as a standalone SVG string.

    Accuracy bars per bin plus the identity diagonal.  Contains nothing
    run-dependent, so identical stats give identical bytes.
    """
    size, margin = 360.0, 40.0
    plot = size - 2 * margin
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="360" height="360" '
        'viewBox="0 0 360 360">',
        '<rect x="0" y="0" width="360" height="360" fill="white"/>',
        f'<rect x="{margin:g}" y="{margin:g}" width="{plot:g}" height="{plot:g}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
    ]
    if title:
        safe = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        parts.append(
            f'<text x="{size / 2:g}" y="{margin - 12:g}" font-size="13" '
            f'text-anchor="middle" font-family="sans-serif">{safe}</text>'
        )
    nb = stats.n_bins
    width = plot / nb
    for b in range(nb):
        if stats.counts[b] == 0:
            continue
        h = float(stats.accuracy[b]) * plot
        x = margin + b * width
        y = margin + plot - h
        parts.append(
            f'<rect x="{x:.3f}" y="{y:.3f}" width="{width:.3f}" height="{h:.3f}" '
            'fill="#6699cc" stroke="#335577" stroke-width="0.5"/>'
        )
        cy = margin + plot - float(stats.mean_confidence[b]) * plot
        parts.append(
            f'<circle cx="{x + width / 2:.3f}" cy="{cy:.3f}" r="2.5" fill="#cc3333"/>'
        )
    parts.append(
        f'<line x1="{margin:g}" y1="{margin + plot:g}" x2="{margin + plot:g}" '
        f'y2="{margin:g}" stroke="#999" stroke-width="1" stroke-dasharray="4,3"/>'
    )
    parts.append(
        f'<text x="{size / 2:g}" y="{size - 8:g}" font-size="11" text-anchor="middle" '
        'font-family="sans-serif">confidence</text>'
    )
    parts.append(
        f'<text x="12" y="{size / 2:g}" font-size="11" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 12 {size / 2:g})">accuracy</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_reliability_svg(stats: BinStats, path, title: str = "") -> None:
    atomic_write_text(path, reliability_svg(stats, title))
