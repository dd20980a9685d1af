"""Hot numeric kernels: binning totals, subgroup moments, PAV, scaled softmax.

Every kernel exists twice: a loop version that numba compiles with ``@njit``
and a vectorised NumPy version used as the fallback (see
:mod:`cascal.backend` for how the active path is chosen).  The loop versions
are written in numba's nopython subset but are also runnable as plain Python,
which is how the PAV fallback executes.

``bin_index`` is deliberately *not* backend-dependent: bin membership feeds
metric definitions and must be decided identically everywhere.
"""

import numpy as np

from . import backend


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1, dtype=np.float64) / n_bins


def bin_index(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Assign values in [0, 1] to the half-open bins (b/B, (b+1)/B].

    A value sitting exactly on an edge belongs to the bin below; values <= 0
    (possible for raw class probabilities) map to bin 0.
    """
    if n_bins < 1:
        raise ValueError(f"bin count must be >= 1, got {n_bins}")
    edges = bin_edges(n_bins)
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.clip(idx, 0, n_bins - 1).astype(np.int64)


# --- loop kernels (numba-compilable) ---------------------------------------


def _bin_totals_loop(idx, conf, correct, n_bins):
    counts = np.zeros(n_bins, dtype=np.float64)
    conf_sum = np.zeros(n_bins, dtype=np.float64)
    acc_sum = np.zeros(n_bins, dtype=np.float64)
    for i in range(idx.shape[0]):
        b = idx[i]
        counts[b] += 1.0
        conf_sum[b] += conf[i]
        acc_sum[b] += correct[i]
    return counts, conf_sum, acc_sum


def _cell_moments_loop(cell, probs, n_cells):
    n, c = probs.shape
    counts = np.zeros(n_cells, dtype=np.float64)
    sums = np.zeros((n_cells, c), dtype=np.float64)
    sumsq = np.zeros((n_cells, c), dtype=np.float64)
    for i in range(n):
        k = cell[i]
        counts[k] += 1.0
        for j in range(c):
            v = probs[i, j]
            sums[k, j] += v
            sumsq[k, j] += v * v
    return counts, sums, sumsq


def _pav_loop(y, w):
    # Weighted pool-adjacent-violators on a sequence already sorted by the
    # predictor.  Returns the fitted nondecreasing values per input point.
    n = y.shape[0]
    level = np.empty(n, dtype=np.float64)
    weight = np.empty(n, dtype=np.float64)
    start = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        level[m] = y[i]
        weight[m] = w[i]
        start[m] = i
        m += 1
        while m > 1 and level[m - 2] > level[m - 1]:
            tot = weight[m - 2] + weight[m - 1]
            level[m - 2] = (weight[m - 2] * level[m - 2] + weight[m - 1] * level[m - 1]) / tot
            weight[m - 2] = tot
            m -= 1
    out = np.empty(n, dtype=np.float64)
    for b in range(m):
        hi = start[b + 1] if b + 1 < m else n
        for i in range(start[b], hi):
            out[i] = level[b]
    return out


def _scaled_softmax_loop(logits, temps):
    n, c = logits.shape
    out = np.empty((n, c), dtype=np.float64)
    for i in range(n):
        t = temps[i]
        mx = logits[i, 0] / t
        for j in range(1, c):
            v = logits[i, j] / t
            if v > mx:
                mx = v
        s = 0.0
        for j in range(c):
            e = np.exp(logits[i, j] / t - mx)
            out[i, j] = e
            s += e
        for j in range(c):
            out[i, j] /= s
    return out


def _conf_temp_grad_loop(logits, probs, pred, temps):
    # d(top probability)/d(temperature) for per-row scaling z -> z / t:
    # -(1/t^2) * p_top * (z_top - sum_j p_j z_j), with p the scaled softmax.
    n, c = logits.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        mean_z = 0.0
        for j in range(c):
            mean_z += probs[i, j] * logits[i, j]
        k = pred[i]
        out[i] = -probs[i, k] * (logits[i, k] - mean_z) / (temps[i] * temps[i])
    return out


# --- NumPy fallbacks --------------------------------------------------------


def _bin_totals_numpy(idx, conf, correct, n_bins):
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    return counts, conf_sum, acc_sum


def _cell_moments_numpy(cell, probs, n_cells):
    c = probs.shape[1]
    counts = np.bincount(cell, minlength=n_cells).astype(np.float64)
    sums = np.zeros((n_cells, c), dtype=np.float64)
    sumsq = np.zeros((n_cells, c), dtype=np.float64)
    np.add.at(sums, cell, probs)
    np.add.at(sumsq, cell, probs * probs)
    return counts, sums, sumsq


def _scaled_softmax_numpy(logits, temps):
    z = logits / temps[:, None]
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _conf_temp_grad_numpy(logits, probs, pred, temps):
    mean_z = np.einsum("ij,ij->i", probs, logits)
    rows = np.arange(logits.shape[0])
    top = probs[rows, pred]
    return -top * (logits[rows, pred] - mean_z) / (temps * temps)


_NUMPY_IMPL = {
    "bin_totals": _bin_totals_numpy,
    "cell_moments": _cell_moments_numpy,
    "pav": _pav_loop,  # same algorithm, interpreted
    "scaled_softmax": _scaled_softmax_numpy,
    "conf_temp_grad": _conf_temp_grad_numpy,
}

_LOOP_SOURCES = {
    "bin_totals": _bin_totals_loop,
    "cell_moments": _cell_moments_loop,
    "pav": _pav_loop,
    "scaled_softmax": _scaled_softmax_loop,
    "conf_temp_grad": _conf_temp_grad_loop,
}

_numba_impl_cache: dict = {}


def numba_impl() -> dict:
    """Compile (once) and return the numba kernel set.

    Raises when numba is unavailable; intended for the benchmark and the
    backend-equivalence tests.
    """
    if not _numba_impl_cache:
        for name, fn in _LOOP_SOURCES.items():
            _numba_impl_cache[name] = backend.jit(fn)
    return dict(_numba_impl_cache)


if backend.NUMBA_ENABLED:
    _ACTIVE = numba_impl()
else:
    _ACTIVE = _NUMPY_IMPL

bin_totals = _ACTIVE["bin_totals"]
cell_moments = _ACTIVE["cell_moments"]
pav = _ACTIVE["pav"]
scaled_softmax = _ACTIVE["scaled_softmax"]
conf_temp_grad = _ACTIVE["conf_temp_grad"]
