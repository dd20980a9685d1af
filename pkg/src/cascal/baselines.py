"""Reference post-hoc calibrators: the temperature and isotonic families.

Every calibrator here leaves the predicted class untouched.  For the
isotonic maps that needs care: the fitted step function alone can demote the
top probability below a rival, so application clamps the remapped top
confidence to stay strictly above the rescaled runner-up (and above 1/C).
The clamp uses a 1e-9 relative margin, which both keeps the ordering strict
under float rounding and leaves the calibration curve essentially unchanged.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._util import atomic_write_text
from .core import (
    LogitsTable,
    PredictionView,
    UnlabeledTableError,
    derive_predictions,
    force_argmax,
    softmax_rows,
    view_from_probs,
)

T_LO = 0.05
T_HI = 20.0
_T_TOL = 1e-4          # absolute tolerance on the fitted temperature
ETS_GRID_STEP = 0.02
ETS_MIN_SIGNAL = 0.02  # floor on w1 + w2; the all-uniform mixture has no argmax
_NLL_FLOOR = 1e-12
_SAFE_MARGIN = 1.0 + 1e-9

KINDS = ("ts", "ets", "ir", "irm", "ts-ir")


@dataclass(frozen=True)
class Calibrator:
    """Fitted parameters for one baseline; which fields are set depends on kind."""

    kind: str
    fit_source: str = "clean"         # "clean" val set or "pooled" meta-set union
    temperature: float | None = None  # ts, ets, ts-ir
    weights: tuple | None = None      # ets: (w1, w2, w3)
    knots_x: np.ndarray | None = None  # ir, irm, ts-ir step function
    knots_y: np.ndarray | None = None


def _require_labels(table: LogitsTable) -> np.ndarray:
    if table.labels is None:
        raise UnlabeledTableError(f"fitting on {table.name!r} requires labels")
    return table.labels


def _nll_at_temperature(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    z = logits / t
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


def _golden_min(f, lo: float, hi: float, xtol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    invphi2 = (3.0 - math.sqrt(5.0)) / 2.0
    a, b = lo, hi
    h = b - a
    c, d = a + invphi2 * h, a + invphi * h
    fc, fd = f(c), f(d)
    while h > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            h = b - a
            c = a + invphi2 * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + invphi * h
            fd = f(d)
    return (a + b) / 2.0


def fit_ts(table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    """Single-temperature fit by golden-section search on held-out nll."""
    labels = _require_labels(table)
    z = table.logits

    def obj(x):
        return _nll_at_temperature(z, labels, math.exp(x))

    # searching log-temperature keeps the bracket well conditioned at both ends
    x_best = _golden_min(obj, math.log(T_LO), math.log(T_HI), xtol=_T_TOL / T_HI)
    t_best = math.exp(x_best)
    if _nll_at_temperature(z, labels, t_best) >= _nll_at_temperature(z, labels, 1.0):
        t_best = 1.0
    return Calibrator(kind="ts", fit_source=fit_source, temperature=float(t_best))


def apply_ts(cal: Calibrator, table: LogitsTable) -> PredictionView:
    base = derive_predictions(table)
    temps = np.full(table.n_instances, float(cal.temperature))
    probs = kernels.scaled_softmax(table.logits, temps)
    return view_from_probs(force_argmax(probs, base.pred), table.labels)


def _ets_feasible(w1: float, w2: float) -> bool:
    return w1 >= 0.0 and w2 >= 0.0 and w1 + w2 <= 1.0 and w1 + w2 >= ETS_MIN_SIGNAL


def fit_ets(table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    """Three-component mixture: tempered softmax, raw softmax, uniform.

    Weights live on the simplex; a coarse 0.02 grid is followed by a shrinking
    pattern search.  Mixtures with w1 + w2 < 0.02 are excluded so the output
    always carries the original ranking.
    """
    labels = _require_labels(table)
    t = fit_ts(table, fit_source).temperature
    n, c = table.logits.shape
    rows = np.arange(n)
    v1 = kernels.scaled_softmax(table.logits, np.full(n, t))[rows, labels]
    v2 = softmax_rows(table.logits)[rows, labels]
    u = 1.0 / c

    def obj(w1, w2):
        mix = w1 * v1 + w2 * v2 + (1.0 - w1 - w2) * u
        return float(-np.mean(np.log(np.maximum(mix, _NLL_FLOOR))))

    steps = int(round(1.0 / ETS_GRID_STEP))
    best_val, best = math.inf, (1.0, 0.0)
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            w1, w2 = i * ETS_GRID_STEP, j * ETS_GRID_STEP
            if not _ets_feasible(w1, w2):
                continue
            val = obj(w1, w2)
            if val < best_val:
                best_val, best = val, (w1, w2)

    w1, w2 = best
    step = ETS_GRID_STEP
    dirs = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))
    while step >= 1e-5:
        cand_best, cand = best_val, None
        for dx, dy in dirs:
            a, b = w1 + dx * step, w2 + dy * step
            if not _ets_feasible(a, b):
                continue
            val = obj(a, b)
            if val < cand_best:
                cand_best, cand = val, (a, b)
        if cand is None:
            step /= 2.0
        else:
            best_val, (w1, w2) = cand_best, cand
    return Calibrator(
        kind="ets",
        fit_source=fit_source,
        temperature=float(t),
        weights=(float(w1), float(w2), float(1.0 - w1 - w2)),
    )


def apply_ets(cal: Calibrator, table: LogitsTable) -> PredictionView:
    base = derive_predictions(table)
    w1, w2, w3 = cal.weights
    n, c = table.logits.shape
    p1 = kernels.scaled_softmax(table.logits, np.full(n, float(cal.temperature)))
    p2 = softmax_rows(table.logits)
    probs = w1 * p1 + w2 * p2 + w3 / c
    return view_from_probs(force_argmax(probs, base.pred), table.labels)


# --- isotonic family ----------------------------------------------------------


def _isotonic_knots(x: np.ndarray, y: np.ndarray):
    """Isotonic regression of y on x; equal x values are pooled exactly first."""
    ux, inverse = np.unique(x, return_inverse=True)
    weights = np.bincount(inverse).astype(np.float64)
    means = np.bincount(inverse, weights=y) / weights
    return ux, kernels.pav(means, weights)


def _step_values(knots_x: np.ndarray, knots_y: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Right-continuous step lookup; queries below the first knot take its value."""
    idx = np.searchsorted(knots_x, q, side="right") - 1
    return knots_y[np.clip(idx, 0, len(knots_x) - 1)]


def _retarget_top(view: PredictionView, mapped: np.ndarray) -> np.ndarray:
    """Rebuild probability rows with the top entry moved to ``mapped``.

    Non-top entries are rescaled proportionally.  The target is clamped so the
    predicted class keeps a strict lead over the runner-up and over 1/C.
    """
    probs, conf, pred = view.probs, view.conf, view.pred
    n, c = probs.shape
    rows = np.arange(n)
    second = np.partition(probs, c - 2, axis=1)[:, c - 2]
    # rest is the summed mass outside the top entry; 1 - conf would lose it to
    # cancellation once conf sits within a few ulps of 1
    others = probs.copy()
    others[rows, pred] = 0.0
    rest = others.sum(axis=1)
    denom = rest + second
    barrier = np.divide(second, denom, out=np.zeros(n), where=denom > 0)
    floor = np.maximum(barrier, 1.0 / c) * _SAFE_MARGIN
    target = np.minimum(np.maximum(mapped, floor), 1.0)

    scale = np.divide(1.0 - target, rest, out=np.zeros(n), where=rest > 0)
    out = probs * scale[:, None]
    saturated = np.nonzero(rest <= 0)[0]  # top prob was exactly 1
    if saturated.size:
        out[saturated] = ((1.0 - target[saturated]) / (c - 1))[:, None]
    out[rows, pred] = target
    return out


def fit_isotonic(table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    """Isotonic map from top-label confidence to empirical correctness."""
    _require_labels(table)
    view = derive_predictions(table)
    kx, ky = _isotonic_knots(view.conf, view.correct.astype(np.float64))
    return Calibrator(kind="ir", fit_source=fit_source, knots_x=kx, knots_y=ky)


def apply_isotonic(cal: Calibrator, table: LogitsTable) -> PredictionView:
    view = derive_predictions(table)
    mapped = _step_values(cal.knots_x, cal.knots_y, view.conf)
    probs = force_argmax(_retarget_top(view, mapped), view.pred)
    return view_from_probs(probs, table.labels)


def fit_irm(table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    """One shared isotonic map over all (instance, class) probabilities."""
    labels = _require_labels(table)
    view = derive_predictions(table)
    n, c = view.probs.shape
    x = view.probs.ravel()
    y = (labels[:, None] == np.arange(c)).astype(np.float64).ravel()
    kx, ky = _isotonic_knots(x, y)
    return Calibrator(kind="irm", fit_source=fit_source, knots_x=kx, knots_y=ky)


def apply_irm(cal: Calibrator, table: LogitsTable) -> PredictionView:
    view = derive_predictions(table)
    n, c = view.probs.shape
    mapped = _step_values(cal.knots_x, cal.knots_y, view.probs.ravel()).reshape(n, c)
    # isotonic plateaus collapse distinct probabilities; the tiny additive term
    # restores the original strict ordering before renormalization
    scores = mapped + 1e-9 * view.probs
    scores = force_argmax(scores, view.pred)
    probs = scores / scores.sum(axis=1, keepdims=True)
    return view_from_probs(probs, table.labels)


def fit_ts_ir(table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    """Temperature scaling first, then isotonic on the scaled confidences."""
    _require_labels(table)
    ts = fit_ts(table, fit_source)
    scaled = apply_ts(ts, table)
    kx, ky = _isotonic_knots(scaled.conf, scaled.correct.astype(np.float64))
    return Calibrator(
        kind="ts-ir",
        fit_source=fit_source,
        temperature=ts.temperature,
        knots_x=kx,
        knots_y=ky,
    )


def apply_ts_ir(cal: Calibrator, table: LogitsTable) -> PredictionView:
    inner = apply_ts(Calibrator(kind="ts", temperature=cal.temperature), table)
    mapped = _step_values(cal.knots_x, cal.knots_y, inner.conf)
    probs = force_argmax(_retarget_top(inner, mapped), inner.pred)
    return view_from_probs(probs, table.labels)


_FIT = {
    "ts": fit_ts,
    "ets": fit_ets,
    "ir": fit_isotonic,
    "irm": fit_irm,
    "ts-ir": fit_ts_ir,
}
_APPLY = {
    "ts": apply_ts,
    "ets": apply_ets,
    "ir": apply_isotonic,
    "irm": apply_irm,
    "ts-ir": apply_ts_ir,
}


def fit_calibrator(kind: str, table: LogitsTable, fit_source: str = "clean") -> Calibrator:
    if kind not in _FIT:
        raise ValueError(f"unknown calibrator kind {kind!r}; expected one of {KINDS}")
    return _FIT[kind](table, fit_source)


def apply_calibrator(cal: Calibrator, table: LogitsTable) -> PredictionView:
    if cal.kind not in _APPLY:
        raise ValueError(f"unknown calibrator kind {cal.kind!r}")
    return _APPLY[cal.kind](cal, table)


def calibrator_to_dict(cal: Calibrator) -> dict:
    return {
        "kind": cal.kind,
        "fit_source": cal.fit_source,
        "temperature": cal.temperature,
        "weights": list(cal.weights) if cal.weights is not None else None,
        "knots_x": cal.knots_x.tolist() if cal.knots_x is not None else None,
        "knots_y": cal.knots_y.tolist() if cal.knots_y is not None else None,
    }


def calibrator_from_dict(d: dict) -> Calibrator:
    return Calibrator(
        kind=d["kind"],
        fit_source=d.get("fit_source", "clean"),
        temperature=d.get("temperature"),
        weights=tuple(d["weights"]) if d.get("weights") is not None else None,
        knots_x=np.asarray(d["knots_x"], dtype=np.float64) if d.get("knots_x") is not None else None,
        knots_y=np.asarray(d["knots_y"], dtype=np.float64) if d.get("knots_y") is not None else None,
    )


def save_calibrator(cal: Calibrator, path) -> None:
    atomic_write_text(path, json.dumps(calibrator_to_dict(cal), indent=1, sort_keys=True) + "\n")


def load_calibrator(path) -> Calibrator:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        return calibrator_from_dict(json.load(fh))
