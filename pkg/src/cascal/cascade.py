"""Two-stage temperature regression trained across shifted meta-sets.

Stage one regresses one temperature per predicted class from the per-class
confidence-subgroup moments; stage two regresses one temperature per
confidence bin from the moments of the stage-one output.  Both stages
minimize the binned calibration error of their own output, mixed with weight
``lam`` on the class stage.  Gradients are stage-isolated: the bin-stage loss
never propagates back into the class network, which keeps each temperature
head responsible for exactly one correction.

Bin membership is frozen per loss evaluation, so the loss is piecewise
differentiable; the gradient used everywhere is the within-piece one.
"""

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import representation as rep
from ._util import child_seed
from .core import (
    BadMagicError,
    ConfigError,
    LogitsTable,
    PredictionView,
    TruncatedPayloadError,
    UnlabeledTableError,
    UnsupportedVersionError,
    derive_predictions,
    force_argmax,
    view_from_probs,
)
from .metaset import MetaSetCollection
from .regressor import (
    AdamState,
    ChecksumError,
    DimensionMismatchError,
    MlpNetwork,
    Normalizer,
    T_MAX_DEFAULT,
    T_MIN_DEFAULT,
    adam_step,
    network_from_bytes,
    network_to_bytes,
)

LAMBDA_DEFAULT = 0.4
CONF_BINS_DEFAULT = 10
EPOCHS_DEFAULT = 300
HIDDEN_DEFAULT = (128, 64)
LEARNING_RATE_DEFAULT = 1e-3

_MODEL_MAGIC = b"CASM"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class AblationFlags:
    """Switches for ablation runs; everything on is the full method."""

    category_stage: bool = True
    confidence_stage: bool = True
    category_mean: bool = True
    category_variance: bool = True
    confidence_mean: bool = True
    confidence_variance: bool = True

    def validate(self) -> None:
        if not (self.category_stage or self.confidence_stage):
            raise ConfigError("at least one cascade stage must stay enabled")

    def as_tuple(self):
        return (
            self.category_stage,
            self.confidence_stage,
            self.category_mean,
            self.category_variance,
            self.confidence_mean,
            self.confidence_variance,
        )


SINGLE_ABLATIONS = {
    "no-category-stage": AblationFlags(category_stage=False),
    "no-confidence-stage": AblationFlags(confidence_stage=False),
    "no-category-mean": AblationFlags(category_mean=False),
    "no-category-variance": AblationFlags(category_variance=False),
    "no-confidence-mean": AblationFlags(confidence_mean=False),
    "no-confidence-variance": AblationFlags(confidence_variance=False),
}


def category_input_dim(n_classes: int) -> int:
    return 2 * n_classes * rep.N_LEVELS * n_classes + n_classes * rep.N_LEVELS


def confidence_input_dim(n_bins: int, n_classes: int) -> int:
    return 2 * n_bins * n_classes + n_bins


def category_input(crep: rep.CategoryRepresentation, n_total: int, flags: AblationFlags) -> np.ndarray:
    """Flatten a category representation; ablated blocks are zeroed in place
    so the input layout (and network shape) never changes."""
    mean = crep.mean.ravel() if flags.category_mean else np.zeros(crep.mean.size)
    var = crep.variance.ravel() if flags.category_variance else np.zeros(crep.variance.size)
    sizes = crep.sizes.ravel() / float(n_total)
    return np.concatenate((mean, var, sizes))


def confidence_input(zrep: rep.ConfidenceRepresentation, n_total: int, flags: AblationFlags) -> np.ndarray:
    mean = zrep.mean.ravel() if flags.confidence_mean else np.zeros(zrep.mean.size)
    var = zrep.variance.ravel() if flags.confidence_variance else np.zeros(zrep.variance.size)
    sizes = zrep.sizes / float(n_total)
    return np.concatenate((mean, var, sizes))


def _check_temps(temps: np.ndarray, expected: int, what: str) -> np.ndarray:
    temps = np.asarray(temps, dtype=np.float64)
    if temps.shape != (expected,):
        raise DimensionMismatchError(f"expected {expected} {what}, got shape {temps.shape}")
    if not np.all(np.isfinite(temps)) or np.min(temps) <= 0.0:
        raise ConfigError(f"{what} must be finite and positive")
    return temps


def scale_by_category(table: LogitsTable, class_temps: np.ndarray) -> LogitsTable:
    """Divide each row's logits by the temperature of its predicted class."""
    temps = _check_temps(class_temps, table.n_classes, "class temperatures")
    pred = derive_predictions(table).pred
    scaled = table.logits / temps[pred][:, None]
    return LogitsTable(scaled, table.labels, name=table.name)


def scale_by_confidence(table: LogitsTable, bin_temps: np.ndarray) -> PredictionView:
    """Divide each row's logits by the temperature of its confidence bin."""
    temps = _check_temps(bin_temps, len(np.atleast_1d(bin_temps)), "bin temperatures")
    view = derive_predictions(table)
    bins = kernels.bin_index(view.conf, len(temps))
    probs = kernels.scaled_softmax(table.logits, temps[bins])
    return view_from_probs(force_argmax(probs, view.pred), table.labels)


@dataclass
class CascadeModel:
    class_net: MlpNetwork
    bin_net: MlpNetwork
    lam: float
    n_classes: int
    n_conf_bins: int
    thresholds: tuple
    flags: AblationFlags

    @property
    def t_min(self) -> float:
        return self.class_net.t_min

    @property
    def t_max(self) -> float:
        return self.class_net.t_max


@dataclass(frozen=True)
class CascadeTemperatures:
    class_temps: np.ndarray
    bin_temps: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    category_loss: float
    confidence_loss: float
    grad_category: np.ndarray | None   # d total / d class-net params
    grad_confidence: np.ndarray | None
    class_temps: np.ndarray
    bin_temps: np.ndarray


@dataclass
class _Member:
    """Static per-table quantities reused every epoch."""

    logits: np.ndarray
    pred: np.ndarray
    labels: np.ndarray
    correct: np.ndarray  # float64 0/1
    crep: rep.CategoryRepresentation
    view: PredictionView
    n: int


def _prepare_member(table: LogitsTable, thresholds) -> _Member:
    if table.labels is None:
        raise UnlabeledTableError(f"training on {table.name!r} requires labels")
    view = derive_predictions(table)
    return _Member(
        logits=table.logits,
        pred=view.pred,
        labels=table.labels,
        correct=view.correct.astype(np.float64),
        crep=rep.category_representation(view, thresholds),
        view=view,
        n=table.n_instances,
    )


def _binned_error_and_grad(conf: np.ndarray, correct: np.ndarray, n_bins: int):
    """Binned calibration error plus its gradient w.r.t. each confidence.

    With bin membership held fixed, d error / d conf_i is sign(bin gap) / N
    for the bin that holds instance i.
    """
    idx = kernels.bin_index(conf, n_bins)
    counts, conf_sum, acc_sum = kernels.bin_totals(idx, conf, correct, n_bins)
    n = conf.shape[0]
    diff = conf_sum - acc_sum
    value = float(np.abs(diff).sum() / n)
    dconf = np.sign(diff)[idx] / n
    return value, dconf, idx


def _stage_one(model: CascadeModel, member: _Member):
    """Class temperatures and the scaled probabilities/confidences."""
    if model.flags.category_stage:
        x = category_input(member.crep, member.n, model.flags)
        t_cls, cache = model.class_net.forward(x)
    else:
        t_cls, cache = np.ones(model.n_classes), None
    row_t = t_cls[member.pred]
    probs1 = kernels.scaled_softmax(member.logits, row_t)
    conf1 = probs1[np.arange(member.n), member.pred]
    return t_cls, cache, row_t, probs1, conf1


def _stage_two_input(model: CascadeModel, member: _Member, probs1, conf1):
    view1 = PredictionView(
        probs=probs1,
        pred=member.pred,
        conf=conf1,
        correct=member.view.correct,
        labels=member.labels,
    )
    zrep = rep.confidence_representation(view1, model.n_conf_bins)
    return zrep, confidence_input(zrep, member.n, model.flags)


def _loss_prepared(model: CascadeModel, member: _Member) -> LossBreakdown:
    m_bins = model.n_conf_bins
    lam = model.lam
    rows = np.arange(member.n)

    t_cls, cache_cls, row_t1, probs1, conf1 = _stage_one(model, member)
    loss_cls, dconf1, _ = _binned_error_and_grad(conf1, member.correct, m_bins)

    grad_category = None
    if model.flags.category_stage:
        dconf_dt1 = kernels.conf_temp_grad(member.logits, probs1, member.pred, row_t1)
        g_tcls = np.bincount(
            member.pred, weights=dconf1 * dconf_dt1, minlength=model.n_classes
        )
        grad_category = model.class_net.backward(cache_cls, lam * g_tcls)

    zrep, x_con = _stage_two_input(model, member, probs1, conf1)
    if model.flags.confidence_stage:
        t_con, cache_con = model.bin_net.forward(x_con)
    else:
        t_con, cache_con = np.ones(m_bins), None
    bins = zrep.bin_of
    row_t2 = t_con[bins]
    scaled_logits = member.logits / row_t1[:, None]
    probs2 = kernels.scaled_softmax(scaled_logits, row_t2)
    conf2 = probs2[rows, member.pred]
    loss_con, dconf2, _ = _binned_error_and_grad(conf2, member.correct, m_bins)

    grad_confidence = None
    if model.flags.confidence_stage:
        dconf_dt2 = kernels.conf_temp_grad(scaled_logits, probs2, member.pred, row_t2)
        g_tcon = np.bincount(bins, weights=dconf2 * dconf_dt2, minlength=m_bins)
        grad_confidence = model.bin_net.backward(cache_con, (1.0 - lam) * g_tcon)

    return LossBreakdown(
        total=lam * loss_cls + (1.0 - lam) * loss_con,
        category_loss=loss_cls,
        confidence_loss=loss_con,
        grad_category=grad_category,
        grad_confidence=grad_confidence,
        class_temps=t_cls,
        bin_temps=t_con,
    )


def cascade_loss(model: CascadeModel, table: LogitsTable) -> LossBreakdown:
    """Joint loss and stage-isolated parameter gradients for one table."""
    return _loss_prepared(model, _prepare_member(table, model.thresholds))


def train_cascade(
    collection: MetaSetCollection,
    lam: float = LAMBDA_DEFAULT,
    epochs: int = EPOCHS_DEFAULT,
    hidden=HIDDEN_DEFAULT,
    lr: float = LEARNING_RATE_DEFAULT,
    n_conf_bins: int = CONF_BINS_DEFAULT,
    thresholds=rep.DEFAULT_THRESHOLDS,
    t_min: float = T_MIN_DEFAULT,
    t_max: float = T_MAX_DEFAULT,
    flags: AblationFlags = None,
    seed: int = 0,
):
    """Fit both temperature networks over the meta-set collection.

    Per epoch, each meta-set contributes one loss evaluation and one Adam step
    per enabled network, in fixed member order.  Returns (model, history)
    where history holds the per-epoch mean of the joint loss.
    """
    flags = flags if flags is not None else AblationFlags()
    flags.validate()
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lam must be in [0, 1], got {lam}")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if n_conf_bins < 2:
        raise ConfigError(f"need at least 2 confidence bins, got {n_conf_bins}")
    c = collection.n_classes
    members = [_prepare_member(m, thresholds) for m in collection.members]

    class_net = MlpNetwork.create(
        category_input_dim(c), hidden, c, seed=child_seed(seed, 101), t_min=t_min, t_max=t_max
    )
    bin_net = MlpNetwork.create(
        confidence_input_dim(n_conf_bins, c),
        hidden,
        n_conf_bins,
        seed=child_seed(seed, 102),
        t_min=t_min,
        t_max=t_max,
    )
    # both normalizers are fitted on identity-temperature inputs so the
    # preprocessing is fixed before any parameter moves
    class_net.normalizer = Normalizer.fit(
        np.stack([category_input(mm.crep, mm.n, flags) for mm in members])
    )
    bin_net.normalizer = Normalizer.fit(
        np.stack(
            [
                confidence_input(
                    rep.confidence_representation(mm.view, n_conf_bins), mm.n, flags
                )
                for mm in members
            ]
        )
    )

    model = CascadeModel(
        class_net=class_net,
        bin_net=bin_net,
        lam=float(lam),
        n_classes=c,
        n_conf_bins=int(n_conf_bins),
        thresholds=tuple(thresholds),
        flags=flags,
    )
    opt_cls = AdamState(lr=lr)
    opt_con = AdamState(lr=lr)
    history = np.zeros(epochs)
    for epoch in range(epochs):
        total = 0.0
        for mm in members:
            out = _loss_prepared(model, mm)
            if flags.category_stage:
                class_net.set_params(
                    adam_step(opt_cls, class_net.get_params(), out.grad_category)
                )
            if flags.confidence_stage:
                bin_net.set_params(
                    adam_step(opt_con, bin_net.get_params(), out.grad_confidence)
                )
            total += out.total
        history[epoch] = total / len(members)
    return model, history


def apply_cascade(model: CascadeModel, table: LogitsTable):
    """Calibrate a table, labels not required; returns (view, temperatures)."""
    if table.n_classes != model.n_classes:
        raise DimensionMismatchError(
            f"model was trained for C={model.n_classes}, table has C={table.n_classes}"
        )
    view0 = derive_predictions(table)
    n = table.n_instances
    crep = rep.category_representation(view0, model.thresholds)
    if model.flags.category_stage:
        t_cls, _ = model.class_net.forward(category_input(crep, n, model.flags))
    else:
        t_cls = np.ones(model.n_classes)
    row_t1 = t_cls[view0.pred]
    probs1 = kernels.scaled_softmax(table.logits, row_t1)
    conf1 = probs1[np.arange(n), view0.pred]
    view1 = PredictionView(
        probs=probs1, pred=view0.pred, conf=conf1, correct=view0.correct, labels=table.labels
    )
    zrep = rep.confidence_representation(view1, model.n_conf_bins)
    if model.flags.confidence_stage:
        t_con, _ = model.bin_net.forward(confidence_input(zrep, n, model.flags))
    else:
        t_con = np.ones(model.n_conf_bins)
    probs2 = kernels.scaled_softmax(table.logits / row_t1[:, None], t_con[zrep.bin_of])
    probs2 = force_argmax(probs2, view0.pred)
    final = view_from_probs(probs2, table.labels)
    return final, CascadeTemperatures(class_temps=t_cls, bin_temps=t_con)


# --- model files --------------------------------------------------------------
# magic, version, lam, C, M, thresholds, flag bits, then both network
# checkpoints length-prefixed, and a sha256 of everything before it.


def model_to_bytes(model: CascadeModel) -> bytes:
    head = _MODEL_MAGIC + struct.pack(
        "<BdIIdd",
        _MODEL_VERSION,
        model.lam,
        model.n_classes,
        model.n_conf_bins,
        model.thresholds[0],
        model.thresholds[1],
    )
    head += bytes(int(b) for b in model.flags.as_tuple())
    cls_blob = network_to_bytes(model.class_net)
    con_blob = network_to_bytes(model.bin_net)
    payload = (
        head
        + struct.pack("<Q", len(cls_blob))
        + cls_blob
        + struct.pack("<Q", len(con_blob))
        + con_blob
    )
    return payload + hashlib.sha256(payload).digest()


def model_from_bytes(blob: bytes) -> CascadeModel:
    if len(blob) < 79:
        raise TruncatedPayloadError(f"model file too short: {len(blob)} bytes")
    if blob[:4] != _MODEL_MAGIC:
        raise BadMagicError(f"bad model magic {blob[:4]!r}")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("model checksum mismatch")
    version, lam, c, m, th_lo, th_hi = struct.unpack_from("<BdIIdd", blob, 4)
    if version != _MODEL_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {version}")
    off = 4 + struct.calcsize("<BdIIdd")
    flags = AblationFlags(*(bool(b) for b in blob[off : off + 6]))
    off += 6
    (n_cls,) = struct.unpack_from("<Q", blob, off)
    off += 8
    class_net = network_from_bytes(blob[off : off + n_cls])
    off += n_cls
    (n_con,) = struct.unpack_from("<Q", blob, off)
    off += 8
    bin_net = network_from_bytes(blob[off : off + n_con])
    off += n_con
    if off != len(payload):
        raise TruncatedPayloadError("model file has trailing bytes")
    return CascadeModel(
        class_net=class_net,
        bin_net=bin_net,
        lam=lam,
        n_classes=c,
        n_conf_bins=m,
        thresholds=(th_lo, th_hi),
        flags=flags,
    )


def save_model(model: CascadeModel, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(model_to_bytes(model))
    os.replace(tmp, path)


def load_model(path) -> CascadeModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
