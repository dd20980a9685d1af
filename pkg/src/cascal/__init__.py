"""Post-hoc confidence calibration under distribution shift.

The package turns raw classifier logits into calibrated probabilities.  It
ships the classic single-map baselines (temperature scaling, its ensemble
variant, isotonic maps) plus a two-stage method that regresses per-class and
per-confidence-bin temperatures from distribution summaries of shifted
meta-sets, so a single trained model adapts its correction to each test set
without needing labels at application time.
"""

from .backend import NUMBA_ENABLED, backend_name
from .baselines import Calibrator, apply_calibrator, fit_calibrator
from .cascade import (
    AblationFlags,
    CascadeModel,
    apply_cascade,
    cascade_loss,
    load_model,
    save_model,
    train_cascade,
)
from .config import RunConfig, load_config
from .core import (
    CascalError,
    ConfigError,
    LogitsTable,
    PredictionView,
    derive_predictions,
    read_logits_file,
    softmax_rows,
    write_logits_file,
)
from .metaset import (
    MetaSetCollection,
    ShiftTransform,
    SyntheticWorld,
    build_metasets,
    build_test_sets,
    generate_split,
    load_metasets,
    sample_world,
    save_metasets,
)
from .metrics import accuracy, ece, nll, reliability_bins, sce
from .regressor import AdamState, MlpNetwork, adam_step, grad_check
from .representation import (
    CategoryRepresentation,
    ConfidenceRepresentation,
    category_representation,
    confidence_representation,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "Calibrator",
    "apply_calibrator",
    "fit_calibrator",
    "AblationFlags",
    "CascadeModel",
    "apply_cascade",
    "cascade_loss",
    "load_model",
    "save_model",
    "train_cascade",
    "RunConfig",
    "load_config",
    "CascalError",
    "ConfigError",
    "LogitsTable",
    "PredictionView",
    "derive_predictions",
    "read_logits_file",
    "softmax_rows",
    "write_logits_file",
    "MetaSetCollection",
    "ShiftTransform",
    "SyntheticWorld",
    "build_metasets",
    "build_test_sets",
    "generate_split",
    "load_metasets",
    "sample_world",
    "save_metasets",
    "accuracy",
    "ece",
    "nll",
    "reliability_bins",
    "sce",
    "AdamState",
    "MlpNetwork",
    "adam_step",
    "grad_check",
    "CategoryRepresentation",
    "ConfidenceRepresentation",
    "category_representation",
    "confidence_representation",
    "__version__",
]
