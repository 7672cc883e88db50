"""taskprint: task fingerprints, bKLD distances, source selection, and evaluation."""

from .errors import (
    DuplicateTaskError,
    EmptyPoolError,
    FormatError,
    IncompatibleFingerprintError,
    MissingRecordError,
    TaskprintError,
    UnknownMeasureError,
    ValidationError,
)
from .fingerprint import (
    BinningConfig,
    FeatureMatrix,
    Fingerprint,
    WeightMode,
    bkld_distance,
    compute_fingerprint,
    kld,
    resolve_weights,
    softmax,
)

__version__ = "0.1.0"
