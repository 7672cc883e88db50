"""Task fingerprints and the binned Kullback-Leibler divergence (bKLD).

A fingerprint summarizes one task's image feature distribution as m
per-feature histograms over a shared activation range, plus the mean
feature vector. Fingerprints of two tasks are compared with a weighted
sum of per-feature KL divergences, where the source histograms are
softmax-smoothed to avoid empty bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import IncompatibleFingerprintError, ValidationError

# Row sums of freshly computed (float64) histograms.
HISTOGRAM_SUM_TOL = 1e-9
# Row sums after a round trip through the f32 file format.
STORED_SUM_TOL = 1e-4
# Normalization tolerance accepted by kld() inputs.
PROB_SUM_TOL = 1e-6

DEFAULT_RANGE_LO = 0.0
DEFAULT_RANGE_HI = 10.0


class WeightMode(Enum):
    """Feature weighting used by bkld_distance."""

    UNIFORM = "uniform"
    TARGET_SOFTMAX = "target_softmax"
    SOURCE_NORMALIZED = "source_normalized"


@dataclass(frozen=True)
class BinningConfig:
    """Uniform binning over a fixed global activation range."""

    n_bins: int
    range_lo: float = DEFAULT_RANGE_LO
    range_hi: float = DEFAULT_RANGE_HI

    def __post_init__(self):
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise ValidationError(f"n_bins must be an integer >= 2, got {self.n_bins}")
        if not (np.isfinite(self.range_lo) and np.isfinite(self.range_hi)):
            raise ValidationError("binning range must be finite")
        if not self.range_hi > self.range_lo:
            raise ValidationError(
                f"range_hi must exceed range_lo, got [{self.range_lo}, {self.range_hi}]"
            )

    @property
    def bin_width(self) -> float:
        return (self.range_hi - self.range_lo) / self.n_bins


@dataclass
class FeatureMatrix:
    """n_samples x n_features raw activations extracted for one task."""

    task_id: str
    values: np.ndarray
    extractor_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {self.values.shape}")
        n, m = self.values.shape
        if n < 1:
            raise ValidationError("feature matrix has no samples")
        if m < 1:
            raise ValidationError("feature matrix has no features")
        bad = np.argwhere(~np.isfinite(self.values))
        if bad.size:
            r, c = bad[0]
            raise ValidationError(f"non-finite value at sample {r}, feature {c}")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass
class Fingerprint:
    """Shareable task representation: per-feature histograms + mean features."""

    task_id: str
    binning: BinningConfig
    histograms: np.ndarray
    mean_features: np.ndarray
    n_samples_used: int
    extractor_id: str = ""

    def __post_init__(self):
        self.histograms = np.asarray(self.histograms, dtype=np.float64)
        self.mean_features = np.asarray(self.mean_features, dtype=np.float64)
        if self.histograms.ndim != 2:
            raise ValidationError(f"histograms must be 2-D, got shape {self.histograms.shape}")
        if self.histograms.shape[1] != self.binning.n_bins:
            raise ValidationError(
                f"histograms have {self.histograms.shape[1]} bins, binning declares {self.binning.n_bins}"
            )
        if self.mean_features.shape != (self.histograms.shape[0],):
            raise ValidationError(
                f"mean_features has shape {self.mean_features.shape}, expected ({self.histograms.shape[0]},)"
            )

    @property
    def n_features(self) -> int:
        return self.histograms.shape[0]

    @property
    def n_bins(self) -> int:
        return self.histograms.shape[1]

    def validate(self, sum_tol: float = HISTOGRAM_SUM_TOL) -> "Fingerprint":
        """Check histogram row normalization, value range, and finiteness."""
        if not np.isfinite(self.histograms).all():
            raise ValidationError("histograms contain non-finite values")
        if not np.isfinite(self.mean_features).all():
            raise ValidationError("mean_features contain non-finite values")
        if self.histograms.min(initial=0.0) < 0.0 or self.histograms.max(initial=0.0) > 1.0:
            raise ValidationError("histogram entries must lie in [0, 1]")
        sums = self.histograms.sum(axis=1)
        off = np.abs(sums - 1.0)
        if off.max(initial=0.0) > sum_tol:
            i = int(np.argmax(off))
            raise ValidationError(
                f"histogram row {i} sums to {sums[i]:.12g}, expected 1 within {sum_tol:g}"
            )
        if self.n_samples_used < 0:
            raise ValidationError("n_samples_used must be non-negative")
        return self


def compute_fingerprint(features: FeatureMatrix, binning: BinningConfig) -> Fingerprint:
    """Bin each feature dimension into normalized histograms.

    Values below the range go to bin 0, values at or above range_hi go to
    the last bin. Deterministic: identical inputs give bit-identical output.
    """
    vals = features.values
    n, m = vals.shape
    b = binning.n_bins
    idx = np.floor((vals - binning.range_lo) / binning.bin_width).astype(np.int64)
    np.clip(idx, 0, b - 1, out=idx)
    flat = idx + np.arange(m, dtype=np.int64)[None, :] * b
    counts = np.bincount(flat.ravel(), minlength=m * b).reshape(m, b)
    fp = Fingerprint(
        task_id=features.task_id,
        binning=binning,
        histograms=counts / n,
        mean_features=vals.mean(axis=0),
        n_samples_used=n,
        extractor_id=features.extractor_id,
    )
    return fp.validate()


def softmax(x) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("softmax of an empty vector")
    if not np.isfinite(x).all():
        raise ValidationError("softmax input must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def kld(p, q) -> float:
    """Kullback-Leibler divergence sum_j p_j ln(p_j / q_j), with 0 ln 0 = 0.

    q must be strictly positive; both inputs must be normalized within 1e-6.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValidationError(f"length mismatch: p has {p.size} entries, q has {q.size}")
    if p.size == 0:
        raise ValidationError("empty distributions")
    if np.any(q <= 0.0):
        raise ValidationError("q must be strictly positive")
    if np.any(p < 0.0):
        raise ValidationError("p must be non-negative")
    if abs(p.sum() - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"p sums to {p.sum():.9g}, expected 1 within {PROB_SUM_TOL:g}")
    if abs(q.sum() - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"q sums to {q.sum():.9g}, expected 1 within {PROB_SUM_TOL:g}")
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def resolve_weights(mode: WeightMode, source: Fingerprint, target: Fingerprint) -> np.ndarray:
    """Length-m feature weights for the given weighting mode.

    UNIFORM: 1/m each. TARGET_SOFTMAX: softmax of the target's mean
    features. SOURCE_NORMALIZED: source mean features, L1-normalized.
    """
    if source.n_features != target.n_features:
        raise IncompatibleFingerprintError(
            "n_features", f"source {source.n_features} vs target {target.n_features}"
        )
    m = source.n_features
    if mode is WeightMode.UNIFORM:
        return np.full(m, 1.0 / m)
    if mode is WeightMode.TARGET_SOFTMAX:
        return softmax(target.mean_features)
    if mode is WeightMode.SOURCE_NORMALIZED:
        norm = np.abs(source.mean_features).sum()
        if norm == 0.0:
            raise ValidationError(
                "SOURCE_NORMALIZED weights undefined: source mean_features are all zero"
            )
        return source.mean_features / norm
    raise ValidationError(f"unknown weight mode {mode!r}")


def check_compatible(source: Fingerprint, target: Fingerprint) -> None:
    """Raise IncompatibleFingerprintError naming the first mismatched field."""
    if source.n_features != target.n_features:
        raise IncompatibleFingerprintError(
            "n_features", f"{source.n_features} vs {target.n_features}"
        )
    if source.n_bins != target.n_bins:
        raise IncompatibleFingerprintError("n_bins", f"{source.n_bins} vs {target.n_bins}")
    if source.binning.range_lo != target.binning.range_lo:
        raise IncompatibleFingerprintError(
            "range_lo", f"{source.binning.range_lo} vs {target.binning.range_lo}"
        )
    if source.binning.range_hi != target.binning.range_hi:
        raise IncompatibleFingerprintError(
            "range_hi", f"{source.binning.range_hi} vs {target.binning.range_hi}"
        )
    if source.extractor_id != target.extractor_id:
        raise IncompatibleFingerprintError(
            "extractor_id", f"{source.extractor_id!r} vs {target.extractor_id!r}"
        )


def bkld_distance(source: Fingerprint, target: Fingerprint, mode: WeightMode) -> float:
    """Weighted sum over features of KLD(target hist, softmax(source hist)).

    Not symmetric, and not zero for source == target: the softmax smooths
    the source histograms away from the target's exact distribution.
    """
    check_compatible(source, target)
    w = resolve_weights(mode, source, target)
    p = target.histograms
    qhat = _softmax_rows(source.histograms)
    logr = np.zeros_like(p)
    np.log(np.divide(p, qhat, out=np.ones_like(p), where=p > 0), out=logr, where=p > 0)
    per_feature = (p * logr).sum(axis=1)
    return float(w @ per_feature)
