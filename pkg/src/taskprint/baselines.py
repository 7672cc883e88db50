"""Baseline task distances: FID, P2L, VDNA-style histogram EMD, manual keywords."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fingerprint import FeatureMatrix, Fingerprint, check_compatible, kld, softmax

# Eigenvalues of (near-)PSD matrices above this are a hard failure;
# anything in [-PSD_TOL, 0) is clamped to zero.
PSD_TOL = 1e-8


@dataclass
class GaussianSummary:
    """First and second moments of one task's feature matrix."""

    task_id: str
    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        m = self.mean.shape[0]
        if self.mean.ndim != 1:
            raise ValidationError("mean must be 1-D")
        if self.covariance.shape != (m, m):
            raise ValidationError(
                f"covariance has shape {self.covariance.shape}, expected ({m}, {m})"
            )
        if not (np.isfinite(self.mean).all() and np.isfinite(self.covariance).all()):
            raise ValidationError("Gaussian summary contains non-finite values")
        asym = np.abs(self.covariance - self.covariance.T).max(initial=0.0)
        if asym > 1e-8:
            raise ValidationError(f"covariance asymmetric by {asym:.3g} (tolerance 1e-8)")

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


@dataclass
class KeywordSet:
    """Semantic task description as lowercase keywords, plus the task size."""

    task_id: str
    keywords: frozenset = field(default_factory=frozenset)
    task_size: int = 0

    def __post_init__(self):
        self.keywords = frozenset(str(k).lower() for k in self.keywords)


def gaussian_summary(features: FeatureMatrix) -> GaussianSummary:
    """Column means and unbiased (n-1) sample covariance."""
    if features.n_samples < 2:
        raise ValidationError(
            f"need at least 2 samples for a covariance estimate, got {features.n_samples}"
        )
    vals = features.values
    mean = vals.mean(axis=0)
    centered = vals - mean
    cov = centered.T @ centered / (features.n_samples - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianSummary(
        task_id=features.task_id, mean=mean, covariance=cov, n_samples=features.n_samples
    )


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min(initial=0.0) < -PSD_TOL:
        raise ValidationError(
            f"{what} is not positive semi-definite (min eigenvalue {vals.min():.3g})"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Frechet distance ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term is evaluated on the symmetrized product
    sqrt(S_a) S_b sqrt(S_a), whose eigenvalues are clamped at -1e-8.
    """
    if a.n_features != b.n_features:
        raise ValidationError(
            f"dimension mismatch: {a.n_features} vs {b.n_features} features"
        )
    root_a = _psd_sqrt(a.covariance, f"covariance of {a.task_id!r}")
    inner = root_a @ b.covariance @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min(initial=0.0) < -PSD_TOL:
        raise ValidationError(
            f"matrix root failed: product of covariances has eigenvalue {vals.min():.3g}"
        )
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)


def p2l_distance(source: Fingerprint, target: Fingerprint) -> float:
    """KLD on softmaxed mean feature vectors, oriented target vs source."""
    if source.n_features != target.n_features:
        raise ValidationError(
            f"dimension mismatch: {source.n_features} vs {target.n_features} features"
        )
    return kld(softmax(target.mean_features), softmax(source.mean_features))


def vdna_distance(source: Fingerprint, target: Fingerprint) -> float:
    """Mean per-feature 1-D earth mover's distance between histogram rows.

    EMD between two b-bin histograms with unit bin width is the L1 distance
    of their CDFs; symmetric, zero iff all rows match.
    """
    check_compatible(source, target)
    cdf_diff = np.cumsum(target.histograms, axis=1) - np.cumsum(source.histograms, axis=1)
    return float(np.abs(cdf_diff).sum(axis=1).mean())


def manual_distance(source: KeywordSet, target: KeywordSet) -> float:
    """Negative intersection-over-union of keyword sets, in [-1, 0].

    Lower means more similar, matching the distance convention. Exact ties
    are resolved downstream by preferring larger source tasks.
    """
    if not target.keywords:
        raise ValidationError(f"target task {target.task_id!r} has an empty keyword set")
    if not source.keywords:
        raise ValidationError(f"source task {source.task_id!r} has an empty keyword set")
    inter = len(source.keywords & target.keywords)
    union = len(source.keywords | target.keywords)
    return -inter / union


def moments_from_fingerprint(fp: Fingerprint) -> GaussianSummary:
    """Diagonal Gaussian implied by a fingerprint.

    Means are the exact stored mean_features; per-feature variances are
    estimated from the binned histograms (bin centers), cross-covariances
    are unavailable in a fingerprint and set to zero. This is what the
    registered `fid` measure compares when only fingerprints are shared.
    """
    b = fp.binning
    centers = b.range_lo + (np.arange(b.n_bins) + 0.5) * b.bin_width
    first = fp.histograms @ centers
    second = fp.histograms @ centers**2
    variances = np.clip(second - first**2, 0.0, None)
    return GaussianSummary(
        task_id=fp.task_id,
        mean=fp.mean_features,
        covariance=np.diag(variances),
        n_samples=fp.n_samples_used,
    )
