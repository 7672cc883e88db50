"""File formats: fingerprint (TFPR), Gaussian summary (TGSU), feature matrix
(FEATM1), the lossless JSON fingerprint dump, keyword manifests, and the
outcome-table CSV."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .baselines import GaussianSummary, KeywordSet
from .errors import FormatError, ValidationError
from .fingerprint import STORED_SUM_TOL, BinningConfig, FeatureMatrix, Fingerprint
from .metametrics import OutcomeRecord, OutcomeTable

FINGERPRINT_MAGIC = b"TFPR"
FINGERPRINT_VERSION = 1
GAUSSIAN_MAGIC = b"TGSU"
GAUSSIAN_VERSION = 1
FEATURE_MAGIC = b"FEATM1"


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"string too long to serialize ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}: wanted {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def array(self, count: int, dtype) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what} has {len(self.buf) - self.pos} trailing bytes")


# -- fingerprint: TFPR ------------------------------------------------------


def fingerprint_to_bytes(fp: Fingerprint) -> bytes:
    parts = [
        FINGERPRINT_MAGIC,
        struct.pack("<B", FINGERPRINT_VERSION),
        struct.pack("<II", fp.n_features, fp.n_bins),
        struct.pack("<dd", fp.binning.range_lo, fp.binning.range_hi),
        struct.pack("<Q", fp.n_samples_used),
        _pack_str(fp.task_id),
        _pack_str(fp.extractor_id),
        np.ascontiguousarray(fp.histograms, dtype="<f4").tobytes(),
        np.ascontiguousarray(fp.mean_features, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def fingerprint_from_bytes(buf: bytes) -> Fingerprint:
    r = _Reader(buf, "fingerprint")
    if r.take(4) != FINGERPRINT_MAGIC:
        raise FormatError("not a fingerprint file (bad magic, expected 'TFPR')")
    (version,) = r.unpack("<B")
    if version != FINGERPRINT_VERSION:
        raise FormatError(f"unsupported fingerprint version {version}")
    m, b = r.unpack("<II")
    lo, hi = r.unpack("<dd")
    (n_used,) = r.unpack("<Q")
    task_id = r.string()
    extractor_id = r.string()
    hist = r.array(m * b, "<f4").astype(np.float64).reshape(m, b)
    mean = r.array(m, "<f4").astype(np.float64)
    r.done()
    fp = Fingerprint(
        task_id=task_id,
        binning=BinningConfig(b, lo, hi),
        histograms=hist,
        mean_features=mean,
        n_samples_used=n_used,
        extractor_id=extractor_id,
    )
    # stored values are f32, so row sums are validated at f32 precision
    return fp.validate(sum_tol=STORED_SUM_TOL)


def save_fingerprint(fp: Fingerprint, path) -> None:
    Path(path).write_bytes(fingerprint_to_bytes(fp))


def load_fingerprint(path) -> Fingerprint:
    path = Path(path)
    if path.suffix == ".json":
        return fingerprint_from_json(json.loads(path.read_text()))
    return fingerprint_from_bytes(path.read_bytes())


def fingerprint_to_json(fp: Fingerprint) -> dict:
    """Lossless debug dump mirroring the binary field names."""
    return {
        "task_id": fp.task_id,
        "n_features": fp.n_features,
        "n_bins": fp.n_bins,
        "binning": {
            "n_bins": fp.binning.n_bins,
            "range_lo": fp.binning.range_lo,
            "range_hi": fp.binning.range_hi,
        },
        "histograms": fp.histograms.tolist(),
        "mean_features": fp.mean_features.tolist(),
        "n_samples_used": fp.n_samples_used,
        "extractor_id": fp.extractor_id,
    }


def fingerprint_from_json(doc: dict) -> Fingerprint:
    try:
        binning = BinningConfig(
            doc["binning"]["n_bins"], doc["binning"]["range_lo"], doc["binning"]["range_hi"]
        )
        fp = Fingerprint(
            task_id=doc["task_id"],
            binning=binning,
            histograms=np.asarray(doc["histograms"], dtype=np.float64),
            mean_features=np.asarray(doc["mean_features"], dtype=np.float64),
            n_samples_used=doc["n_samples_used"],
            extractor_id=doc.get("extractor_id", ""),
        )
    except KeyError as e:
        raise FormatError(f"fingerprint JSON missing field {e}") from None
    return fp.validate(sum_tol=STORED_SUM_TOL)


# -- Gaussian summary: TGSU -------------------------------------------------


def gaussian_to_bytes(s: GaussianSummary) -> bytes:
    parts = [
        GAUSSIAN_MAGIC,
        struct.pack("<B", GAUSSIAN_VERSION),
        struct.pack("<I", s.n_features),
        struct.pack("<Q", s.n_samples),
        _pack_str(s.task_id),
        np.ascontiguousarray(s.mean, dtype="<f8").tobytes(),
        np.ascontiguousarray(s.covariance, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def gaussian_from_bytes(buf: bytes) -> GaussianSummary:
    r = _Reader(buf, "Gaussian summary")
    if r.take(4) != GAUSSIAN_MAGIC:
        raise FormatError("not a Gaussian summary file (bad magic, expected 'TGSU')")
    (version,) = r.unpack("<B")
    if version != GAUSSIAN_VERSION:
        raise FormatError(f"unsupported Gaussian summary version {version}")
    (m,) = r.unpack("<I")
    (n_samples,) = r.unpack("<Q")
    task_id = r.string()
    mean = r.array(m, "<f8")
    cov = r.array(m * m, "<f8").reshape(m, m)
    r.done()
    return GaussianSummary(task_id=task_id, mean=mean, covariance=cov, n_samples=n_samples)


def save_gaussian(s: GaussianSummary, path) -> None:
    Path(path).write_bytes(gaussian_to_bytes(s))


def load_gaussian(path) -> GaussianSummary:
    return gaussian_from_bytes(Path(path).read_bytes())


# -- feature matrix: FEATM1 -------------------------------------------------


def feature_matrix_to_bytes(fm: FeatureMatrix) -> bytes:
    parts = [
        FEATURE_MAGIC,
        struct.pack("<II", fm.n_samples, fm.n_features),
        _pack_str(fm.extractor_id),
        np.ascontiguousarray(fm.values, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def feature_matrix_from_bytes(buf: bytes, task_id: str) -> FeatureMatrix:
    r = _Reader(buf, "feature matrix")
    if r.take(6) != FEATURE_MAGIC:
        raise FormatError("not a feature matrix file (bad magic, expected 'FEATM1')")
    n, m = r.unpack("<II")
    extractor_id = r.string()
    values = r.array(n * m, "<f4").astype(np.float64).reshape(n, m)
    r.done()
    return FeatureMatrix(task_id=task_id, values=values, extractor_id=extractor_id)


def save_feature_matrix(fm: FeatureMatrix, path) -> None:
    Path(path).write_bytes(feature_matrix_to_bytes(fm))


def load_feature_matrix(path, task_id: str | None = None) -> FeatureMatrix:
    path = Path(path)
    return feature_matrix_from_bytes(path.read_bytes(), task_id or path.stem)


# -- keyword manifest -------------------------------------------------------


def load_keyword_manifest(path) -> dict[str, KeywordSet]:
    """JSON array of {task_id, keywords: [string], task_size: int}."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise FormatError("keyword manifest must be a JSON array")
    out = {}
    for i, entry in enumerate(doc):
        try:
            ks = KeywordSet(
                task_id=entry["task_id"],
                keywords=frozenset(entry["keywords"]),
                task_size=int(entry.get("task_size", 0)),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"keyword manifest entry {i}: {e}") from None
        if ks.task_id in out:
            raise FormatError(f"keyword manifest entry {i}: duplicate task_id {ks.task_id!r}")
        out[ks.task_id] = ks
    return out


# -- outcome table CSV ------------------------------------------------------

OUTCOME_HEADER = ["target_id", "source_id", "scenario", "metric", "repetition", "value"]


def load_outcomes_csv(path) -> OutcomeTable:
    """Read outcome records; baseline rows use source_id '__baseline__'."""
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != OUTCOME_HEADER:
            raise FormatError(
                f"{path}: expected header {','.join(OUTCOME_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(OUTCOME_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(OUTCOME_HEADER)} columns")
            try:
                records.append(
                    OutcomeRecord(
                        target_id=row[0],
                        source_id=row[1],
                        scenario=row[2],
                        metric=row[3],
                        repetition=int(row[4]),
                        value=float(row[5]),
                    )
                )
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    try:
        return OutcomeTable(records)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from None
