"""Pluggable distance measures over task records.

Every measure maps (source record, target query) to a real number where
lower means more transferable. Records and queries are duck-typed: they
expose task_id plus whichever payloads the measure needs (fingerprint,
keywords).
"""

from __future__ import annotations

from dataclasses import dataclass

from .baselines import (
    KeywordSet,
    fid_distance,
    manual_distance,
    moments_from_fingerprint,
    p2l_distance,
    vdna_distance,
)
from .errors import UnknownMeasureError, ValidationError
from .fingerprint import BinningConfig, Fingerprint, WeightMode, bkld_distance, check_compatible

DEFAULT_MEASURE = "bkld-small-target"


@dataclass
class TaskQuery:
    """The target side of a distance evaluation."""

    task_id: str | None = None
    fingerprint: Fingerprint | None = None
    keywords: KeywordSet | None = None


def _require_fingerprints(source, target: TaskQuery):
    if target.fingerprint is None:
        raise ValidationError("this measure needs a fingerprint in the query")
    if getattr(source, "fingerprint", None) is None:
        raise ValidationError(f"record {source.task_id!r} carries no fingerprint")
    return source.fingerprint, target.fingerprint


class DistanceMeasure:
    """Base contract: distance(source_record, target_query) -> float."""

    name: str = ""

    def params(self) -> dict:
        return {}

    def distance(self, source, target: TaskQuery) -> float:
        raise NotImplementedError

    def supports(self, record, target: TaskQuery) -> bool:
        """Whether a stored record can be compared against this query."""
        try:
            self.distance(record, target)
        except ValidationError:
            return False
        return True

    def describe(self) -> dict:
        return {"name": self.name, **self.params()}


class BkldMeasure(DistanceMeasure):
    """Binned KLD variant. The stored binning documents the fingerprint size
    this variant was tuned for; comparison only requires the two fingerprints
    to be mutually compatible."""

    def __init__(self, name: str, binning: BinningConfig, mode: WeightMode):
        self.name = name
        self.binning = binning
        self.mode = mode

    def params(self):
        return {
            "kind": "bkld",
            "n_bins": self.binning.n_bins,
            "range_lo": self.binning.range_lo,
            "range_hi": self.binning.range_hi,
            "weights": self.mode.value,
        }

    def distance(self, source, target):
        src, tgt = _require_fingerprints(source, target)
        return bkld_distance(src, tgt, self.mode)


class FidMeasure(DistanceMeasure):
    """Frechet distance between the diagonal Gaussians implied by fingerprints."""

    name = "fid"

    def params(self):
        return {"kind": "fid", "moments": "fingerprint-diagonal"}

    def distance(self, source, target):
        src, tgt = _require_fingerprints(source, target)
        check_compatible(src, tgt)
        return fid_distance(moments_from_fingerprint(src), moments_from_fingerprint(tgt))


class P2lMeasure(DistanceMeasure):
    name = "p2l"

    def params(self):
        return {"kind": "p2l"}

    def distance(self, source, target):
        src, tgt = _require_fingerprints(source, target)
        return p2l_distance(src, tgt)


class VdnaMeasure(DistanceMeasure):
    name = "vdna"

    def params(self):
        return {"kind": "vdna", "per_histogram": "emd1"}

    def distance(self, source, target):
        src, tgt = _require_fingerprints(source, target)
        return vdna_distance(src, tgt)


class ManualMeasure(DistanceMeasure):
    name = "manual"

    def params(self):
        return {"kind": "manual", "similarity": "keyword-iou"}

    def distance(self, source, target):
        if target.keywords is None:
            raise ValidationError("manual matching needs a keyword set in the query")
        src_kw = getattr(source, "keywords", None)
        if src_kw is None:
            raise ValidationError(f"record {source.task_id!r} carries no keyword set")
        return manual_distance(src_kw, target.keywords)


class MeasureRegistry:
    """Named measures available to the selector, service, and CLI."""

    def __init__(self, measures=()):
        self._measures: dict[str, DistanceMeasure] = {}
        for m in measures:
            self.register(m)

    def register(self, measure: DistanceMeasure):
        if measure.name in self._measures:
            raise ValidationError(f"measure {measure.name!r} already registered")
        self._measures[measure.name] = measure

    def get(self, name: str) -> DistanceMeasure:
        try:
            return self._measures[name]
        except KeyError:
            raise UnknownMeasureError(name, self._measures) from None

    def names(self) -> list[str]:
        return sorted(self._measures)

    def describe(self) -> list[dict]:
        return [self._measures[n].describe() for n in self.names()]

    def __contains__(self, name):
        return name in self._measures

    def __iter__(self):
        return iter(self.names())


def default_registry() -> MeasureRegistry:
    """The three tuned bKLD settings plus the baseline measures."""
    return MeasureRegistry(
        [
            BkldMeasure("bkld-small-target", BinningConfig(100), WeightMode.TARGET_SOFTMAX),
            BkldMeasure("bkld-large-source", BinningConfig(1000), WeightMode.SOURCE_NORMALIZED),
            BkldMeasure("bkld-large-unweighted", BinningConfig(1000), WeightMode.UNIFORM),
            FidMeasure(),
            P2lMeasure(),
            VdnaMeasure(),
            ManualMeasure(),
        ]
    )
