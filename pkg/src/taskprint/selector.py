"""Rank candidate source tasks for a target under a distance measure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import EmptyPoolError, TaskprintError, ValidationError
from .measures import DistanceMeasure, TaskQuery


@dataclass
class CandidatePool:
    """Candidate task records plus explicit exclusions (e.g. image overlap)."""

    entries: list
    exclusions: set = field(default_factory=set)


@dataclass(frozen=True)
class RankedSuggestion:
    task_id: str
    distance: float
    rank: int


@dataclass
class RankedSuggestions:
    measure_name: str
    items: list

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def task_ids(self) -> list[str]:
        return [s.task_id for s in self.items]


def select(target: TaskQuery, pool: CandidatePool, measure: DistanceMeasure, k: int) -> RankedSuggestions:
    """Top-k candidates by ascending distance.

    Exact distance ties are broken by descending source task_size, then
    lexicographic task_id, so the ordering is total and reproducible.
    The target's own id and all excluded ids never appear.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    effective = [
        e
        for e in pool.entries
        if e.task_id not in pool.exclusions and e.task_id != target.task_id
    ]
    if not effective:
        raise EmptyPoolError("no candidates remain after exclusions")
    scored = []
    for entry in effective:
        try:
            d = float(measure.distance(entry, target))
        except TaskprintError as err:
            raise ValidationError(f"pool entry {entry.task_id!r}: {err}") from err
        if not math.isfinite(d):
            raise ValidationError(f"pool entry {entry.task_id!r}: non-finite distance {d}")
        scored.append((d, -getattr(entry, "task_size", 0), entry.task_id))
    scored.sort()
    items = [
        RankedSuggestion(task_id=tid, distance=d, rank=i + 1)
        for i, (d, _, tid) in enumerate(scored[:k])
    ]
    return RankedSuggestions(measure_name=measure.name, items=items)


def full_ranking(target: TaskQuery, pool: CandidatePool, measure: DistanceMeasure) -> RankedSuggestions:
    """All candidates in distance order (select with k = pool size)."""
    return select(target, pool, measure, k=max(len(pool.entries), 1))
