"""Meta metrics scoring task selectors against measured transfer outcomes.

An OutcomeTable holds the ground truth: transfer performance per
(target, source, scenario, metric, repetition), plus a transfer-free
baseline row per setup. The meta metrics (improvement, gain, percentile,
regret, weighted tau) judge a selector's choices against that full set,
and bootstrap_ranking turns per-setup scores into uncertainty-aware
selector rankings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import MissingRecordError, ValidationError

BASELINE = "__baseline__"

SCENARIOS = ("MODEL_ARCHITECTURE", "PRETRAINING", "AUGMENTATION", "COTRAINING")
METRICS = ("BA", "AUROC")


@dataclass(frozen=True, order=True)
class SetupKey:
    """One evaluation setup: a target task under one scenario/metric/repetition."""

    target_id: str
    scenario: str
    metric: str
    repetition: int


@dataclass(frozen=True)
class OutcomeRecord:
    target_id: str
    source_id: str
    scenario: str
    metric: str
    repetition: int
    value: float

    @property
    def setup(self) -> SetupKey:
        return SetupKey(self.target_id, self.scenario, self.metric, self.repetition)


class OutcomeTable:
    """Measured transfer outcomes keyed by (setup, source)."""

    def __init__(self, records):
        self._values: dict[tuple[SetupKey, str], float] = {}
        for rec in records:
            if rec.scenario not in SCENARIOS:
                raise ValidationError(
                    f"unknown scenario {rec.scenario!r}; expected one of {SCENARIOS}"
                )
            if rec.metric not in METRICS:
                raise ValidationError(f"unknown metric {rec.metric!r}; expected one of {METRICS}")
            if not (0.0 <= rec.value <= 1.0):
                raise ValidationError(
                    f"outcome value {rec.value} outside [0, 1] for {rec.setup}, {rec.source_id!r}"
                )
            key = (rec.setup, rec.source_id)
            if key in self._values:
                raise ValidationError(f"duplicate outcome record for {rec.setup}, {rec.source_id!r}")
            self._values[key] = float(rec.value)
        self._setups = sorted({setup for setup, _ in self._values})
        for setup in self._setups:
            if (setup, BASELINE) not in self._values:
                raise ValidationError(f"no baseline record for {setup}")

    def setups(self) -> list[SetupKey]:
        return list(self._setups)

    def sources(self, key: SetupKey) -> list[str]:
        return sorted(s for setup, s in self._values if setup == key and s != BASELINE)

    def value(self, key: SetupKey, source_id: str) -> float:
        try:
            return self._values[(key, source_id)]
        except KeyError:
            raise MissingRecordError(f"no outcome for {key}, source {source_id!r}") from None

    def baseline(self, key: SetupKey) -> float:
        return self.value(key, BASELINE)

    def outcomes(self, key: SetupKey) -> dict[str, float]:
        out = {s: v for (setup, s), v in self._values.items() if setup == key and s != BASELINE}
        if not out:
            raise MissingRecordError(f"no source outcomes for {key}")
        return out

    def __len__(self):
        return len(self._values)


def improvement(table: OutcomeTable, key: SetupKey, source_id: str) -> float:
    """Transfer outcome minus the transfer-free baseline."""
    return table.value(key, source_id) - table.baseline(key)


def gain(table: OutcomeTable, key: SetupKey, source_id: str) -> int:
    """0 for a strictly negative transfer, else 1 (equality counts as 1)."""
    return 1 if table.value(key, source_id) >= table.baseline(key) else 0


def percentile(table: OutcomeTable, key: SetupKey, source_id: str) -> float:
    """Relative position of the selected outcome in the outcome pool.

    Inclusive count, so the best source scores exactly 1.0.
    """
    selected = table.value(key, source_id)
    pool = table.outcomes(key)
    if source_id not in pool:
        raise MissingRecordError(f"source {source_id!r} not in the outcome pool for {key}")
    values = list(pool.values())
    return sum(1 for o in values if o <= selected) / len(values)


def regret(table: OutcomeTable, key: SetupKey, source_id: str) -> float:
    """Remaining gap to the pool optimum, normalized by 1 - selected value."""
    selected = table.value(key, source_id)
    best = max(table.outcomes(key).values())
    if selected == best:
        return 0.0
    if selected >= 1.0:
        raise ValidationError(
            f"regret undefined: selected outcome is 1 but the pool optimum is {best}"
        )
    return (best - selected) / (1.0 - selected)


def weighted_tau(predicted: Sequence, actual: Sequence) -> float:
    """Weighted Kendall rank correlation with hyperbolic importance drop-off.

    Importance ranks come from the actual ordering (0-based); an exchange
    between importance ranks r and s weighs 1/(1+r) + 1/(1+s). The signed
    concordance weight sum is normalized by the total pair weight.
    """
    predicted = list(predicted)
    actual = list(actual)
    if len(actual) < 2:
        raise ValidationError("weighted tau needs at least 2 items")
    if set(predicted) != set(actual) or len(set(predicted)) != len(predicted):
        raise ValidationError("predicted and actual must be permutations of the same id set")
    pred_pos = {item: i for i, item in enumerate(predicted)}
    # element at actual rank r has predicted position p[r]
    p = np.array([pred_pos[item] for item in actual], dtype=np.float64)
    n = len(actual)
    w = 1.0 / (1.0 + np.arange(n, dtype=np.float64))
    iu, ju = np.triu_indices(n, k=1)
    signs = np.sign(p[ju] - p[iu])  # concordant when predicted order matches actual order
    weights = w[iu] + w[ju]
    return float((signs * weights).sum() / weights.sum())


class ShotMode(Enum):
    AVERAGE = "average"
    BEST = "best"


def multi_shot(
    table: OutcomeTable,
    key: SetupKey,
    suggestions,
    k: int,
    mode: ShotMode,
    base_meta: Callable[[OutcomeTable, SetupKey, str], float],
) -> float:
    """Aggregate a meta metric over the top-k suggestions.

    AVERAGE takes the mean meta value over all k suggestions; BEST applies
    the meta metric only to the suggestion with the highest outcome.
    """
    ids = [getattr(s, "task_id", s) for s in suggestions]
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds the {len(ids)} available suggestions")
    top = ids[:k]
    if mode is ShotMode.AVERAGE:
        return float(np.mean([base_meta(table, key, s) for s in top]))
    if mode is ShotMode.BEST:
        best = max(top, key=lambda s: (table.value(key, s), s))
        return float(base_meta(table, key, best))
    raise ValidationError(f"unknown shot mode {mode!r}")


def win_rates(case_scores: Mapping, higher_better: bool = True) -> dict[str, float]:
    """Percentage of cases in which each selector performs best.

    Every selector tied for the best value in a case is credited, so the
    percentages may sum above 100.
    """
    cases = list(case_scores)
    if not cases:
        raise ValidationError("win rates need at least one case")
    selectors = sorted(case_scores[cases[0]])
    wins = {s: 0 for s in selectors}
    for case in cases:
        scores = case_scores[case]
        if sorted(scores) != selectors:
            raise ValidationError(f"case {case!r} is missing selector evaluations")
        best = max(scores.values()) if higher_better else min(scores.values())
        for s, v in scores.items():
            if v == best:
                wins[s] += 1
    return {s: 100.0 * wins[s] / len(cases) for s in selectors}


def kendall_tau(a: Sequence, b: Sequence) -> float:
    """Plain (unweighted) Kendall tau between two rankings of the same ids."""
    a = list(a)
    b = list(b)
    if set(a) != set(b) or len(set(a)) != len(a):
        raise ValidationError("rankings must be permutations of the same id set")
    n = len(a)
    if n < 2:
        raise ValidationError("kendall tau needs at least 2 items")
    pos_b = {item: i for i, item in enumerate(b)}
    p = np.array([pos_b[item] for item in a])
    iu, ju = np.triu_indices(n, k=1)
    concordance = np.sign(p[ju] - p[iu]).sum()
    return float(concordance / (n * (n - 1) / 2))


def stability_score(rankings: Mapping) -> float:
    """Mean pairwise Kendall tau of selector rankings across component values.

    1 means the ranking is unaffected by the varied setup component; values
    near 0 mean the rankings are uncorrelated.
    """
    values = sorted(rankings)
    if len(values) < 2:
        raise ValidationError("stability score needs at least 2 component values")
    ranking_list = [list(rankings[v]) for v in values]
    base = set(ranking_list[0])
    for v, r in zip(values, ranking_list):
        if set(r) != base or len(set(r)) != len(r):
            raise ValidationError(f"ranking for component value {v!r} is incomplete")
    taus = []
    for i in range(len(ranking_list)):
        for j in range(i + 1, len(ranking_list)):
            taus.append(kendall_tau(ranking_list[i], ranking_list[j]))
    return float(np.mean(taus))


class BootstrapMode(Enum):
    AGGREGATE_THEN_RANK = "aggregate_then_rank"
    RANK_THEN_MEAN = "rank_then_mean"


@dataclass
class RankDistribution:
    """Observed final-rank frequencies per selector over bootstrap resamples."""

    selectors: list[str]
    counts: dict[str, dict[float, int]]
    mean_rank: dict[str, float]
    std_rank: dict[str, float]
    n_boot: int
    seed: int
    mode: BootstrapMode
    rng_name: str = "numpy-pcg64"


def average_ranks(scores: np.ndarray, descending: bool = True) -> np.ndarray:
    """1-based ranks of a score vector; ties share the average rank.

    descending=True makes the largest score rank 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    keyed = -scores if descending else scores
    order = np.argsort(keyed, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and keyed[order[j + 1]] == keyed[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def bootstrap_ranking(
    per_setup_scores: Mapping[SetupKey, Mapping[str, float]],
    n_boot: int,
    seed: int,
    mode: BootstrapMode,
) -> RankDistribution:
    """Bootstrap the selector ranking over setups (scores: higher is better).

    AGGREGATE_THEN_RANK ranks selectors by their mean score within every
    resample; RANK_THEN_MEAN ranks selectors within each setup (ties get
    average ranks), then ranks by mean rank. Deterministic given seed.
    """
    setups = sorted(per_setup_scores)
    if not setups:
        raise ValidationError("bootstrap ranking needs at least one setup")
    if n_boot < 1:
        raise ValidationError("n_boot must be >= 1")
    selectors = sorted(per_setup_scores[setups[0]])
    matrix = np.empty((len(setups), len(selectors)))
    for i, setup in enumerate(setups):
        row = per_setup_scores[setup]
        if sorted(row) != selectors:
            raise ValidationError(f"setup {setup} is missing selector scores")
        matrix[i] = [row[s] for s in selectors]

    if mode is BootstrapMode.RANK_THEN_MEAN:
        within = np.vstack([average_ranks(matrix[i], descending=True) for i in range(len(setups))])

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(setups), size=(n_boot, len(setups)))
    final = np.empty((n_boot, len(selectors)))
    for r in range(n_boot):
        if mode is BootstrapMode.AGGREGATE_THEN_RANK:
            final[r] = average_ranks(matrix[idx[r]].mean(axis=0), descending=True)
        elif mode is BootstrapMode.RANK_THEN_MEAN:
            final[r] = average_ranks(within[idx[r]].mean(axis=0), descending=False)
        else:
            raise ValidationError(f"unknown bootstrap mode {mode!r}")

    counts: dict[str, dict[float, int]] = {s: {} for s in selectors}
    for j, s in enumerate(selectors):
        ranks, freq = np.unique(final[:, j], return_counts=True)
        counts[s] = {float(r): int(c) for r, c in zip(ranks, freq)}
    return RankDistribution(
        selectors=selectors,
        counts=counts,
        mean_rank={s: float(final[:, j].mean()) for j, s in enumerate(selectors)},
        std_rank={s: float(final[:, j].std()) for j, s in enumerate(selectors)},
        n_boot=n_boot,
        seed=seed,
        mode=mode,
    )
