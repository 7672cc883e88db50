"""Replay evaluation: score selectors on recorded distances and outcomes.

Consumes an OutcomeTable (measured transfer performances) plus a table of
precomputed pairwise task distances per selector, and produces the full
report: bootstrapped rank distributions, win rates, setup stability
scores, and multi-shot curves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, ValidationError
from .metametrics import (
    BootstrapMode,
    OutcomeTable,
    SetupKey,
    ShotMode,
    average_ranks,
    bootstrap_ranking,
    gain,
    improvement,
    multi_shot,
    percentile,
    regret,
    stability_score,
    weighted_tau,
    win_rates,
)

META_METRICS = ("improvement", "percentile", "regret", "gain", "weightedtau")
# regret is the only lower-is-better meta metric
META_HIGHER_BETTER = {m: (m != "regret") for m in META_METRICS}
_BASE_META = {"improvement": improvement, "percentile": percentile, "regret": regret, "gain": gain}

DISTANCE_HEADER = ["measure", "target_id", "source_id", "distance"]


class DistanceTable:
    """Recorded pairwise distances: measure -> target -> source -> value."""

    def __init__(self, rows):
        self._d: dict[str, dict[str, dict[str, float]]] = {}
        for measure, target, source, value in rows:
            per_target = self._d.setdefault(measure, {}).setdefault(target, {})
            if source in per_target:
                raise ValidationError(
                    f"duplicate distance for measure {measure!r}, {source!r} -> {target!r}"
                )
            per_target[source] = float(value)

    def measures(self) -> list[str]:
        return sorted(self._d)

    def ranking(self, measure: str, target: str, sources) -> list[str]:
        """Sources ordered by ascending recorded distance (ties by id)."""
        try:
            per_target = self._d[measure][target]
        except KeyError:
            raise ValidationError(
                f"no recorded distances for measure {measure!r}, target {target!r}"
            ) from None
        missing = [s for s in sources if s not in per_target]
        if missing:
            raise ValidationError(
                f"measure {measure!r}, target {target!r}: no distance for sources {missing}"
            )
        return sorted(sources, key=lambda s: (per_target[s], s))


def load_distances_csv(path) -> DistanceTable:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != DISTANCE_HEADER:
            raise FormatError(f"{path}: expected header {','.join(DISTANCE_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append((row[0], row[1], row[2], float(row[3])))
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    try:
        return DistanceTable(rows)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from None


@dataclass
class EvaluationConfig:
    selectors: list[str] = field(default_factory=list)  # default: all in the distance table
    meta_metrics: list[str] = field(default_factory=lambda: list(META_METRICS))
    bootstrap_mode: BootstrapMode = BootstrapMode.AGGREGATE_THEN_RANK
    n_boot: int = 1000
    seed: int = 0
    top_k: int = 3
    max_shots: int = 5

    def __post_init__(self):
        unknown = [m for m in self.meta_metrics if m not in META_METRICS]
        if unknown:
            raise ValidationError(f"unknown meta metrics {unknown}; available: {META_METRICS}")


def _setup_str(key: SetupKey) -> str:
    return f"{key.target_id}|{key.scenario}|{key.metric}|{key.repetition}"


def _actual_ranking(table: OutcomeTable, key: SetupKey) -> list[str]:
    pool = table.outcomes(key)
    return sorted(pool, key=lambda s: (-pool[s], s))


def per_setup_scores(
    table: OutcomeTable, distances: DistanceTable, selectors, meta_metrics, top_k: int
):
    """Raw (unoriented) meta-metric value per (meta, setup, selector)."""
    scores = {meta: {} for meta in meta_metrics}
    for key in table.setups():
        sources = table.sources(key)
        for selector in selectors:
            ranking = distances.ranking(selector, key.target_id, sources)
            k = min(top_k, len(ranking))
            for meta in meta_metrics:
                if meta == "weightedtau":
                    if len(ranking) < 2:
                        raise ValidationError(
                            f"weightedtau needs >= 2 sources for {key}, got {len(ranking)}"
                        )
                    value = weighted_tau(ranking, _actual_ranking(table, key))
                else:
                    value = multi_shot(
                        table, key, ranking, k, ShotMode.AVERAGE, _BASE_META[meta]
                    )
                scores[meta].setdefault(key, {})[selector] = float(value)
    return scores


def _oriented(scores, meta):
    sign = 1.0 if META_HIGHER_BETTER[meta] else -1.0
    return {key: {sel: sign * v for sel, v in row.items()} for key, row in scores[meta].items()}


def _stability_rankings(scores, selectors, component):
    """Selector ranking per component value, by mean within-case rank."""
    groups: dict[object, list[dict[str, float]]] = {}
    for meta in scores:
        for key, row in _oriented(scores, meta).items():
            value = meta if component == "meta_metric" else getattr(key, component)
            groups.setdefault(value, []).append(row)
    if len(groups) < 2:
        return None
    rankings = {}
    for value, rows in groups.items():
        sums = {s: 0.0 for s in selectors}
        for row in rows:
            ranks = average_ranks([row[s] for s in selectors], descending=True)
            for s, r in zip(selectors, ranks):
                sums[s] += r
        mean_rank = {s: sums[s] / len(rows) for s in selectors}
        rankings[value] = sorted(selectors, key=lambda s: (mean_rank[s], s))
    return rankings


def _multi_shot_curves(table, distances, selectors, meta_metrics, max_shots):
    curves = {}
    setups = table.setups()
    max_k = min(max_shots, min(len(table.sources(key)) for key in setups))
    for meta in meta_metrics:
        if meta == "weightedtau":
            continue
        curves[meta] = {}
        for mode in (ShotMode.AVERAGE, ShotMode.BEST):
            curves[meta][mode.value] = {}
            for selector in selectors:
                per_k = {}
                for k in range(1, max_k + 1):
                    vals = []
                    for key in setups:
                        ranking = distances.ranking(selector, key.target_id, table.sources(key))
                        vals.append(
                            multi_shot(table, key, ranking, k, mode, _BASE_META[meta])
                        )
                    per_k[str(k)] = sum(vals) / len(vals)
                curves[meta][mode.value][selector] = per_k
    return curves


def run_evaluation(table: OutcomeTable, distances: DistanceTable, config: EvaluationConfig) -> dict:
    selectors = sorted(config.selectors) if config.selectors else distances.measures()
    if not selectors:
        raise ValidationError("no selectors to evaluate")
    scores = per_setup_scores(table, distances, selectors, config.meta_metrics, config.top_k)

    rank_distributions = {}
    for meta in config.meta_metrics:
        dist = bootstrap_ranking(
            _oriented(scores, meta), config.n_boot, config.seed, config.bootstrap_mode
        )
        rank_distributions[meta] = {
            sel: {
                "mean_rank": dist.mean_rank[sel],
                "std_rank": dist.std_rank[sel],
                "frequencies": {("%g" % r): c for r, c in sorted(dist.counts[sel].items())},
            }
            for sel in dist.selectors
        }

    setups = table.setups()
    scenarios = sorted({k.scenario for k in setups})
    per_scenario = {}
    for scenario in scenarios:
        cases = {}
        for meta in config.meta_metrics:
            for key, row in _oriented(scores, meta).items():
                if key.scenario == scenario:
                    cases[(key, meta)] = row
        per_scenario[scenario] = win_rates(cases)
    mean_rates = {
        sel: sum(per_scenario[sc][sel] for sc in scenarios) / len(scenarios) for sel in selectors
    }

    stability = {}
    for component in ("meta_metric", "scenario", "metric", "target_id", "repetition"):
        rankings = _stability_rankings(scores, selectors, component)
        if rankings is not None:
            stability[component] = stability_score(rankings)

    curves = _multi_shot_curves(
        table, distances, selectors, config.meta_metrics, config.max_shots
    )

    return {
        "schema_version": 1,
        "config": {
            "selectors": selectors,
            "meta_metrics": list(config.meta_metrics),
            "bootstrap_mode": config.bootstrap_mode.value,
            "n_boot": config.n_boot,
            "seed": config.seed,
            "rng": "numpy-pcg64",
            "top_k": config.top_k,
            "max_shots": config.max_shots,
        },
        "setups": {
            "count": len(setups),
            "targets": sorted({k.target_id for k in setups}),
            "scenarios": scenarios,
            "metrics": sorted({k.metric for k in setups}),
            "repetitions": sorted({k.repetition for k in setups}),
        },
        "per_setup_scores": {
            meta: {_setup_str(key): row for key, row in sorted(scores[meta].items())}
            for meta in config.meta_metrics
        },
        "rank_distributions": rank_distributions,
        "win_rates": {"per_scenario": per_scenario, "mean": mean_rates},
        "stability_scores": stability,
        "multi_shot_curves": curves,
    }


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(report: dict, out_dir, figures: bool = True) -> list[Path]:
    """Emit report.json plus plot-ready CSVs; optionally render figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    written.append(path)

    rows = []
    for meta in sorted(report["rank_distributions"]):
        for sel in sorted(report["rank_distributions"][meta]):
            freqs = report["rank_distributions"][meta][sel]["frequencies"]
            for rank in sorted(freqs, key=float):
                rows.append([meta, sel, rank, freqs[rank]])
    path = out_dir / "rank_frequencies.csv"
    _write_csv(path, ["meta_metric", "selector", "rank", "count"], rows)
    written.append(path)

    rows = []
    curves = report["multi_shot_curves"]
    for meta in sorted(curves):
        for mode in sorted(curves[meta]):
            for sel in sorted(curves[meta][mode]):
                for k in sorted(curves[meta][mode][sel], key=int):
                    rows.append([meta, mode, sel, k, repr(curves[meta][mode][sel][k])])
    path = out_dir / "multishot_curves.csv"
    _write_csv(path, ["meta_metric", "mode", "selector", "k", "value"], rows)
    written.append(path)

    rows = []
    for scenario in sorted(report["win_rates"]["per_scenario"]):
        rates = report["win_rates"]["per_scenario"][scenario]
        for sel in sorted(rates):
            rows.append([scenario, sel, repr(rates[sel])])
    for sel in sorted(report["win_rates"]["mean"]):
        rows.append(["__mean__", sel, repr(report["win_rates"]["mean"][sel])])
    path = out_dir / "win_rates.csv"
    _write_csv(path, ["scenario", "selector", "win_rate"], rows)
    written.append(path)

    rows = [
        [component, repr(report["stability_scores"][component])]
        for component in sorted(report["stability_scores"])
    ]
    path = out_dir / "stability_scores.csv"
    _write_csv(path, ["component", "score"], rows)
    written.append(path)

    rows = []
    for meta in sorted(report["per_setup_scores"]):
        for setup in sorted(report["per_setup_scores"][meta]):
            target, scenario, metric, rep = setup.split("|")
            row = report["per_setup_scores"][meta][setup]
            for sel in sorted(row):
                rows.append([target, scenario, metric, rep, meta, sel, repr(row[sel])])
    path = out_dir / "per_setup_scores.csv"
    _write_csv(
        path,
        ["target_id", "scenario", "metric", "repetition", "meta_metric", "selector", "score"],
        rows,
    )
    written.append(path)

    if figures:
        from . import report as report_figures

        written.extend(report_figures.render_all(report, out_dir / "figures"))
    return written
