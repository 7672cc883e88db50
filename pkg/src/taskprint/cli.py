"""Command-line interface.

Exit codes: 0 success, 2 usage/validation problems, 3 transport or server
errors when talking to a knowledge-cloud service.
"""

from __future__ import annotations

import base64
import functools
import json
import sys
from pathlib import Path
from types import SimpleNamespace

import click
import httpx

from .errors import TaskprintError
from .evaluation import (
    META_METRICS,
    EvaluationConfig,
    load_distances_csv,
    run_evaluation,
    write_report,
)
from .fingerprint import BinningConfig, compute_fingerprint
from .measures import DEFAULT_MEASURE, TaskQuery, default_registry
from .metametrics import BootstrapMode
from .selector import CandidatePool, select
from .serialization import (
    fingerprint_to_bytes,
    fingerprint_to_json,
    load_feature_matrix,
    load_fingerprint,
    load_keyword_manifest,
    load_outcomes_csv,
    save_fingerprint,
)

VALIDATION_EXIT = 2
TRANSPORT_EXIT = 3


def handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except TaskprintError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(VALIDATION_EXIT)
        except httpx.HTTPError as e:
            click.echo(f"transport error: {e}", err=True)
            sys.exit(TRANSPORT_EXIT)

    return wrapper


def _check_response(resp: httpx.Response):
    if resp.status_code >= 400:
        click.echo(f"server error ({resp.status_code}): {resp.text}", err=True)
        sys.exit(TRANSPORT_EXIT)
    return resp


@click.group()
@click.version_option()
def main():
    """Task fingerprinting toolkit and knowledge-cloud client."""


@main.command("fingerprint")
@click.argument("features_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", "-b", default=100, show_default=True, help="Number of histogram bins.")
@click.option("--range-lo", default=0.0, show_default=True, help="Lower edge of the bin range.")
@click.option("--range-hi", default=10.0, show_default=True, help="Upper edge of the bin range.")
@click.option("--task-id", default=None, help="Task id to embed (default: file stem).")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["binary", "json"]), default="binary", show_default=True)
@handle_errors
def cmd_fingerprint(features_file, bins, range_lo, range_hi, task_id, out, fmt):
    """Compute a fingerprint from a FEATM1 feature-matrix file."""
    features = load_feature_matrix(features_file, task_id=task_id)
    fp = compute_fingerprint(features, BinningConfig(bins, range_lo, range_hi))
    if fmt == "json":
        Path(out).write_text(json.dumps(fingerprint_to_json(fp), indent=2) + "\n")
    else:
        save_fingerprint(fp, out)
    click.echo(
        f"fingerprint {fp.task_id!r}: m={fp.n_features} b={fp.n_bins} "
        f"n={fp.n_samples_used} range=[{range_lo:g}, {range_hi:g}] -> {out}"
    )


@main.command("compare")
@click.argument("source_fp", type=click.Path(exists=True, dir_okay=False))
@click.argument("target_fp", type=click.Path(exists=True, dir_okay=False))
@click.option("--measure", "-m", default="bkld-large-unweighted", show_default=True)
@handle_errors
def cmd_compare(source_fp, target_fp, measure):
    """Print the distance between two fingerprint files."""
    registry = default_registry()
    m = registry.get(measure)
    if measure == "manual":
        raise click.UsageError("manual matching compares keyword sets, not fingerprint files; use `rank --keywords`")
    source = load_fingerprint(source_fp)
    target = load_fingerprint(target_fp)
    entry = SimpleNamespace(
        task_id=source.task_id, fingerprint=source, task_size=source.n_samples_used
    )
    d = m.distance(entry, TaskQuery(fingerprint=target))
    click.echo(f"{d:.9f}")


def _pool_from_dir(pool_dir, keyword_sets):
    entries = []
    for path in sorted(Path(pool_dir).iterdir()):
        if path.suffix not in (".tfp", ".json"):
            continue
        fp = load_fingerprint(path)
        ks = keyword_sets.get(fp.task_id) if keyword_sets else None
        entries.append(
            SimpleNamespace(
                task_id=fp.task_id,
                fingerprint=fp,
                keywords=ks,
                task_size=ks.task_size if ks else fp.n_samples_used,
            )
        )
    return entries


@main.command("rank")
@click.option("--target", "target_fp", type=click.Path(exists=True, dir_okay=False), help="Target fingerprint file.")
@click.option("--target-id", default=None, help="Target task id for keyword queries / self-exclusion.")
@click.option("--pool", "pool_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of fingerprint files.")
@click.option("--measure", "-m", default=DEFAULT_MEASURE, show_default=True)
@click.option("--k", "-k", default=3, show_default=True, type=click.IntRange(min=1))
@click.option("--keywords", "keywords_file", type=click.Path(exists=True, dir_okay=False), help="Keyword manifest JSON (needed for manual matching).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@handle_errors
def cmd_rank(target_fp, target_id, pool_dir, measure, k, keywords_file, as_json):
    """Rank a local pool of fingerprints against a target."""
    registry = default_registry()
    m = registry.get(measure)
    keyword_sets = load_keyword_manifest(keywords_file) if keywords_file else {}
    target_fingerprint = load_fingerprint(target_fp) if target_fp else None
    if target_id is None and target_fingerprint is not None:
        target_id = target_fingerprint.task_id
    target = TaskQuery(
        task_id=target_id,
        fingerprint=target_fingerprint,
        keywords=keyword_sets.get(target_id) if target_id else None,
    )
    if target.fingerprint is None and target.keywords is None:
        raise click.UsageError("need --target (fingerprint file) or --target-id present in --keywords")
    pool = CandidatePool(entries=_pool_from_dir(pool_dir, keyword_sets))
    ranked = select(target, pool, m, k)
    if as_json:
        click.echo(
            json.dumps(
                {
                    "measure": ranked.measure_name,
                    "suggestions": [
                        {"task_id": s.task_id, "distance": s.distance, "rank": s.rank}
                        for s in ranked
                    ],
                },
                indent=2,
            )
        )
    else:
        _print_suggestion_table(ranked.measure_name, [(s.rank, s.task_id, s.distance) for s in ranked])


def _print_suggestion_table(measure_name, rows, extra_header=(), extra_cols=lambda r: ()):
    click.echo(f"measure: {measure_name}")
    header = ("rank", "task_id", "distance") + tuple(extra_header)
    widths = [max(len(str(h)), 10) for h in header]
    widths[1] = max(len(str(r[1])) for r in rows) if rows else 10
    widths[1] = max(widths[1], len("task_id"))
    click.echo("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        cells = [str(row[0]).ljust(widths[0]), str(row[1]).ljust(widths[1]), f"{row[2]:.9f}".ljust(widths[2])]
        cells.extend(str(c) for c in extra_cols(row))
        click.echo("  ".join(cells))


@main.command("evaluate")
@click.option("--outcomes", required=True, type=click.Path(exists=True, dir_okay=False), help="Outcome table CSV.")
@click.option("--distances", required=True, type=click.Path(exists=True, dir_okay=False), help="Pairwise distance CSV.")
@click.option("--selectors", default=None, help="Comma-separated selector names (default: all in the distance table).")
@click.option("--meta-metrics", "meta_metrics", default=",".join(META_METRICS), show_default=True)
@click.option("--n-boot", default=1000, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--mode", type=click.Choice([m.value for m in BootstrapMode]), default=BootstrapMode.AGGREGATE_THEN_RANK.value, show_default=True)
@click.option("--top-k", default=3, show_default=True, type=click.IntRange(min=1), help="Suggestions averaged per setup score.")
@click.option("--shots", default=5, show_default=True, type=click.IntRange(min=1), help="Multi-shot curve range 1..shots.")
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True, help="Render matplotlib figures next to the CSV/JSON report.")
@handle_errors
def cmd_evaluate(outcomes, distances, selectors, meta_metrics, n_boot, seed, mode, top_k, shots, out_dir, figures):
    """Replay an outcome table against recorded distances and emit the report."""
    table = load_outcomes_csv(outcomes)
    dist = load_distances_csv(distances)
    config = EvaluationConfig(
        selectors=[s for s in selectors.split(",") if s] if selectors else [],
        meta_metrics=[m for m in meta_metrics.split(",") if m],
        bootstrap_mode=BootstrapMode(mode),
        n_boot=n_boot,
        seed=seed,
        top_k=top_k,
        max_shots=shots,
    )
    report = run_evaluation(table, dist, config)
    written = write_report(report, out_dir, figures=figures)
    click.echo(
        f"evaluated {len(report['config']['selectors'])} selectors on "
        f"{report['setups']['count']} setups (n_boot={n_boot}, seed={seed}, mode={mode})"
    )
    for path in written:
        click.echo(f"  wrote {path}")


@main.command("submit")
@click.option("--server", required=True, help="Knowledge-cloud base URL.")
@click.option("--fingerprint", "fp_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--task-id", default=None, help="Override the id embedded in the fingerprint.")
@click.option("--task-size", default=None, type=int, help="Task sample count (default: fingerprint n_samples_used).")
@click.option("--keywords", default=None, help="Comma-separated semantic keywords.")
@click.option("--metadata", "metadata_file", type=click.Path(exists=True, dir_okay=False), help="Scenario metadata JSON file.")
@click.option("--data-shareable", is_flag=True)
@click.option("--overlap-group", default=None)
@click.option("--overwrite", is_flag=True)
@handle_errors
def cmd_submit(server, fp_file, task_id, task_size, keywords, metadata_file, data_shareable, overlap_group, overwrite):
    """Submit a fingerprint plus metadata to a knowledge cloud."""
    fp = load_fingerprint(fp_file)
    payload = {
        "task_id": task_id or fp.task_id,
        "fingerprint": base64.b64encode(fingerprint_to_bytes(fp)).decode("ascii"),
        "task_size": task_size if task_size is not None else fp.n_samples_used,
        "keywords": [k for k in keywords.split(",") if k] if keywords else None,
        "scenario_metadata": json.loads(Path(metadata_file).read_text()) if metadata_file else {},
        "data_shareable": data_shareable,
        "overlap_group": overlap_group,
        "overwrite": overwrite,
    }
    resp = _check_response(httpx.post(f"{server.rstrip('/')}/v1/tasks", json=payload, timeout=30.0))
    click.echo(f"stored task {resp.json()['task_id']!r}")


@main.command("query")
@click.option("--server", required=True, help="Knowledge-cloud base URL.")
@click.option("--fingerprint", "fp_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--keywords", default=None, help="Comma-separated keywords for manual matching.")
@click.option("--task-id", default=None, help="Querying task's own id (excluded from results).")
@click.option("--measure", "-m", default=None, help="Distance measure (default: server default).")
@click.option("--k", "-k", default=3, show_default=True, type=click.IntRange(min=1))
@click.option("--scenario", default=None, help="Only records carrying this scenario metadata.")
@click.option("--exclude-overlap-group", default=None)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@handle_errors
def cmd_query(server, fp_file, keywords, task_id, measure, k, scenario, exclude_overlap_group, as_json):
    """Query a knowledge cloud for the top-k transfer candidates."""
    payload = {"k": k}
    if fp_file:
        fp = load_fingerprint(fp_file)
        payload["fingerprint"] = base64.b64encode(fingerprint_to_bytes(fp)).decode("ascii")
    if keywords:
        payload["keywords"] = [kw for kw in keywords.split(",") if kw]
    if not fp_file and not keywords:
        raise click.UsageError("need --fingerprint or --keywords")
    if task_id:
        payload["task_id"] = task_id
    if measure:
        payload["measure"] = measure
    if scenario:
        payload["scenario"] = scenario
    if exclude_overlap_group:
        payload["exclude_overlap_group"] = exclude_overlap_group
    resp = _check_response(httpx.post(f"{server.rstrip('/')}/v1/query", json=payload, timeout=30.0))
    doc = resp.json()
    if as_json:
        click.echo(json.dumps(doc, indent=2))
    else:
        rows = [(s["rank"], s["task_id"], s["distance"], s["data_shareable"]) for s in doc["suggestions"]]
        _print_suggestion_table(
            doc["measure"], rows, extra_header=("shareable",), extra_cols=lambda r: (r[3],)
        )


@main.command("serve")
@click.option("--data-dir", envvar="TASKPRINT_DATA_DIR", required=True, type=click.Path(file_okay=False), help="Store directory [env: TASKPRINT_DATA_DIR].")
@click.option("--listen", default="127.0.0.1:8099", show_default=True, help="host:port to bind.")
@click.option("--default-measure", default=DEFAULT_MEASURE, show_default=True)
@handle_errors
def cmd_serve(data_dir, listen, default_measure):
    """Run the knowledge-cloud HTTP service."""
    import uvicorn

    from .service import create_app
    from .store import TaskStore

    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError(f"--listen must be host:port, got {listen!r}")
    app = create_app(TaskStore(data_dir), default_measure=default_measure)
    click.echo(f"serving knowledge cloud from {data_dir} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=int(port), log_level="warning")


if __name__ == "__main__":
    main()
