"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 1-9 cover the primary component; the extractor contract
(criterion 10) lives in the extractor package's own test suite.
"""

import base64
import contextlib
import json
import math
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.stats
from click.testing import CliRunner

from taskprint.baselines import GaussianSummary, KeywordSet, fid_distance, manual_distance, vdna_distance
from taskprint.cli import main as cli_main
from taskprint.fingerprint import (
    BinningConfig,
    FeatureMatrix,
    WeightMode,
    bkld_distance,
    compute_fingerprint,
    kld,
    resolve_weights,
)
from taskprint.measures import TaskQuery, default_registry
from taskprint.metametrics import (
    BASELINE,
    OutcomeRecord,
    OutcomeTable,
    SetupKey,
    ShotMode,
    gain,
    improvement,
    multi_shot,
    percentile,
    regret,
    weighted_tau,
)
from taskprint.selector import CandidatePool, select
from taskprint.serialization import fingerprint_to_bytes

from test_fingerprint import bkld_oracle, make_fingerprint, random_fingerprint
from test_metametrics import weighted_tau_brute

FIXTURES = Path(__file__).parent / "fixtures"


@contextlib.contextmanager
def criterion(num, desc):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] criterion {num:>2}  FAIL  {desc}")
        raise
    print(f"[ACCEPTANCE] criterion {num:>2}  PASS  {desc}")


KEY = SetupKey("T", "PRETRAINING", "BA", 1)


def one_setup_table(values, baseline):
    records = [OutcomeRecord("T", BASELINE, "PRETRAINING", "BA", 1, baseline)]
    records += [
        OutcomeRecord("T", f"S{i:03d}", "PRETRAINING", "BA", 1, v) for i, v in enumerate(values)
    ]
    return OutcomeTable(records)


def test_criterion_1_random_selector_percentile_law():
    """Best-of-3 uniform selection over 100 candidates converges to ~0.75."""
    with criterion(1, "random-selector best-of-3 percentile law in [0.74, 0.76], < 10 s"):
        start = time.time()
        n_trials, pool_size, shots = 100_000, 100, 3
        rng = np.random.default_rng(271828)
        outcomes = rng.uniform(0.0, 1.0, size=(n_trials, pool_size))
        # three distinct picks per trial via partial argsort of random keys
        picks = np.argsort(rng.random(size=(n_trials, pool_size)), axis=1)[:, :shots]
        best = np.max(np.take_along_axis(outcomes, picks, axis=1), axis=1)
        percentiles = (outcomes <= best[:, None]).sum(axis=1) / pool_size
        mean = float(percentiles.mean())

        # anchor the vectorized law to the package ops on a slice of trials
        for t in range(50):
            table = one_setup_table(outcomes[t], baseline=0.5)
            suggestions = [f"S{i:03d}" for i in picks[t]]
            via_ops = multi_shot(table, KEY, suggestions, shots, ShotMode.BEST, percentile)
            assert via_ops == percentiles[t]

        elapsed = time.time() - start
        assert 0.74 <= mean <= 0.76, mean
        assert elapsed < 10.0, f"took {elapsed:.1f} s"


def test_criterion_2_bkld_oracle_equivalence():
    """1,000 random fingerprint pairs match the double-loop oracle to 1e-10."""
    with criterion(2, "bKLD vs independent double-loop oracle (1e-10) on 1,000 pairs, < 5 s"):
        start = time.time()
        rng = np.random.default_rng(314159)
        modes = list(WeightMode)
        for i in range(1000):
            m = int(rng.integers(1, 9))
            b = int(rng.integers(2, 11))
            binning = BinningConfig(b, 0.0, 10.0)
            src = random_fingerprint(rng, m, b, binning=binning)
            tgt = random_fingerprint(rng, m, b, binning=binning)
            mode = modes[i % 3]
            w = resolve_weights(mode, src, tgt)
            expected = bkld_oracle(src.histograms, tgt.histograms, w)
            assert abs(bkld_distance(src, tgt, mode) - expected) < 1e-10
        elapsed = time.time() - start
        assert elapsed < 5.0, f"took {elapsed:.1f} s"


def test_criterion_3_analytic_distance_cases():
    """Closed-form KLD, bKLD, FID, and VDNA values."""
    with criterion(3, "analytic distance cases (kld=ln2, bkld=ln(1+e)-1, FID=1.0, vdna=2.0)"):
        assert abs(kld([1.0, 0.0], [0.5, 0.5]) - math.log(2.0)) < 1e-12

        src = make_fingerprint([[1.0, 0.0]])
        tgt = make_fingerprint([[1.0, 0.0]])
        expected = math.log(1.0 + math.e) - 1.0
        assert abs(bkld_distance(src, tgt, WeightMode.UNIFORM) - expected) < 1e-9

        a = GaussianSummary("a", [0.0], [[1.0]], 10)
        b = GaussianSummary("b", [1.0], [[1.0]], 10)
        assert abs(fid_distance(a, b) - 1.0) < 1e-9
        c = GaussianSummary("c", [0.0], [[4.0]], 10)
        assert abs(fid_distance(a, c) - 1.0) < 1e-9

        assert vdna_distance(make_fingerprint([[1.0, 0.0, 0.0]]), make_fingerprint([[0.0, 0.0, 1.0]])) == 2.0


def test_criterion_4_meta_metric_definitional_suite():
    """Hand values for percentile/regret/gain/improvement; gain <=> improvement >= 0."""
    with criterion(4, "meta-metric hand values and gain<=>improvement equivalence"):
        t = one_setup_table([0.1, 0.2, 0.3, 0.4], baseline=0.25)
        assert percentile(t, KEY, "S002") == 0.75  # 3/4, dyadic: exact
        assert percentile(t, KEY, "S003") == 1.0
        assert regret(t, KEY, "S003") == 0.0

        t2 = one_setup_table([0.9, 0.8, 0.5, 0.95], baseline=0.80)
        # decimal hand arithmetic asserted at 1e-12 (IEEE cannot be decimal-exact)
        assert abs(regret(t2, KEY, "S000") - ((0.95 - 0.9) / (1 - 0.9))) < 1e-12
        assert abs(regret(t2, KEY, "S002") - 0.9) < 1e-12

        t3 = one_setup_table([0.82, 0.70, 0.80, 0.99], baseline=0.80)
        assert abs(improvement(t3, KEY, "S000") - 0.02) < 1e-12
        assert abs(improvement(t3, KEY, "S001") - (-0.10)) < 1e-12
        assert improvement(t3, KEY, "S002") == 0.0
        assert gain(t3, KEY, "S000") == 1
        assert gain(t3, KEY, "S001") == 0
        assert gain(t3, KEY, "S002") == 1  # equality is non-negative transfer

        rng = np.random.default_rng(999)
        for _ in range(1000):
            v, base = rng.uniform(0, 1, size=2)
            tt = one_setup_table([v], baseline=base)
            assert (gain(tt, KEY, "S000") == 1) == (improvement(tt, KEY, "S000") >= 0)


def test_criterion_5_weighted_tau():
    """Exact identity/reversal plus brute-force agreement on 500 permutations."""
    with criterion(5, "weighted tau: identity=1, reversal=-1 exact; 500 random vs brute force"):
        ids = [f"x{i}" for i in range(8)]
        assert weighted_tau(ids, ids) == 1.0
        assert weighted_tau(ids[::-1], ids) == -1.0
        rng = np.random.default_rng(777)
        for _ in range(500):
            n = int(rng.integers(2, 9))
            pred = list(rng.permutation(ids[:n]))
            act = list(rng.permutation(ids[:n]))
            assert abs(weighted_tau(pred, act) - weighted_tau_brute(pred, act)) < 1e-12


@pytest.mark.parametrize("mode", ["aggregate_then_rank", "rank_then_mean"])
def test_criterion_6_bootstrap_golden_report(mode, tmp_path):
    """cmd_evaluate reproduces the committed golden report byte-for-byte."""
    with criterion(6, f"golden evaluation report, byte-for-byte ({mode})"):
        out = tmp_path / mode
        result = CliRunner().invoke(
            cli_main,
            [
                "evaluate",
                "--outcomes", str(FIXTURES / "outcomes.csv"),
                "--distances", str(FIXTURES / "distances.csv"),
                "--n-boot", "200", "--seed", "42", "--mode", mode,
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        golden_dir = FIXTURES / "golden" / mode
        golden_files = sorted(p.name for p in golden_dir.iterdir())
        assert golden_files, "golden directory is empty"
        for name in golden_files:
            assert (out / name).read_bytes() == (golden_dir / name).read_bytes(), name
        # the report path also renders figures next to the delimited output
        assert list((out / "figures").glob("*.png"))


def _gamma_task_fingerprint(shapes, scales, n, seed, binning, task_id):
    rng = np.random.default_rng(seed)
    vals = rng.gamma(shapes, scales, size=(n, shapes.shape[0]))
    return compute_fingerprint(FeatureMatrix(task_id, vals), binning)


def test_criterion_7_sample_size_robustness():
    """10-sample target fingerprints preserve full-size rankings; self-retrieval works."""
    with criterion(
        7, "sample-size robustness: Spearman > 0.5 (10 vs 10,000 samples), self-retrieval >= 9/10, < 60 s"
    ):
        start = time.time()
        n_tasks, m, b = 10, 12, 1000
        binning = BinningConfig(b, 0.0, 10.0)
        master = np.random.default_rng(20250810)
        shapes = master.uniform(0.8, 6.0, size=(n_tasks, m))
        scales = master.uniform(0.3, 1.2, size=(n_tasks, m))

        def dist(source_fp, target_fp):
            return bkld_distance(source_fp, target_fp, WeightMode.UNIFORM)

        def ranking(target_fp, sources, exclude):
            ds = {g: dist(fp, target_fp) for g, fp in sources.items() if g != exclude}
            return sorted(ds, key=lambda g: (ds[g], g))

        full = {
            g: _gamma_task_fingerprint(shapes[g], scales[g], 10_000, 1000 + g, binning, f"g{g}")
            for g in range(n_tasks)
        }
        full_rankings = {g: ranking(full[g], full, g) for g in range(n_tasks)}

        # sources stay at full size; only the querying target shrinks to 10 samples
        resample_means = []
        for r in range(10):
            rhos = []
            for g in range(n_tasks):
                small_target = _gamma_task_fingerprint(
                    shapes[g], scales[g], 10, 5000 + r * 100 + g, binning, f"g{g}-small"
                )
                small_rank = ranking(small_target, full, g)
                pos = {s: i for i, s in enumerate(small_rank)}
                ref = full_rankings[g]
                rho = scipy.stats.spearmanr(
                    list(range(len(ref))), [pos[s] for s in ref]
                ).statistic
                rhos.append(rho)
            resample_means.append(float(np.mean(rhos)))
        mean_rho = float(np.mean(resample_means))
        assert mean_rho > 0.5, resample_means

        redraw = {
            g: _gamma_task_fingerprint(shapes[g], scales[g], 10_000, 9000 + g, binning, f"g{g}-b")
            for g in range(n_tasks)
        }
        hits = 0
        for g in range(n_tasks):
            ds = {h: dist(full[h], redraw[g]) for h in range(n_tasks)}
            hits += min(ds, key=lambda h: (ds[h], h)) == g
        assert hits >= 9, f"self-retrieval {hits}/10"

        elapsed = time.time() - start
        assert elapsed < 60.0, f"took {elapsed:.1f} s"


SERVICE_BINNING = BinningConfig(50, 0.0, 10.0)


def _service_fingerprint_bytes(task_id, center):
    rng = np.random.default_rng(abs(hash(task_id)) % 2**32)
    vals = np.clip(rng.normal(center, 0.25, size=(150, 6)), 0.05, 9.95)
    fp = compute_fingerprint(FeatureMatrix(task_id, vals, extractor_id="svc"), SERVICE_BINNING)
    return fingerprint_to_bytes(fp)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _start_server(data_dir, port):
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "taskprint.cli", "serve",
            "--data-dir", str(data_dir), "--listen", f"127.0.0.1:{port}",
        ],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    import httpx

    deadline = time.time() + 20
    while time.time() < deadline:
        try:
            httpx.get(f"http://127.0.0.1:{port}/v1/measures", timeout=1.0)
            return proc
        except httpx.HTTPError:
            if proc.poll() is not None:
                raise RuntimeError("server exited early")
            time.sleep(0.1)
    proc.kill()
    raise RuntimeError("server did not come up")


def _stop_server(proc):
    proc.send_signal(signal.SIGTERM)
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()


def test_criterion_8_service_round_trip(tmp_path):
    """Submit 5 records, restart the process, query under every measure."""
    import httpx

    with criterion(8, "service round-trip: restart durability, rank-1 retrieval, overlap exclusion"):
        data_dir = tmp_path / "cloud"
        port = _free_port()
        base = f"http://127.0.0.1:{port}"
        centers = [1.0, 2.5, 4.0, 5.5, 7.0]
        submitted = {}
        proc = _start_server(data_dir, port)
        try:
            for i, center in enumerate(centers):
                task_id = f"rec{i}"
                raw = _service_fingerprint_bytes(task_id, center)
                submitted[task_id] = raw
                r = httpx.post(
                    f"{base}/v1/tasks",
                    json={
                        "task_id": task_id,
                        "fingerprint": base64.b64encode(raw).decode(),
                        "task_size": 100 + i,
                        "keywords": ["synthetic", f"cluster{i}"],
                        "overlap_group": "grp3" if i == 2 else None,
                    },
                    timeout=10.0,
                )
                assert r.status_code == 201, r.text
        finally:
            _stop_server(proc)

        # restart on the same data directory
        proc = _start_server(data_dir, port)
        try:
            measures = [m["name"] for m in httpx.get(f"{base}/v1/measures", timeout=10.0).json()["measures"]]
            assert len(measures) >= 7

            query_fp = base64.b64encode(submitted["rec2"]).decode()
            rank1_required = {
                "bkld-small-target",
                "bkld-large-source",
                "bkld-large-unweighted",
                "vdna",
                "fid",
            }
            for name in measures:
                payload = {"fingerprint": query_fp, "measure": name, "k": 5}
                if name == "manual":
                    payload["keywords"] = ["synthetic", "cluster2"]
                r = httpx.post(f"{base}/v1/query", json=payload, timeout=10.0)
                assert r.status_code == 200, (name, r.text)
                top = r.json()["suggestions"][0]
                if name in rank1_required:
                    assert top["task_id"] == "rec2", (name, r.json())

            r = httpx.post(
                f"{base}/v1/query",
                json={
                    "fingerprint": query_fp,
                    "measure": "vdna",
                    "k": 5,
                    "exclude_overlap_group": "grp3",
                },
                timeout=10.0,
            )
            ids = [s["task_id"] for s in r.json()["suggestions"]]
            assert "rec2" not in ids and len(ids) == 4

            for task_id, raw in submitted.items():
                got = httpx.get(f"{base}/v1/tasks/{task_id}", timeout=10.0).json()
                assert base64.b64decode(got["fingerprint"]) == raw, task_id
        finally:
            _stop_server(proc)


def test_criterion_9_manual_matching():
    """Keyword IoU values and larger-source tie-breaking on a 4-task manifest."""
    with criterion(9, "manual matching: IoU values and larger-source tie-breaking"):
        target = KeywordSet("target", {"endoscopy", "polyp", "colon"}, task_size=800)
        exact = KeywordSet("exact", {"endoscopy", "polyp", "colon"}, task_size=100)
        big = KeywordSet("big", {"endoscopy", "polyp", "stomach"}, task_size=5000)
        small = KeywordSet("small", {"endoscopy", "colon", "stomach"}, task_size=200)

        assert manual_distance(exact, target) == -1.0
        assert manual_distance(big, target) == -0.5
        assert manual_distance(small, target) == -0.5
        assert manual_distance(KeywordSet("x", {"mri"}, 1), target) == 0.0

        from types import SimpleNamespace

        pool = CandidatePool(
            entries=[
                SimpleNamespace(task_id=k.task_id, task_size=k.task_size, keywords=k, fingerprint=None)
                for k in (exact, big, small)
            ]
        )
        ranked = select(
            TaskQuery(task_id="target", keywords=target),
            pool,
            default_registry().get("manual"),
            k=3,
        )
        # equal IoU 0.5: the 5000-sample source outranks the 200-sample one
        assert ranked.task_ids() == ["exact", "big", "small"]
        assert [s.rank for s in ranked] == [1, 2, 3]
