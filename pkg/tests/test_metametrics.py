"""Meta-metric tests: hand examples, brute-force oracles, bootstrap behavior."""

import numpy as np
import pytest
import scipy.stats

from taskprint.errors import MissingRecordError, ValidationError
from taskprint.metametrics import (
    BASELINE,
    BootstrapMode,
    OutcomeRecord,
    OutcomeTable,
    SetupKey,
    ShotMode,
    average_ranks,
    bootstrap_ranking,
    gain,
    improvement,
    kendall_tau,
    multi_shot,
    percentile,
    regret,
    stability_score,
    weighted_tau,
    win_rates,
)

KEY = SetupKey("T1", "MODEL_ARCHITECTURE", "BA", 1)


def table_for(values, baseline=0.5, key=KEY):
    """OutcomeTable with one setup and the given source outcome values."""
    records = [
        OutcomeRecord(key.target_id, f"S{i}", key.scenario, key.metric, key.repetition, v)
        for i, v in enumerate(values)
    ]
    records.append(
        OutcomeRecord(key.target_id, BASELINE, key.scenario, key.metric, key.repetition, baseline)
    )
    return OutcomeTable(records)


def weighted_tau_brute(predicted, actual):
    """O(n^2) enumeration straight from the definition."""
    rank = {e: i for i, e in enumerate(actual)}
    pos = {e: i for i, e in enumerate(predicted)}
    num = den = 0.0
    items = list(actual)
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            x, y = items[a], items[b]
            w = 1 / (1 + rank[x]) + 1 / (1 + rank[y])
            s = np.sign((pos[x] - pos[y]) * (rank[x] - rank[y]))
            num += s * w
            den += w
    return num / den


class TestOutcomeTable:
    def test_requires_baseline(self):
        records = [OutcomeRecord("T1", "S0", "PRETRAINING", "BA", 1, 0.5)]
        with pytest.raises(ValidationError, match="baseline"):
            OutcomeTable(records)

    def test_rejects_duplicates(self):
        rec = OutcomeRecord("T1", "S0", "PRETRAINING", "BA", 1, 0.5)
        base = OutcomeRecord("T1", BASELINE, "PRETRAINING", "BA", 1, 0.5)
        with pytest.raises(ValidationError, match="duplicate"):
            OutcomeTable([rec, rec, base])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError, match="outside"):
            OutcomeTable([OutcomeRecord("T1", "S0", "PRETRAINING", "BA", 1, 1.5)])

    def test_rejects_unknown_scenario(self):
        with pytest.raises(ValidationError, match="scenario"):
            OutcomeTable([OutcomeRecord("T1", "S0", "FROBNICATION", "BA", 1, 0.5)])

    def test_missing_record_named(self):
        t = table_for([0.6])
        with pytest.raises(MissingRecordError, match="S9"):
            t.value(KEY, "S9")


class TestImprovementGain:
    def test_positive(self):
        t = table_for([0.82], baseline=0.80)
        assert abs(improvement(t, KEY, "S0") - 0.02) < 1e-12
        assert gain(t, KEY, "S0") == 1

    def test_noop_transfer(self):
        t = table_for([0.8], baseline=0.8)
        assert improvement(t, KEY, "S0") == 0.0
        assert gain(t, KEY, "S0") == 1  # equality is not negative transfer

    def test_negative(self):
        t = table_for([0.70], baseline=0.80)
        assert abs(improvement(t, KEY, "S0") - (-0.10)) < 1e-12
        assert gain(t, KEY, "S0") == 0

    def test_gain_iff_improvement_nonnegative(self):
        rng = np.random.default_rng(61)
        for _ in range(1000):
            v, b = rng.uniform(0, 1, size=2)
            t = table_for([v], baseline=b)
            assert (gain(t, KEY, "S0") == 1) == (improvement(t, KEY, "S0") >= 0)


class TestPercentile:
    def test_counting_example(self):
        t = table_for([0.1, 0.2, 0.3, 0.4])
        assert percentile(t, KEY, "S2") == 0.75

    def test_best_is_one(self):
        t = table_for([0.1, 0.2, 0.3, 0.4])
        assert percentile(t, KEY, "S3") == 1.0

    def test_singleton_pool(self):
        t = table_for([0.3])
        assert percentile(t, KEY, "S0") == 1.0

    def test_best_percentile_and_zero_regret_coincide(self):
        rng = np.random.default_rng(67)
        for _ in range(50):
            vals = rng.uniform(0, 0.99, size=rng.integers(1, 10))
            t = table_for(list(vals))
            best = f"S{int(np.argmax(vals))}"
            assert percentile(t, KEY, best) == 1.0
            assert regret(t, KEY, best) == 0.0


class TestRegret:
    def test_half_gap(self):
        t = table_for([0.9, 0.8])
        assert abs(regret(t, KEY, "S1") - 0.5) < 1e-12

    def test_optimal_choice(self):
        t = table_for([0.9, 0.8])
        assert regret(t, KEY, "S0") == 0.0

    def test_large_gap(self):
        t = table_for([0.95, 0.5])
        assert abs(regret(t, KEY, "S1") - 0.9) < 1e-12

    def test_selected_one_with_tied_max(self):
        t = table_for([1.0, 0.5])
        assert regret(t, KEY, "S0") == 0.0


class TestWeightedTau:
    def test_identity_exact(self):
        assert weighted_tau(list("abcd"), list("abcd")) == 1.0

    def test_reversal_exact(self):
        assert weighted_tau(list("dcba"), list("abcd")) == -1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(71)
        ids = list("abcdefgh")
        for _ in range(500):
            n = int(rng.integers(2, 9))
            pred = list(rng.permutation(ids[:n]))
            act = list(rng.permutation(ids[:n]))
            assert abs(weighted_tau(pred, act) - weighted_tau_brute(pred, act)) < 1e-12

    def test_matches_scipy_hyperbolic_additive(self):
        rng = np.random.default_rng(73)
        ids = list(range(10))
        for _ in range(100):
            n = int(rng.integers(2, 11))
            pred = list(rng.permutation(ids[:n]))
            act = list(rng.permutation(ids[:n]))
            pred_pos = {e: i for i, e in enumerate(pred)}
            x = np.array([n - pred_pos[e] for e in act], float)
            y = np.array([n - i for i in range(n)], float)
            expected = scipy.stats.weightedtau(x, y, rank=False).statistic
            assert abs(weighted_tau(pred, act) - expected) < 1e-12

    def test_rejects_mismatched_ids(self):
        with pytest.raises(ValidationError, match="permutations"):
            weighted_tau(["a", "b"], ["a", "c"])

    def test_rejects_too_small(self):
        with pytest.raises(ValidationError, match="at least 2"):
            weighted_tau(["a"], ["a"])


class TestMultiShot:
    def test_k1_modes_agree(self):
        t = table_for([0.6, 0.9, 0.7], baseline=0.65)
        for mode in ShotMode:
            assert multi_shot(t, KEY, ["S0"], 1, mode, improvement) == pytest.approx(-0.05)

    def test_best_mode(self):
        t = table_for([0.6, 0.9, 0.7], baseline=0.65)
        got = multi_shot(t, KEY, ["S0", "S1", "S2"], 3, ShotMode.BEST, improvement)
        assert abs(got - 0.25) < 1e-12

    def test_average_mode(self):
        t = table_for([0.6, 0.9, 0.7], baseline=0.65)
        got = multi_shot(t, KEY, ["S0", "S1", "S2"], 3, ShotMode.AVERAGE, improvement)
        assert abs(got - (-0.05 + 0.25 + 0.05) / 3) < 1e-12

    def test_rejects_k_too_large(self):
        t = table_for([0.6])
        with pytest.raises(ValidationError, match="exceeds"):
            multi_shot(t, KEY, ["S0"], 2, ShotMode.BEST, improvement)


class TestWinRates:
    def test_counting(self):
        cases = {
            0: {"A": 1.0, "B": 0.5},
            1: {"A": 1.0, "B": 0.5},
            2: {"A": 1.0, "B": 0.5},
            3: {"A": 0.2, "B": 0.5},
        }
        assert win_rates(cases) == {"A": 75.0, "B": 25.0}

    def test_universal_tie(self):
        cases = {i: {"A": 0.5, "B": 0.5, "C": 0.5} for i in range(4)}
        assert win_rates(cases) == {"A": 100.0, "B": 100.0, "C": 100.0}

    def test_single_selector(self):
        assert win_rates({0: {"A": 0.1}}) == {"A": 100.0}

    def test_lower_better_orientation(self):
        cases = {0: {"A": 0.1, "B": 0.9}}
        assert win_rates(cases, higher_better=False) == {"A": 100.0, "B": 0.0}

    def test_rejects_missing_evaluation(self):
        with pytest.raises(ValidationError, match="missing"):
            win_rates({0: {"A": 1.0, "B": 0.5}, 1: {"A": 1.0}})


class TestStabilityScore:
    def test_identical_rankings(self):
        rankings = {"BA": ["A", "B", "C"], "AUROC": ["A", "B", "C"]}
        assert stability_score(rankings) == 1.0

    def test_reversed_rankings(self):
        rankings = {"BA": ["A", "B", "C"], "AUROC": ["C", "B", "A"]}
        assert stability_score(rankings) == -1.0

    def test_mean_of_pairwise_taus(self):
        rankings = {
            1: ["A", "B", "C", "D"],
            2: ["B", "A", "C", "D"],
            3: ["D", "C", "B", "A"],
        }
        expected = np.mean(
            [
                kendall_tau(rankings[1], rankings[2]),
                kendall_tau(rankings[1], rankings[3]),
                kendall_tau(rankings[2], rankings[3]),
            ]
        )
        assert stability_score(rankings) == pytest.approx(expected, abs=1e-12)

    def test_rejects_single_value(self):
        with pytest.raises(ValidationError, match="at least 2"):
            stability_score({"BA": ["A", "B"]})

    def test_rejects_incomplete(self):
        with pytest.raises(ValidationError, match="incomplete"):
            stability_score({"BA": ["A", "B"], "AUROC": ["A", "C"]})


class TestAverageRanks:
    def test_no_ties(self):
        np.testing.assert_array_equal(average_ranks(np.array([0.3, 0.9, 0.1])), [2, 1, 3])

    def test_ties_average(self):
        np.testing.assert_array_equal(
            average_ranks(np.array([0.5, 0.5, 0.1])), [1.5, 1.5, 3.0]
        )

    def test_ascending(self):
        np.testing.assert_array_equal(
            average_ranks(np.array([0.3, 0.9, 0.1]), descending=False), [2, 3, 1]
        )

    def test_matches_scipy_rankdata(self):
        rng = np.random.default_rng(79)
        for _ in range(50):
            scores = rng.integers(0, 5, size=rng.integers(2, 12)).astype(float)
            np.testing.assert_allclose(
                average_ranks(scores, descending=False), scipy.stats.rankdata(scores)
            )


def scores_matrix(setups, selectors, values):
    return {
        setup: {sel: values[i][j] for j, sel in enumerate(selectors)}
        for i, setup in enumerate(setups)
    }


def make_setups(n):
    return [SetupKey(f"T{i}", "PRETRAINING", "BA", 1) for i in range(n)]


class TestBootstrapRanking:
    def test_dominant_selector(self):
        setups = make_setups(4)
        scores = scores_matrix(setups, ["A", "B"], [[0.9, 0.1]] * 4)
        for mode in BootstrapMode:
            dist = bootstrap_ranking(scores, n_boot=50, seed=1, mode=mode)
            assert dist.counts["A"] == {1.0: 50}
            assert dist.counts["B"] == {2.0: 50}
            assert dist.mean_rank["A"] == 1.0

    def test_identical_columns_average_rank(self):
        setups = make_setups(3)
        scores = scores_matrix(setups, ["A", "B"], [[0.4, 0.4], [0.7, 0.7], [0.2, 0.2]])
        for mode in BootstrapMode:
            dist = bootstrap_ranking(scores, n_boot=20, seed=2, mode=mode)
            assert dist.counts["A"] == {1.5: 20}
            assert dist.counts["B"] == {1.5: 20}

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(83)
        setups = make_setups(6)
        scores = scores_matrix(setups, ["A", "B", "C"], rng.uniform(size=(6, 3)).tolist())
        a = bootstrap_ranking(scores, n_boot=100, seed=42, mode=BootstrapMode.AGGREGATE_THEN_RANK)
        b = bootstrap_ranking(scores, n_boot=100, seed=42, mode=BootstrapMode.AGGREGATE_THEN_RANK)
        assert a.counts == b.counts and a.mean_rank == b.mean_rank

    def test_seed_changes_distribution(self):
        rng = np.random.default_rng(89)
        setups = make_setups(8)
        scores = scores_matrix(setups, ["A", "B", "C"], rng.uniform(size=(8, 3)).tolist())
        a = bootstrap_ranking(scores, n_boot=200, seed=1, mode=BootstrapMode.AGGREGATE_THEN_RANK)
        b = bootstrap_ranking(scores, n_boot=200, seed=2, mode=BootstrapMode.AGGREGATE_THEN_RANK)
        assert a.counts != b.counts

    def test_modes_differ_on_skewed_scores(self):
        # selector A wins hugely on one setup, loses narrowly elsewhere:
        # aggregate-then-rank favors A, rank-then-mean favors B
        setups = make_setups(3)
        scores = scores_matrix(
            setups, ["A", "B"], [[1.0, 0.1], [0.4, 0.45], [0.4, 0.45]]
        )
        agg = bootstrap_ranking(scores, 400, seed=0, mode=BootstrapMode.AGGREGATE_THEN_RANK)
        rtm = bootstrap_ranking(scores, 400, seed=0, mode=BootstrapMode.RANK_THEN_MEAN)
        assert agg.counts["A"].get(1.0, 0) > rtm.counts["A"].get(1.0, 0)
        assert agg.mean_rank["A"] < rtm.mean_rank["A"]

    def test_mean_ranks_in_bounds(self):
        rng = np.random.default_rng(97)
        setups = make_setups(5)
        scores = scores_matrix(setups, ["A", "B", "C", "D"], rng.uniform(size=(5, 4)).tolist())
        for mode in BootstrapMode:
            dist = bootstrap_ranking(scores, n_boot=100, seed=5, mode=mode)
            for s in dist.selectors:
                assert 1.0 <= dist.mean_rank[s] <= 4.0
                assert sum(dist.counts[s].values()) == 100

    def test_rejects_incomplete_matrix(self):
        setups = make_setups(2)
        scores = {setups[0]: {"A": 1.0, "B": 0.5}, setups[1]: {"A": 1.0}}
        with pytest.raises(ValidationError, match="missing"):
            bootstrap_ranking(scores, 10, seed=0, mode=BootstrapMode.AGGREGATE_THEN_RANK)


class TestMonotoneTransformInvariance:
    def test_percentile_and_rankings_unchanged(self):
        rng = np.random.default_rng(101)
        vals = list(rng.uniform(0.1, 0.8, size=8))
        t1 = table_for(vals, baseline=0.4)
        transformed = [v**2 for v in vals]  # strictly increasing on [0, 1]
        t2 = table_for(transformed, baseline=0.16)
        for i in range(8):
            assert percentile(t1, KEY, f"S{i}") == percentile(t2, KEY, f"S{i}")
        rank1 = sorted(t1.outcomes(KEY), key=lambda s: -t1.value(KEY, s))
        rank2 = sorted(t2.outcomes(KEY), key=lambda s: -t2.value(KEY, s))
        assert rank1 == rank2
