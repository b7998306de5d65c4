import numpy as np
import pytest

from minibert.stats import (
    DegenerateSampleError,
    PairedSample,
    ShuffleTestResult,
    StatsError,
    paired_ttest,
    stratified_shuffle_test,
    student_t_sf2,
)
from minibert.treecodec import DepTree, random_projective_tree


class TestPairedTTest:
    def test_hand_derived_example(self):
        # d = [0.10, 0.05, 0.15, 0.10]: mean 0.1, sd 0.040825, t = 4.899,
        # df = 3; published t-table gives two-sided p about 0.016
        b = (0.50, 0.50, 0.50, 0.50)
        a = (0.60, 0.55, 0.65, 0.60)
        r = paired_ttest(PairedSample(a, b))
        assert r.t == pytest.approx(4.899, abs=1e-3)
        assert r.df == 3
        assert r.p == pytest.approx(0.016, abs=1e-3)

    def test_antisymmetry(self):
        a = (0.9, 0.8, 0.7, 0.95)
        b = (0.85, 0.82, 0.6, 0.9)
        r1 = paired_ttest(PairedSample(a, b))
        r2 = paired_ttest(PairedSample(b, a))
        assert r1.t == pytest.approx(-r2.t, abs=1e-12)
        assert r1.p == pytest.approx(r2.p, abs=1e-12)

    def test_degenerate_sample(self):
        with pytest.raises(DegenerateSampleError) as exc:
            paired_ttest(PairedSample((0.5, 0.6), (0.4, 0.5)))
        assert exc.value.mean_diff == pytest.approx(0.1)

    def test_identical_systems_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            paired_ttest(PairedSample((0.5, 0.6, 0.7), (0.5, 0.6, 0.7)))

    def test_sample_invariants(self):
        with pytest.raises(StatsError):
            PairedSample((1.0,), (1.0,))
        with pytest.raises(StatsError):
            PairedSample((1.0, 2.0), (1.0,))

    def test_t_distribution_reference_values(self):
        # classic t-table entries: P(|T| > 2.776) = 0.05 at df=4,
        # P(|T| > 2.262) = 0.05 at df=9
        assert student_t_sf2(2.776, 4) == pytest.approx(0.05, abs=2e-4)
        assert student_t_sf2(2.262, 9) == pytest.approx(0.05, abs=2e-4)
        assert student_t_sf2(0.0, 5) == 1.0


def tag_corpus(rng, n_sent=30, acc=0.8):
    gold = []
    out = []
    for _ in range(n_sent):
        n = int(rng.integers(3, 12))
        g = [f"T{int(rng.integers(5))}" for _ in range(n)]
        o = [t if rng.random() < acc else f"T{int(rng.integers(5))}" for t in g]
        gold.append(g)
        out.append(o)
    return gold, out


class TestShuffleTest:
    def test_identical_outputs_p_one(self):
        rng = np.random.default_rng(0)
        gold, out = tag_corpus(rng)
        r = stratified_shuffle_test(gold, out, [list(s) for s in out], "accuracy",
                                    n_trials=500, seed=1)
        assert r.observed_diff == 0.0
        assert r.n_at_least_as_extreme == r.n_trials
        assert r.p_value == 1.0

    def test_perfect_versus_all_wrong_hits_lower_bound(self):
        n = 50
        gold = [["A", "A"] for _ in range(n)]
        out_a = [["A", "A"] for _ in range(n)]
        out_b = [["B", "B"] for _ in range(n)]
        r = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=2000, seed=3)
        assert r.observed_diff == 1.0
        # only all-heads or all-tails swap patterns reach |diff| = 1
        assert r.p_value == pytest.approx(1 / 2001, abs=1e-3)
        assert r.n_at_least_as_extreme <= 2

    def test_p_value_formula_invariant(self):
        rng = np.random.default_rng(5)
        gold, out_a = tag_corpus(rng, acc=0.9)
        _g, out_b = tag_corpus(rng, acc=0.9)
        out_b = [o[: len(g)] for g, o in zip(gold, out_b)]  # align lengths
        # realign: rebuild b on the same gold
        out_b = [
            [t if rng.random() < 0.85 else "T0" for t in g] for g in gold
        ]
        r = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=300, seed=7)
        assert r.p_value == (r.n_at_least_as_extreme + 1) / (r.n_trials + 1)
        assert 0 < r.p_value <= 1

    def test_role_swap_symmetric(self):
        rng = np.random.default_rng(6)
        gold, out_a = tag_corpus(rng, acc=0.95)
        out_b = [[t if rng.random() < 0.8 else "T9" for t in g] for g in gold]
        r1 = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=400, seed=11)
        r2 = stratified_shuffle_test(gold, out_b, out_a, "accuracy", n_trials=400, seed=11)
        assert r1.p_value == r2.p_value
        assert r1.observed_diff == r2.observed_diff

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(8)
        gold, out_a = tag_corpus(rng, acc=0.9)
        out_b = [[t if rng.random() < 0.8 else "T3" for t in g] for g in gold]
        r1 = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=300, seed=2)
        r2 = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=300, seed=2)
        r3 = stratified_shuffle_test(gold, out_a, out_b, "accuracy", n_trials=300, seed=4)
        assert r1 == r2
        assert r1.seed == 2
        assert r3.n_at_least_as_extreme != r1.n_at_least_as_extreme or r3.seed != r1.seed

    def test_las_metric(self):
        rng = np.random.default_rng(9)
        gold = [random_projective_tree(int(rng.integers(2, 10)), rng) for _ in range(25)]
        out_a = [DepTree(list(t.heads), list(t.deprels)) for t in gold]
        out_b = [random_projective_tree(t.n, rng) for t in gold]
        r = stratified_shuffle_test(gold, out_a, out_b, "las", n_trials=200, seed=0)
        assert r.p_value < 0.05  # perfect vs random must look significant

    def test_spanf1_metric_runs(self):
        gold = [["B-PER", "I-PER", "O"], ["O", "B-LOC"]] * 10
        out_a = [list(s) for s in gold]
        out_b = [["O"] * len(s) for s in gold]
        r = stratified_shuffle_test(gold, out_a, out_b, "spanf1", n_trials=200, seed=1)
        assert 0 < r.p_value < 1.01

    def test_monotone_in_observed_diff(self):
        # with the trial distribution fixed, a larger observed difference
        # can only reduce the count of at-least-as-extreme trials
        rng = np.random.default_rng(12)
        gold, out_a = tag_corpus(rng, acc=0.9)
        out_b = [[t if rng.random() < 0.7 else "T1" for t in g] for g in gold]
        from minibert.stats import _corpus_metric, _sentence_stats

        a = _sentence_stats(gold, out_a, "accuracy")
        b = _sentence_stats(gold, out_b, "accuracy")
        swaps = np.random.default_rng(0).random((500, a.shape[0])) < 0.5
        delta = swaps.astype(np.float64) @ (b - a)
        diffs = np.abs(
            _corpus_metric(a.sum(0)[None] + delta, "accuracy")
            - _corpus_metric(b.sum(0)[None] - delta, "accuracy")
        )
        counts = [int((diffs >= d).sum()) for d in (0.0, 0.01, 0.05, 0.2)]
        assert counts == sorted(counts, reverse=True)

    def test_too_few_trials_rejected(self):
        with pytest.raises(StatsError):
            stratified_shuffle_test([["A"]], [["A"]], [["A"]], "accuracy", n_trials=10)

    def test_misaligned_rejected(self):
        with pytest.raises(Exception):
            stratified_shuffle_test([["A", "B"]], [["A"]], [["A", "B"]], "accuracy",
                                    n_trials=100, seed=0)


class TestNullCalibration:
    def test_rejection_rate_small_sample(self):
        # smaller copy of the acceptance calibration: same-process outputs
        # rejected at alpha=0.05 about 5% of the time
        rng = np.random.default_rng(100)
        rejections = 0
        reps = 60
        for _ in range(reps):
            gold = [["T0"] * int(rng.integers(4, 10)) for _ in range(40)]
            out_a = [[t if rng.random() < 0.8 else "T1" for t in g] for g in gold]
            out_b = [[t if rng.random() < 0.8 else "T1" for t in g] for g in gold]
            r = stratified_shuffle_test(gold, out_a, out_b, "accuracy",
                                        n_trials=400, seed=int(rng.integers(2**31)))
            rejections += r.p_value < 0.05
        assert rejections / reps < 0.15
