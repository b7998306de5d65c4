"""Significance tests for comparing two systems' outputs.

Per-sentence paired t-test for tagging accuracies, and a randomized
stratified-shuffling comparator for corpus metrics: each trial swaps the two
systems' outputs sentence-by-sentence with probability one half, recomputes
the corpus metric difference from pooled sufficient statistics, and counts
trials at least as extreme as the observed difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .evaluation import las_uas, pos_accuracy, span_f1

METRICS = ("las", "uas", "accuracy", "spanf1")


class StatsError(Exception):
    pass


class DegenerateSampleError(StatsError):
    """All paired differences identical: the t statistic is undefined."""

    def __init__(self, mean_diff: float):
        super().__init__(f"degenerate sample: zero variance, mean difference {mean_diff}")
        self.mean_diff = mean_diff


@dataclass(frozen=True)
class PairedSample:
    a: tuple[float, ...]
    b: tuple[float, ...]

    def __post_init__(self):
        if len(self.a) != len(self.b):
            raise StatsError(f"unaligned sample: {len(self.a)} vs {len(self.b)} sentences")
        if len(self.a) < 2:
            raise StatsError("need at least 2 paired observations")


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


@dataclass(frozen=True)
class ShuffleTestResult:
    observed_diff: float
    n_trials: int
    n_at_least_as_extreme: int
    p_value: float
    seed: int


def student_t_sf2(t: float, df: int) -> float:
    """Two-sided tail probability of the Student-t distribution."""
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def paired_ttest(sample: PairedSample) -> TTestResult:
    """Two-sided paired t-test on per-sentence metric values."""
    d = np.asarray(sample.a, dtype=np.float64) - np.asarray(sample.b, dtype=np.float64)
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError(mean)
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    return TTestResult(t=t, df=df, p=student_t_sf2(t, df))


def _sentence_stats(gold, out, metric: str) -> np.ndarray:
    if metric == "accuracy":
        return np.asarray(pos_accuracy(gold, out).stats, dtype=np.float64)
    if metric in ("las", "uas"):
        report = las_uas(gold, out)
        col = 0 if metric == "las" else 1
        rows = np.asarray(report.stats, dtype=np.float64)
        return rows[:, [col, 2]]
    if metric == "spanf1":
        return np.asarray(span_f1(gold, out).stats, dtype=np.float64)
    raise StatsError(f"unknown metric {metric!r}, expected one of {METRICS}")


def _corpus_metric(sums: np.ndarray, metric: str) -> np.ndarray:
    """Metric from pooled statistics; sums is [..., k]."""
    if metric in ("accuracy", "las", "uas"):
        return sums[..., 0] / sums[..., 1]
    # span F1 from (tp, n_pred, n_gold)
    tp, n_pred, n_gold = sums[..., 0], sums[..., 1], sums[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        r = np.where(n_gold > 0, tp / np.maximum(n_gold, 1), 0.0)
        f = np.where(p + r > 0, 2 * p * r / np.maximum(p + r, 1e-300), 0.0)
    return f


def stratified_shuffle_test(
    gold, out_a, out_b, metric: str, n_trials: int = 10000, seed: int = 0
) -> ShuffleTestResult:
    """Randomization test on the absolute corpus metric difference.

    p uses add-one smoothing, (extreme + 1) / (trials + 1), so it is never
    zero.  Deterministic for a fixed seed.
    """
    if n_trials < 100:
        raise StatsError(f"n_trials must be >= 100, got {n_trials}")
    stats_a = _sentence_stats(gold, out_a, metric)
    stats_b = _sentence_stats(gold, out_b, metric)
    if stats_a.shape != stats_b.shape:
        raise StatsError("systems cover different corpora")

    sum_a = stats_a.sum(axis=0)
    sum_b = stats_b.sum(axis=0)
    observed = abs(float(_corpus_metric(sum_a, metric) - _corpus_metric(sum_b, metric)))

    rng = np.random.default_rng(seed)
    swaps = rng.random((n_trials, stats_a.shape[0])) < 0.5
    delta = swaps.astype(np.float64) @ (stats_b - stats_a)  # [trials, k]
    trial_a = sum_a[None, :] + delta
    trial_b = sum_b[None, :] - delta
    diffs = np.abs(_corpus_metric(trial_a, metric) - _corpus_metric(trial_b, metric))
    extreme = int(np.sum(diffs >= observed - 1e-12))
    return ShuffleTestResult(
        observed_diff=observed,
        n_trials=n_trials,
        n_at_least_as_extreme=extreme,
        p_value=(extreme + 1) / (n_trials + 1),
        seed=seed,
    )
