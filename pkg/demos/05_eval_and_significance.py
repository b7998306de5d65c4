"""Score two systems and decide whether their difference is significant.

POS accuracy, NER span F1 and LAS/UAS keep per-sentence scores, so the
paired t-test can compare per-sentence accuracies and the stratified
shuffling test can resample corpus metrics sentence by sentence.
"""

import numpy as np

from minibert.evaluation import las_uas, pos_accuracy, span_f1
from minibert.stats import PairedSample, paired_ttest, stratified_shuffle_test
from minibert.treecodec import DepTree, random_projective_tree

rng = np.random.default_rng(1)

# --- token accuracy + t-test -------------------------------------------
gold = [[f"T{int(rng.integers(4))}" for _ in range(10)] for _ in range(60)]
system_a = [[t if rng.random() < 0.95 else "T0" for t in s] for s in gold]
system_b = [[t if rng.random() < 0.85 else "T0" for t in s] for s in gold]

report_a = pos_accuracy(gold, system_a)
report_b = pos_accuracy(gold, system_b)
print(f"accuracy A={report_a.metrics['accuracy']:.4f}  B={report_b.metrics['accuracy']:.4f}")

sample = PairedSample(
    tuple(report_a.per_sentence["accuracy"]), tuple(report_b.per_sentence["accuracy"])
)
t = paired_ttest(sample)
print(f"paired t-test: t={t.t:.3f} df={t.df} p={t.p:.2g}")

# --- NER span F1 ---------------------------------------------------------
ner_gold = [["B-PER", "I-PER", "O", "B-LOC"], ["O", "B-ORG", "I-ORG", "O"]]
ner_pred = [["B-PER", "I-PER", "O", "B-PER"], ["O", "B-ORG", "O", "O"]]
r = span_f1(ner_gold, ner_pred)
print(f"\nNER P={r.metrics['precision']:.3f} R={r.metrics['recall']:.3f} "
      f"F1={r.metrics['f1']:.3f}  (spans: {r.counts['pred_spans']} predicted, "
      f"{r.counts['gold_spans']} gold)")

# --- parsing + stratified shuffling -------------------------------------
gold_trees = [random_projective_tree(int(rng.integers(3, 12)), rng) for _ in range(80)]
parser_a = [
    t if rng.random() < 0.7 else random_projective_tree(t.n, rng) for t in gold_trees
]
parser_b = [random_projective_tree(t.n, rng) for t in gold_trees]

ra = las_uas(gold_trees, parser_a)
rb = las_uas(gold_trees, parser_b)
print(f"\nLAS A={ra.metrics['las']:.4f}  B={rb.metrics['las']:.4f}")

shuffle = stratified_shuffle_test(gold_trees, parser_a, parser_b, "las",
                                  n_trials=5000, seed=42)
print(f"stratified shuffling: diff={shuffle.observed_diff:.4f} "
      f"p={shuffle.p_value:.2g} ({shuffle.n_at_least_as_extreme}/{shuffle.n_trials} "
      f"trials at least as extreme)")

same = stratified_shuffle_test(gold_trees, parser_a, parser_a, "las",
                               n_trials=1000, seed=0)
print(f"identical systems: p={same.p_value}")
