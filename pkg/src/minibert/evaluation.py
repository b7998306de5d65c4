"""Task metrics: POS accuracy, BIO span P/R/F1, LAS/UAS.

Corpus-level values are computed from pooled counts, never by averaging
per-sentence scores; the per-sentence vectors and sufficient statistics are
retained so significance tests can resample them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .treecodec import DepTree


class EvalError(Exception):
    pass


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    per_sentence: dict[str, list[float]]
    counts: dict[str, int]
    # per-sentence sufficient statistics, rows aligned with the corpus
    stats: list[tuple] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "task": self.task,
            "metrics": self.metrics,
            "counts": self.counts,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def to_table(self) -> str:
        width = max(len(k) for k in self.metrics)
        lines = [f"{k.ljust(width)}  {v:8.4f}" for k, v in sorted(self.metrics.items())]
        lines += [f"{k.ljust(width)}  {v:8d}" for k, v in sorted(self.counts.items())]
        return "\n".join(lines)

    def write_per_sentence_csv(self, path: str) -> None:
        keys = sorted(self.per_sentence)
        n = len(self.per_sentence[keys[0]]) if keys else 0
        with open(path, "w", encoding="utf-8") as f:
            f.write("sentence," + ",".join(keys) + "\n")
            for i in range(n):
                f.write(str(i) + "," + ",".join(repr(self.per_sentence[k][i]) for k in keys) + "\n")


def _check_aligned(gold, pred, unit: str):
    if len(gold) == 0:
        raise EvalError("empty corpus")
    if len(gold) != len(pred):
        raise EvalError(f"corpus size mismatch: {len(gold)} gold vs {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise EvalError(
                f"sentence {i}: {unit} count mismatch ({len(g)} gold vs {len(p)} predicted)"
            )


def pos_accuracy(gold, pred) -> EvalReport:
    """Token-level exact-match accuracy over aligned tag sequences."""
    _check_aligned(gold, pred, "token")
    per_sent = []
    stats = []
    correct = total = 0
    for g, p in zip(gold, pred):
        c = sum(1 for x, y in zip(g, p) if x == y)
        per_sent.append(c / len(g) if g else 1.0)
        stats.append((c, len(g)))
        correct += c
        total += len(g)
    if total == 0:
        raise EvalError("corpus has no tokens")
    return EvalReport(
        task="pos",
        metrics={"accuracy": correct / total},
        per_sentence={"accuracy": per_sent},
        counts={"sentences": len(gold), "tokens": total, "correct": correct},
        stats=stats,
    )


def bio_to_spans(tags) -> set[tuple[str, int, int]]:
    """(type, start, end) spans, end inclusive; orphan I-X starts a new span."""
    spans = set()
    open_type = None
    start = 0
    for i, tag in enumerate(tags):
        if tag == "O" or tag is None:
            if open_type is not None:
                spans.add((open_type, start, i - 1))
                open_type = None
            continue
        if "-" not in tag:
            raise EvalError(f"malformed BIO tag {tag!r}")
        marker, etype = tag.split("-", 1)
        if marker not in ("B", "I"):
            raise EvalError(f"malformed BIO tag {tag!r}")
        if marker == "B" or open_type != etype:
            if open_type is not None:
                spans.add((open_type, start, i - 1))
            open_type = etype
            start = i
    if open_type is not None:
        spans.add((open_type, start, len(tags) - 1))
    return spans


def spans_to_bio(spans, length: int) -> list[str]:
    """Inverse of bio_to_spans for non-overlapping span sets."""
    tags = ["O"] * length
    for etype, start, end in sorted(spans, key=lambda s: (s[1], s[2])):
        if start < 0 or end >= length or end < start:
            raise EvalError(f"span {(etype, start, end)} outside [0, {length})")
        if any(t != "O" for t in tags[start : end + 1]):
            raise EvalError(f"span {(etype, start, end)} overlaps another span")
        tags[start] = f"B-{etype}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{etype}"
    return tags


def span_f1(gold, pred) -> EvalReport:
    """Exact-match span precision/recall/F1 over aligned BIO tag sequences."""
    _check_aligned(gold, pred, "token")
    tp = n_gold = n_pred = 0
    tok_correct = tok_total = 0
    per_sent_acc = []
    stats = []
    for g, p in zip(gold, pred):
        gs = bio_to_spans(g)
        ps = bio_to_spans(p)
        hit = len(gs & ps)
        tp += hit
        n_gold += len(gs)
        n_pred += len(ps)
        stats.append((hit, len(ps), len(gs)))
        c = sum(1 for x, y in zip(g, p) if x == y)
        tok_correct += c
        tok_total += len(g)
        per_sent_acc.append(c / len(g) if g else 1.0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        task="ner",
        metrics={"precision": precision, "recall": recall, "f1": f1},
        per_sentence={"token_accuracy": per_sent_acc},
        counts={
            "sentences": len(gold),
            "tokens": tok_total,
            "gold_spans": n_gold,
            "pred_spans": n_pred,
            "correct_spans": tp,
        },
        stats=stats,
    )


def las_uas(gold, pred) -> EvalReport:
    """Attachment scores over aligned trees; every word counts."""
    if len(gold) == 0:
        raise EvalError("empty corpus")
    if len(gold) != len(pred):
        raise EvalError(f"corpus size mismatch: {len(gold)} gold vs {len(pred)} predicted")
    las_hits = uas_hits = total = 0
    per_las = []
    per_uas = []
    stats = []
    for i, (g, p) in enumerate(zip(gold, pred)):
        g = g if isinstance(g, DepTree) else DepTree(*g)
        p = p if isinstance(p, DepTree) else DepTree(*p)
        if g.n != p.n:
            raise EvalError(f"sentence {i}: word count mismatch ({g.n} gold vs {p.n} predicted)")
        u = sum(1 for gh, ph in zip(g.heads, p.heads) if gh == ph)
        l = sum(
            1
            for gh, gd, ph, pd in zip(g.heads, g.deprels, p.heads, p.deprels)
            if gh == ph and gd == pd
        )
        uas_hits += u
        las_hits += l
        total += g.n
        per_uas.append(u / g.n)
        per_las.append(l / g.n)
        stats.append((l, u, g.n))
    return EvalReport(
        task="dep",
        metrics={"las": las_hits / total, "uas": uas_hits / total},
        per_sentence={"las": per_las, "uas": per_uas},
        counts={
            "sentences": len(gold),
            "tokens": total,
            "las_correct": las_hits,
            "uas_correct": uas_hits,
        },
        stats=stats,
    )
