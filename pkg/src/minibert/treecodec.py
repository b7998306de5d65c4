"""Projective dependency trees as per-word bracket labels, and back.

A word's label describes its own incoming arc ("<" head to the right, ">"
head to the left, neither = root) and its dependent counts ("\\" per left
dependent, "/" per right dependent), plus the dependency relation after "@".
Decoding is total: a left-to-right two-stack pass followed by a repair step
that always produces a valid single-root acyclic tree, whatever the labels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

FROM_LEFT = "from_left"  # head is to the left, serialized ">"
FROM_RIGHT = "from_right"  # head is to the right, serialized "<"
ROOT = "root"

_LABEL_RE = re.compile(r"^(<?)(\\*)(/*)(>?)$")


class TreeError(Exception):
    pass


@dataclass
class DepTree:
    heads: list[int]  # heads[i] is the head of word i+1; 0 = artificial root
    deprels: list[str]

    @property
    def n(self) -> int:
        return len(self.heads)

    def validate(self) -> "DepTree":
        n = self.n
        if n == 0:
            raise TreeError("empty tree")
        if len(self.deprels) != n:
            raise TreeError(f"{len(self.deprels)} deprels for {n} words")
        roots = 0
        for i, h in enumerate(self.heads, start=1):
            if not 0 <= h <= n:
                raise TreeError(f"head {h} of word {i} outside [0, {n}]")
            if h == i:
                raise TreeError(f"word {i} is its own head")
            roots += h == 0
        if roots != 1:
            raise TreeError(f"expected exactly one root, found {roots}")
        for i in range(1, n + 1):
            seen = set()
            j = i
            while j != 0:
                if j in seen:
                    raise TreeError(f"cycle through word {i}")
                seen.add(j)
                j = self.heads[j - 1]
        return self


@dataclass(frozen=True)
class BracketLabel:
    incoming: str  # FROM_LEFT | FROM_RIGHT | ROOT
    n_left_deps: int
    n_right_deps: int
    deprel: str

    def __post_init__(self):
        if self.incoming not in (FROM_LEFT, FROM_RIGHT, ROOT):
            raise TreeError(f"bad incoming direction {self.incoming!r}")
        if self.n_left_deps < 0 or self.n_right_deps < 0:
            raise TreeError("negative dependent count")


def format_label(lab: BracketLabel) -> str:
    core = (
        ("<" if lab.incoming == FROM_RIGHT else "")
        + "\\" * lab.n_left_deps
        + "/" * lab.n_right_deps
        + (">" if lab.incoming == FROM_LEFT else "")
    )
    return (core or "ROOT") + "@" + lab.deprel


def parse_label(text: str) -> BracketLabel:
    core, sep, deprel = text.partition("@")
    if not sep:
        raise TreeError(f"label {text!r} has no '@' separator")
    if core == "ROOT":
        return BracketLabel(ROOT, 0, 0, deprel)
    m = _LABEL_RE.match(core)
    if not m or (m.group(1) and m.group(4)):
        raise TreeError(f"label {text!r} does not match the bracket grammar")
    incoming = FROM_RIGHT if m.group(1) else (FROM_LEFT if m.group(4) else ROOT)
    return BracketLabel(incoming, len(m.group(2)), len(m.group(3)), deprel)


def is_projective(tree: DepTree) -> bool:
    """No two arcs cross; root arcs take part with endpoint 0."""
    arcs = [(min(h, d), max(h, d)) for d, h in enumerate(tree.heads, start=1)]
    for x in range(len(arcs)):
        a, b = arcs[x]
        for y in range(x + 1, len(arcs)):
            c, d = arcs[y]
            if a < c < b < d or c < a < d < b:
                return False
    return True


def encode_tree(tree: DepTree) -> list[BracketLabel]:
    """One label per word; requires a projective input tree."""
    tree.validate()
    if not is_projective(tree):
        raise TreeError("tree is not projective; bracket encoding would be lossy")
    labels = []
    for i, h in enumerate(tree.heads, start=1):
        incoming = ROOT if h == 0 else (FROM_LEFT if h < i else FROM_RIGHT)
        n_left = sum(1 for j, hj in enumerate(tree.heads, start=1) if j < i and hj == i)
        n_right = sum(1 for j, hj in enumerate(tree.heads, start=1) if j > i and hj == i)
        labels.append(BracketLabel(incoming, n_left, n_right, tree.deprels[i - 1]))
    return labels


def repair(heads: list[int | None], deprels: list[str], root_flags: list[bool] | None = None):
    """Force a possibly broken head assignment into a valid DepTree.

    Fixes, in order: out-of-range and self heads are dropped, a root is
    chosen (first root-flagged word, else first head-0 word, else word 1),
    extra roots and unassigned words attach to it, and each remaining cycle
    is broken by reattaching its smallest-index word to the root.  Returns
    (tree, report) where report counts fixes by kind.
    """
    n = len(heads)
    if n == 0:
        raise TreeError("empty label sequence")
    heads = list(heads)
    report = {
        "out_of_range": 0,
        "self_head": 0,
        "root_had_head": 0,
        "no_root": 0,
        "extra_root": 0,
        "unassigned": 0,
        "cycle": 0,
    }
    for i in range(1, n + 1):
        h = heads[i - 1]
        if h is None:
            continue
        if not 0 <= h <= n:
            heads[i - 1] = None
            report["out_of_range"] += 1
        elif h == i:
            heads[i - 1] = None
            report["self_head"] += 1

    if root_flags is None:
        root_flags = [h == 0 for h in heads]
    flagged = [i for i in range(1, n + 1) if root_flags[i - 1]]
    if flagged:
        root = flagged[0]
        if heads[root - 1] not in (None, 0):
            report["root_had_head"] += 1
        heads[root - 1] = 0
        for r in flagged[1:]:
            if heads[r - 1] is None or heads[r - 1] == 0:
                heads[r - 1] = root
                report["extra_root"] += 1
    else:
        root = 1
        if heads[0] is not None:
            report["root_had_head"] += 1
        heads[0] = 0
        report["no_root"] += 1
    # words that claim head 0 without being the chosen root
    for i in range(1, n + 1):
        if i != root and heads[i - 1] == 0:
            heads[i - 1] = root
            report["extra_root"] += 1
    for i in range(1, n + 1):
        if heads[i - 1] is None:
            heads[i - 1] = root
            report["unassigned"] += 1

    while True:
        state = [0] * (n + 1)  # 0 new, 1 on current path, 2 done
        cycle_found = False
        for start in range(1, n + 1):
            if state[start]:
                continue
            path = []
            j = start
            while j != 0 and state[j] == 0:
                state[j] = 1
                path.append(j)
                j = heads[j - 1]
            if j != 0 and state[j] == 1:
                at = path.index(j)
                cycle = path[at:]
                heads[min(cycle) - 1] = root
                report["cycle"] += 1
                cycle_found = True
            for p in path:
                state[p] = 2
            if cycle_found:
                break
        if not cycle_found:
            break

    return DepTree(heads=heads, deprels=list(deprels)).validate(), report


def decode_labels(labels: list[BracketLabel]):
    """Two-stack decode followed by repair; never fails.

    Per word, in order: pop the left stack once per "\\" (popped word gets
    this word as head), push self on the left stack if the head is to the
    right, take the top of the right stack as own head if the head is to the
    left, then push self once per "/".  Returns (tree, repair report).
    """
    if not labels:
        raise TreeError("empty label sequence")
    n = len(labels)
    heads: list[int | None] = [None] * n
    left: list[int] = []
    right: list[int] = []
    empty_pops = 0
    for i, lab in enumerate(labels, start=1):
        for _ in range(lab.n_left_deps):
            if left:
                j = left.pop()
                heads[j - 1] = i
            else:
                empty_pops += 1
        if lab.incoming == FROM_RIGHT:
            left.append(i)
        if lab.incoming == FROM_LEFT:
            if right:
                heads[i - 1] = right.pop()
            else:
                empty_pops += 1
        for _ in range(lab.n_right_deps):
            right.append(i)

    tree, report = repair(
        heads,
        [lab.deprel for lab in labels],
        [lab.incoming == ROOT for lab in labels],
    )
    report["empty_pop"] = empty_pops
    return tree, report


_DEPRELS = ("nsubj", "obj", "obl", "nmod", "amod")


def random_projective_tree(n: int, rng) -> DepTree:
    """Random projective tree by recursive interval splitting.

    The remainder on each side of a head is partitioned into contiguous
    chunks, each contributing one direct dependent, so arcs nest and never
    cross.
    """
    if n < 1:
        raise TreeError(f"need n >= 1, got {n}")
    heads = [0] * n
    deprels = [str(rng.choice(_DEPRELS)) for _ in range(n)]

    def forest(lo: int, hi: int, parent: int) -> None:
        pos = lo
        while pos <= hi:
            end = int(rng.integers(pos, hi + 1))
            m = int(rng.integers(pos, end + 1))
            heads[m - 1] = parent
            forest(pos, m - 1, m)
            forest(m + 1, end, m)
            pos = end + 1

    root = int(rng.integers(1, n + 1))
    heads[root - 1] = 0
    deprels[root - 1] = "root"
    forest(1, root - 1, root)
    forest(root + 1, n, root)
    return DepTree(heads=heads, deprels=deprels).validate()


def sentence_to_tree(heads: list[int], deprels: list[str]) -> DepTree:
    return DepTree(heads=list(heads), deprels=list(deprels)).validate()


def write_label_tsv(sentences, path: str) -> None:
    """'word<TAB>label' lines, blank line between sentences."""
    with open(path, "w", encoding="utf-8") as f:
        for words, labels in sentences:
            if len(words) != len(labels):
                raise TreeError(f"{len(labels)} labels for {len(words)} words")
            for word, label in zip(words, labels):
                f.write(f"{word}\t{label}\n")
            f.write("\n")


def read_label_tsv(path: str) -> list[tuple[list[str], list[str]]]:
    """Inverse of write_label_tsv; labels are validated against the grammar."""
    sentences = []
    words: list[str] = []
    labels: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.strip() == "":
                if words:
                    sentences.append((words, labels))
                    words, labels = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TreeError(f"line {lineno}: expected 'word<TAB>label', got {line!r}")
            try:
                parse_label(parts[1])
            except TreeError as e:
                raise TreeError(f"line {lineno}: {e}") from None
            words.append(parts[0])
            labels.append(parts[1])
    if words:
        sentences.append((words, labels))
    return sentences
