"""Raw-text corpora, annotated datasets and deterministic train/dev splits.

Raw corpora are UTF-8 text files with one blank-line-separated block per
document.  Annotated data comes in as 10-column CoNLL-U or two-column BIO
files and is normalized into :class:`AnnotatedSentence` records.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

NER_CLASSES = ("PER", "LOC", "ORG", "MISC")
NER_TAGS = ("O",) + tuple(f"{b}-{c}" for c in NER_CLASSES for b in ("B", "I"))


class CorpusError(Exception):
    """Malformed input file or unusable corpus."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    # 1-based (first_line, last_line) of the block in its source file
    span: tuple[int, int]

    def words(self) -> list[str]:
        """Whitespace tokens, line by line (newline = sentence boundary)."""
        return self.text.split()


@dataclass(frozen=True)
class DocumentSet:
    documents: tuple[Document, ...]

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, i):
        return self.documents[i]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.95
    unit: str = "document"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        if self.unit not in ("document", "file"):
            raise ValueError(f"unknown split unit {self.unit!r}")


@dataclass
class AnnotatedSentence:
    """One sentence with optional annotation layers, all word-aligned.

    ``heads`` uses 0 for the artificial root and 1-based word indices
    otherwise.  ``extras`` keeps CoNLL-U lines skipped for labeling
    (multiword-token ranges, empty nodes) as (insert_after_word_index,
    raw_line) pairs so files round-trip.
    """

    words: list[str]
    upos: list[str] | None = None
    fpos: list[str] | None = None
    heads: list[int] | None = None
    deprels: list[str] | None = None
    ner: list[str] | None = None
    extras: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.words)

    def validate(self) -> "AnnotatedSentence":
        n = len(self.words)
        for name in ("upos", "fpos", "deprels", "ner"):
            layer = getattr(self, name)
            if layer is not None and len(layer) != n:
                raise CorpusError(f"layer {name} has {len(layer)} entries for {n} words")
        if self.heads is not None:
            if len(self.heads) != n:
                raise CorpusError(f"layer heads has {len(self.heads)} entries for {n} words")
            roots = 0
            for i, h in enumerate(self.heads):
                if not 0 <= h <= n:
                    raise CorpusError(f"head {h} of word {i + 1} outside [0, {n}]")
                if h == i + 1:
                    raise CorpusError(f"word {i + 1} is its own head")
                roots += h == 0
            if roots != 1:
                raise CorpusError(f"expected exactly one root, found {roots}")
        return self


def _decode_file(path: str) -> str:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: invalid UTF-8 at byte offset {e.start}") from e


def _split_blocks(text: str) -> list[tuple[str, int, int]]:
    """Blank-line-separated blocks as (text, first_line, last_line), 1-based."""
    blocks = []
    current: list[str] = []
    start = 0
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip() == "":
            if current:
                blocks.append(("\n".join(current), start, lineno - 1))
                current = []
        else:
            if not current:
                start = lineno
            current.append(line)
    if current:
        blocks.append(("\n".join(current), start, start + len(current) - 1))
    return blocks


def load_raw_corpus(path: str) -> DocumentSet:
    """Load a raw-text corpus from a file or a directory tree.

    Files are visited in lexicographic order of their relative path;
    document order within a file is on-disk order.
    """
    if os.path.isdir(path):
        files = []
        for root, _dirs, names in os.walk(path):
            for name in names:
                full = os.path.join(root, name)
                files.append((os.path.relpath(full, path), full))
        files.sort(key=lambda pair: pair[0])
    elif os.path.exists(path):
        files = [(os.path.basename(path), path)]
    else:
        raise CorpusError(f"no such file or directory: {path}")

    docs = []
    for rel, full in files:
        for k, (text, first, last) in enumerate(_split_blocks(_decode_file(full))):
            docs.append(Document(doc_id=f"{rel}#{k}", text=text, span=(first, last)))
    return DocumentSet(tuple(docs))


def split_corpus(docs: DocumentSet, spec: SplitSpec) -> tuple[DocumentSet, DocumentSet]:
    """Prefix split: train takes the first ceil(fraction*N) documents.

    The dev side is clamped to be non-empty, so tiny corpora still yield a
    usable split.
    """
    n = len(docs)
    if n < 2:
        raise CorpusError(f"need at least 2 documents to split, got {n}")
    # ceil, with a nudge so fractions like 0.95*100 do not overshoot in float
    n_train = math.ceil(n * spec.train_fraction - 1e-9)
    n_train = min(max(n_train, 1), n - 1)
    return DocumentSet(docs.documents[:n_train]), DocumentSet(docs.documents[n_train:])


def write_split_manifest(
    train: DocumentSet, dev: DocumentSet, spec: SplitSpec, path: str
) -> None:
    """Record the split boundary: one '<part>\\t<doc_id>' line per document."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# train_fraction={spec.train_fraction} unit={spec.unit}\n")
        for doc in train:
            f.write(f"train\t{doc.doc_id}\n")
        for doc in dev:
            f.write(f"dev\t{doc.doc_id}\n")


def write_raw_corpus(docs: DocumentSet, path: str) -> None:
    """Write documents as blank-line-separated blocks (one file)."""
    with open(path, "w", encoding="utf-8") as f:
        for i, doc in enumerate(docs):
            if i:
                f.write("\n")
            f.write(doc.text + "\n")


def _parse_head(value: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise CorpusError(f"line {lineno}: non-integer head {value!r}") from None


def read_conllu(path: str) -> list[AnnotatedSentence]:
    """Read 10-column CoNLL-U; fills words, upos, fpos (XPOS), heads, deprels.

    Multiword-token ranges ("1-2") and empty nodes ("1.1") are excluded from
    the annotation layers but kept in ``extras`` for round-trip writing.
    Comment lines are dropped.
    """
    sentences = []
    rows: list[tuple] = []
    extras: list[tuple[int, str]] = []

    def flush():
        nonlocal rows, extras
        if not rows:
            extras = []
            return
        words = [r[0] for r in rows]
        upos = [r[1] for r in rows]
        fpos = [r[2] for r in rows]
        heads = [r[3] for r in rows]
        deprels = [r[4] for r in rows]
        sent = AnnotatedSentence(
            words=words,
            upos=None if all(u == "_" for u in upos) else upos,
            fpos=None if all(x == "_" for x in fpos) else fpos,
            heads=None if all(h is None for h in heads) else heads,
            deprels=None if all(d == "_" for d in deprels) else deprels,
            extras=extras,
        )
        if sent.heads is not None and any(h is None for h in sent.heads):
            raise CorpusError(f"sentence ending near line {lineno}: partially missing heads")
        sentences.append(sent.validate())
        rows = []
        extras = []

    with open(path, encoding="utf-8") as f:
        lineno = 0
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line == "":
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise CorpusError(f"line {lineno}: expected 10 columns, found {len(cols)}")
            tok_id = cols[0]
            if "-" in tok_id or "." in tok_id:
                extras.append((len(rows), line))
                continue
            head = None if cols[6] == "_" else _parse_head(cols[6], lineno)
            rows.append((cols[1], cols[3], cols[4], head, cols[7]))
    flush()
    return sentences


def write_conllu(sentences: list[AnnotatedSentence], path: str) -> None:
    """Inverse of :func:`read_conllu` on the supported subset."""
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            extra_at: dict[int, list[str]] = {}
            for pos, raw in sent.extras:
                extra_at.setdefault(pos, []).append(raw)
            for i, word in enumerate(sent.words):
                for raw in extra_at.get(i, ()):
                    f.write(raw + "\n")
                upos = sent.upos[i] if sent.upos else "_"
                fpos = sent.fpos[i] if sent.fpos else "_"
                head = str(sent.heads[i]) if sent.heads is not None else "_"
                deprel = sent.deprels[i] if sent.deprels else "_"
                f.write(
                    f"{i + 1}\t{word}\t_\t{upos}\t{fpos}\t_\t{head}\t{deprel}\t_\t_\n"
                )
            for raw in extra_at.get(len(sent.words), ()):
                f.write(raw + "\n")
            f.write("\n")


def read_bio(path: str) -> list[AnnotatedSentence]:
    """Read two-column 'token TAG' NER data with the 9-tag BIO scheme."""
    admissible = set(NER_TAGS)
    sentences = []
    words: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.strip() == "":
                if words:
                    sentences.append(AnnotatedSentence(words=words, ner=tags).validate())
                    words, tags = [], []
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusError(f"line {lineno}: expected 'token TAG', got {line!r}")
            token, tag = parts
            if tag not in admissible:
                raise CorpusError(f"line {lineno}: unknown BIO tag {tag!r}")
            words.append(token)
            tags.append(tag)
    if words:
        sentences.append(AnnotatedSentence(words=words, ner=tags).validate())
    return sentences


def write_bio(sentences: list[AnnotatedSentence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            if sent.ner is None:
                raise CorpusError("sentence without a ner layer")
            for word, tag in zip(sent.words, sent.ner):
                f.write(f"{word}\t{tag}\n")
            f.write("\n")


def read_tagged_tsv(path: str, layer: str = "upos") -> list[AnnotatedSentence]:
    """Two-column 'token TAG' files with an open tag inventory (POS data)."""
    if layer not in ("upos", "fpos"):
        raise CorpusError(f"unsupported tag layer {layer!r}")
    sentences = []
    words: list[str] = []
    tags: list[str] = []

    def flush():
        nonlocal words, tags
        if words:
            sentences.append(AnnotatedSentence(words=words, **{layer: tags}))
            words, tags = [], []

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.strip() == "":
                flush()
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                raise CorpusError(f"line {lineno}: expected 'token TAG', got {line!r}")
            words.append(parts[0])
            tags.append(parts[1])
    flush()
    return sentences


def write_tagged_tsv(sentences: list[AnnotatedSentence], tags_attr: str, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            tags = getattr(sent, tags_attr)
            if tags is None:
                raise CorpusError(f"sentence without a {tags_attr} layer")
            for word, tag in zip(sent.words, tags):
                f.write(f"{word}\t{tag}\n")
            f.write("\n")
