"""Cased sub-word vocabulary training and "##"-style segmentation.

Training grows the vocabulary by pair-merge induction: starting from single
characters, repeatedly merge the adjacent piece pair that maximizes
``pair_freq / (freq(left) * freq(right))``, ties broken lexicographically.
Segmentation is greedy longest-match-first, with whole-word UNK fallback.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass

from .corpus import DocumentSet

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
# Words longer than this segment to UNK (guards quadratic matching).
MAX_WORD_CHARS = 100

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to fingerprint vocabulary files."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class VocabError(Exception):
    pass


@dataclass(frozen=True)
class Vocab:
    pieces: tuple[str, ...]

    def __post_init__(self):
        if self.pieces[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise VocabError(f"ids 0..4 must be {SPECIAL_TOKENS}")
        if len(set(self.pieces)) != len(self.pieces):
            seen, dup = set(), None
            for p in self.pieces:
                if p in seen:
                    dup = p
                    break
                seen.add(p)
            raise VocabError(f"duplicate piece {dup!r}")
        object.__setattr__(self, "_ids", {p: i for i, p in enumerate(self.pieces)})

    @property
    def size(self) -> int:
        return len(self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    pad_id, unk_id, cls_id, sep_id, mask_id = 0, 1, 2, 3, 4

    @property
    def special_ids(self) -> tuple[int, ...]:
        return (0, 1, 2, 3, 4)

    def id_of(self, piece: str) -> int | None:
        return self._ids.get(piece)

    def __contains__(self, piece: str) -> bool:
        return piece in self._ids

    def is_continuation(self, piece_id: int) -> bool:
        return self.pieces[piece_id].startswith("##")

    def to_bytes(self) -> bytes:
        """The canonical vocab file serialization: one piece per line."""
        return ("\n".join(self.pieces) + "\n").encode("utf-8")

    def fingerprint(self) -> int:
        return fnv1a64(self.to_bytes())


def save_vocab(vocab: Vocab, path: str) -> None:
    with open(path, "wb") as f:
        f.write(vocab.to_bytes())


def load_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as f:
        pieces = [line.rstrip("\n") for line in f]
    while pieces and pieces[-1] == "":
        pieces.pop()
    return Vocab(tuple(pieces))


def _word_counts(corpus: DocumentSet) -> Counter:
    counts: Counter = Counter()
    for doc in corpus:
        for word in doc.text.split():
            counts[unicodedata.normalize("NFC", word)] += 1
    return counts


def _merge_string(left: str, right: str) -> str:
    return left + (right[2:] if right.startswith("##") else right)


def train_vocab(corpus: DocumentSet, target_size: int = 30000, min_frequency: int = 2) -> Vocab:
    """Train a cased sub-word vocabulary of exactly ``target_size`` pieces.

    Every observed character enters the alphabet in both word-initial and
    "##" continuation form.  If merges exhaust before the target is reached,
    the vocabulary is padded first with the highest-scoring rejected merge
    candidates, then with [UNUSEDi] fillers, so downstream tensor shapes are
    stable.
    """
    word_counts = _word_counts(corpus)
    if not word_counts:
        raise VocabError("empty corpus")

    chars = sorted({c for w in word_counts for c in w})
    alphabet = [c for c in chars] + [f"##{c}" for c in chars]
    minimum = len(SPECIAL_TOKENS) + len(alphabet)
    if target_size < minimum:
        raise VocabError(
            f"target_size {target_size} below required minimum {minimum} "
            f"(5 specials + {len(alphabet)} alphabet pieces)"
        )

    pieces: list[str] = list(SPECIAL_TOKENS) + alphabet
    known = set(pieces)
    # word type -> (piece sequence, frequency)
    segs: dict[str, list[str]] = {
        w: [w[0]] + [f"##{c}" for c in w[1:]] for w in word_counts
    }

    def pair_and_piece_counts():
        pair_counts: Counter = Counter()
        piece_counts: Counter = Counter()
        for w, seq in segs.items():
            freq = word_counts[w]
            for piece in seq:
                piece_counts[piece] += freq
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += freq
        return pair_counts, piece_counts

    def apply_merge(pair: tuple[str, str], merged: str) -> None:
        left, right = pair
        for w, seq in segs.items():
            if len(seq) < 2:
                continue
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            segs[w] = out

    while len(pieces) < target_size:
        pair_counts, piece_counts = pair_and_piece_counts()
        candidates = [(p, c) for p, c in pair_counts.items() if c >= min_frequency]
        if not candidates:
            break
        best_pair, _ = min(
            candidates,
            key=lambda pc: (-pc[1] / (piece_counts[pc[0][0]] * piece_counts[pc[0][1]]), pc[0]),
        )
        merged = _merge_string(*best_pair)
        apply_merge(best_pair, merged)
        if merged not in known:
            pieces.append(merged)
            known.add(merged)

    if len(pieces) < target_size:
        # pad with the best-scoring rejected pairs (below min_frequency)
        pair_counts, piece_counts = pair_and_piece_counts()
        rejected = sorted(
            pair_counts.items(),
            key=lambda pc: (-pc[1] / (piece_counts[pc[0][0]] * piece_counts[pc[0][1]]), pc[0]),
        )
        for pair, _ in rejected:
            if len(pieces) >= target_size:
                break
            merged = _merge_string(*pair)
            if merged not in known:
                pieces.append(merged)
                known.add(merged)
        i = 0
        while len(pieces) < target_size:
            filler = f"[UNUSED{i}]"
            if filler not in known:
                pieces.append(filler)
                known.add(filler)
            i += 1

    return Vocab(tuple(pieces))


def encode_word(vocab: Vocab, word: str) -> list[str]:
    """Greedy longest-match-first segmentation; whole word falls back to UNK."""
    word = unicodedata.normalize("NFC", word)
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    out: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        out.append(piece)
        start = end
    return out


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    word_start: tuple[bool, ...]
    source_words: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.word_start):
            raise VocabError("ids and word_start lengths differ")


def encode_sentence(vocab: Vocab, words: list[str], add_specials: bool = False) -> TokenSequence:
    ids: list[int] = []
    starts: list[bool] = []
    if add_specials:
        ids.append(vocab.cls_id)
        starts.append(False)
    for word in words:
        pieces = encode_word(vocab, word)
        for j, piece in enumerate(pieces):
            ids.append(vocab.id_of(piece))
            starts.append(j == 0)
    if add_specials:
        ids.append(vocab.sep_id)
        starts.append(False)
    return TokenSequence(tuple(ids), tuple(starts), tuple(words))


def decode(vocab: Vocab, ids) -> str:
    """Join pieces back into text: specials dropped, "##" glued to the left."""
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise VocabError(f"id {i} out of range for vocab of size {vocab.size}")
        piece = vocab.pieces[i]
        if i in vocab.special_ids:
            continue
        if piece.startswith("##"):
            if words:
                words[-1] += piece[2:]
            else:
                words.append(piece[2:])
        else:
            words.append(piece)
    return " ".join(words)
