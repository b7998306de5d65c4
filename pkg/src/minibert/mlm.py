"""Masked-language-model batch construction.

Token streams are packed into fixed-length rows (CLS + content + SEP, PAD
tail), then corrupted: each non-special position is independently selected
with probability ``select_rate``; selected positions become MASK, a random
vocabulary id, or stay unchanged, in the configured proportions.  Masking is
deterministic per (seed, row) so rows can be processed in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import Vocab


@dataclass(frozen=True)
class MaskingPolicy:
    select_rate: float = 0.15
    mask_rate: float = 0.80
    random_rate: float = 0.10
    keep_rate: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.select_rate <= 1.0:
            raise ValueError(f"select_rate {self.select_rate} outside [0, 1]")
        total = self.mask_rate + self.random_rate + self.keep_rate
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mask/random/keep rates sum to {total}, expected 1.0")


@dataclass(frozen=True)
class MaskedBatch:
    input_ids: np.ndarray  # [batch, seq] int32, corrupted
    target_ids: np.ndarray  # [batch, seq] int32, pre-corruption
    loss_mask: np.ndarray  # [batch, seq] bool, true at selected positions
    attention_mask: np.ndarray  # [batch, seq] bool, true at non-PAD


def pack_sequences(token_streams, seq_len: int, break_documents: bool = False) -> list[np.ndarray]:
    """Chop concatenated piece ids into rows of exactly ``seq_len``.

    Each row is CLS + up to ``seq_len - 2`` content ids + SEP; the final
    partial row is padded with PAD.  With ``break_documents`` every stream
    starts a fresh row instead of continuing the previous one.
    """
    if seq_len < 8:
        raise ValueError(f"seq_len must be >= 8, got {seq_len}")
    pad_id, cls_id, sep_id = Vocab.pad_id, Vocab.cls_id, Vocab.sep_id
    capacity = seq_len - 2

    rows: list[np.ndarray] = []

    def emit(content: list[int]) -> None:
        row = np.full(seq_len, pad_id, dtype=np.int32)
        row[0] = cls_id
        row[1 : 1 + len(content)] = content
        row[1 + len(content)] = sep_id
        rows.append(row)

    buffer: list[int] = []
    for stream in token_streams:
        for piece_id in stream:
            buffer.append(int(piece_id))
            if len(buffer) == capacity:
                emit(buffer)
                buffer = []
        if break_documents and buffer:
            emit(buffer)
            buffer = []
    if buffer:
        emit(buffer)
    return rows


def mask_batch(rows, vocab: Vocab, policy: MaskingPolicy, rng_seed) -> MaskedBatch:
    """Corrupt a batch of packed rows per the masking policy.

    ``rng_seed`` may be an int or a sequence of ints; row ``i`` always draws
    from ``default_rng([*rng_seed, i])``, so results do not depend on how
    rows are scheduled.
    """
    if len(rows) == 0:
        raise ValueError("empty batch")
    if vocab.size <= vocab.mask_id or vocab.pieces[vocab.mask_id] != "[MASK]":
        raise ValueError("vocab has no MASK token at id 4")

    target = np.stack([np.asarray(r, dtype=np.int32) for r in rows])
    input_ids = target.copy()
    attention = target != vocab.pad_id
    eligible = attention & (target != vocab.cls_id) & (target != vocab.sep_id)

    seed_prefix = list(rng_seed) if isinstance(rng_seed, (list, tuple)) else [int(rng_seed)]
    n_rows, seq_len = target.shape
    loss_mask = np.zeros_like(eligible)
    n_normal = vocab.size - len(vocab.special_ids)
    if n_normal <= 0:
        raise ValueError("vocab has no non-special pieces to sample replacements from")

    for i in range(n_rows):
        rng = np.random.default_rng(seed_prefix + [i])
        select = (rng.random(seq_len) < policy.select_rate) & eligible[i]
        action = rng.random(seq_len)
        replacement = rng.integers(0, n_normal, size=seq_len) + len(vocab.special_ids)
        to_mask = select & (action < policy.mask_rate)
        to_random = select & (action >= policy.mask_rate) & (
            action < policy.mask_rate + policy.random_rate
        )
        input_ids[i, to_mask] = vocab.mask_id
        input_ids[i, to_random] = replacement[to_random].astype(np.int32)
        loss_mask[i] = select

    return MaskedBatch(
        input_ids=input_ids, target_ids=target, loss_mask=loss_mask, attention_mask=attention
    )
