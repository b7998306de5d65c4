"""Shared synthetic data builders for the test suite.

The pretraining corpus is a ring-Markov word process: each word is followed
by its ring successor with probability 0.9, otherwise by a uniform random
word.  Masked tokens are therefore predictable from context and perplexity
drops fast, which is what the training smoke checks rely on.
"""

import numpy as np

from minibert.corpus import Document, DocumentSet
from minibert.tokenizer import SPECIAL_TOKENS, Vocab

WORD_TYPES = [f"{c}{i}" for c in "abcd" for i in range(10)]
# deterministic word -> tag map for the toy tagging task (5 labels)
TOY_TAGS = {w: f"T{i % 5}" for i, w in enumerate(WORD_TYPES)}


def synthetic_documents(n_tokens: int, seed: int, sent_len: int = 12,
                        doc_sentences: int = 40) -> DocumentSet:
    rng = np.random.default_rng(seed)
    n_types = len(WORD_TYPES)
    docs = []
    produced = 0
    doc_lines = []
    while produced < n_tokens:
        word = int(rng.integers(n_types))
        sent = []
        for _ in range(sent_len):
            sent.append(WORD_TYPES[word])
            if rng.random() < 0.9:
                word = (word + 1) % n_types
            else:
                word = int(rng.integers(n_types))
        doc_lines.append(" ".join(sent))
        produced += sent_len
        if len(doc_lines) == doc_sentences:
            docs.append(Document(f"synth#{len(docs)}", "\n".join(doc_lines), (1, len(doc_lines))))
            doc_lines = []
    if doc_lines:
        docs.append(Document(f"synth#{len(docs)}", "\n".join(doc_lines), (1, len(doc_lines))))
    return DocumentSet(tuple(docs))


def toy_tagging_sentences(n_sentences: int, seed: int, sent_len: int = 10):
    """(words, tags) pairs with a deterministic word -> tag mapping."""
    rng = np.random.default_rng(seed)
    n_types = len(WORD_TYPES)
    pairs = []
    for _ in range(n_sentences):
        word = int(rng.integers(n_types))
        words = []
        for _ in range(sent_len):
            words.append(WORD_TYPES[word])
            if rng.random() < 0.9:
                word = (word + 1) % n_types
            else:
                word = int(rng.integers(n_types))
        pairs.append((words, [TOY_TAGS[w] for w in words]))
    return pairs


def vocab_from_pieces(*pieces: str) -> Vocab:
    """Hand-built vocab: specials first, then the given pieces."""
    return Vocab(SPECIAL_TOKENS + tuple(pieces))
