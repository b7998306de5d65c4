"""Fine-tune a pre-trained checkpoint for token classification.

A deterministic word -> tag map makes the task fully learnable: the softmax
head reads each word's first sub-word representation, the loss is summed
cross-entropy over words, and gradients flow through the whole encoder.
"""

import numpy as np

from minibert.corpus import Document, DocumentSet, SplitSpec, split_corpus
from minibert.mlm import MaskingPolicy
from minibert.model import (
    LabelSet,
    ModelConfig,
    OptimizerConfig,
    Phase,
    finetune,
    predict_labels,
    pretrain,
)
from minibert.tokenizer import train_vocab

rng = np.random.default_rng(3)
TYPES = [f"{c}{i}" for c in "abcd" for i in range(10)]
TAG = {w: f"T{i % 5}" for i, w in enumerate(TYPES)}


def sentences(n):
    out = []
    for _ in range(n):
        w = int(rng.integers(len(TYPES)))
        words = []
        for _ in range(10):
            words.append(TYPES[w])
            w = (w + 1) % len(TYPES) if rng.random() < 0.9 else int(rng.integers(len(TYPES)))
        out.append((words, [TAG[x] for x in words]))
    return out


corpus = DocumentSet(
    (Document("d#0", "\n".join(" ".join(w) for w, _ in sentences(400)), (1, 400)),)
)
vocab = train_vocab(corpus, target_size=90, min_frequency=1)
train_docs, dev_docs = split_corpus(corpus, SplitSpec(0.9)) if len(corpus) > 1 else (corpus, corpus)

config = ModelConfig(n_layers=2, hidden=32, n_heads=4, ffn_size=128,
                     vocab_size=vocab.size, max_positions=32, dropout=0.1)
base, _ = pretrain(
    train_docs, dev_docs, vocab, config,
    OptimizerConfig(learning_rate=1e-3, total_steps=150),
    MaskingPolicy(), [Phase(32, 16, 150)], seed=1, eval_interval=75,
)

train_pairs = sentences(150)
dev_pairs = sentences(30)
labels = LabelSet.from_data("upos", (tags for _w, tags in train_pairs))
tuned, history = finetune(
    base, vocab, train_pairs, dev_pairs, labels,
    OptimizerConfig(learning_rate=2e-3, weight_decay=0.0, total_steps=10**6),
    seed=2, max_epochs=6, patience=2,
)

print("epoch  train_loss  dev_accuracy")
for epoch, loss, acc in history:
    print(f"{epoch:5d}  {loss:10.3f}  {acc:12.4f}")

words = ["a0", "a1", "a2", "c7", "d9"]
print("\npredictions:", list(zip(words, predict_labels(tuned, vocab, words))))
print("gold:       ", [(w, TAG[w]) for w in words])
