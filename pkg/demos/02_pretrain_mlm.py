"""Pre-train a miniature encoder on the masked-language objective.

A patterned synthetic corpus stands in for real text: each word mostly
determines its successor, so masked positions are predictable from context
and dev perplexity falls quickly.  Takes about half a minute on a laptop.
"""

import numpy as np

from minibert.corpus import Document, DocumentSet, SplitSpec, split_corpus
from minibert.mlm import MaskingPolicy
from minibert.model import ModelConfig, OptimizerConfig, Phase, pretrain
from minibert.tokenizer import train_vocab


def patterned_corpus(n_tokens=8000, seed=0):
    rng = np.random.default_rng(seed)
    types = [f"{c}{i}" for c in "abcd" for i in range(10)]
    docs, lines = [], []
    made = 0
    while made < n_tokens:
        w = int(rng.integers(len(types)))
        sent = []
        for _ in range(12):
            sent.append(types[w])
            w = (w + 1) % len(types) if rng.random() < 0.9 else int(rng.integers(len(types)))
        lines.append(" ".join(sent))
        made += 12
        if len(lines) == 30:
            docs.append(Document(f"doc#{len(docs)}", "\n".join(lines), (1, 30)))
            lines = []
    if lines:
        docs.append(Document(f"doc#{len(docs)}", "\n".join(lines), (1, len(lines))))
    return DocumentSet(tuple(docs))


corpus = patterned_corpus()
vocab = train_vocab(corpus, target_size=90, min_frequency=1)
train_docs, dev_docs = split_corpus(corpus, SplitSpec(0.9))

config = ModelConfig(
    n_layers=2, hidden=32, n_heads=4, ffn_size=128,
    vocab_size=vocab.size, max_positions=32, dropout=0.1,
)
checkpoint, metrics = pretrain(
    train_docs, dev_docs, vocab, config,
    OptimizerConfig(learning_rate=1e-3, total_steps=400),
    MaskingPolicy(),            # 15% selected; 80/10/10 mask/random/keep
    [Phase(32, 16, 400)],
    seed=7,
    eval_interval=50,
)

print("step  dev_loss  dev_perplexity")
for step, _phase, _lr, _train, dev_loss, dev_ppl in metrics:
    print(f"{step:4d}  {dev_loss:8.4f}  {dev_ppl:10.2f}")
print(f"\nperplexity dropped {metrics[0][5] / metrics[-1][5]:.1f}x in {checkpoint.step} steps")
