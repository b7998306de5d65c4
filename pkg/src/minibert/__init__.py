"""Desk-scale BERT pipeline in numpy.

Sub-word vocabulary training, masked-language-model pre-training of a small
transformer encoder with hand-written backprop, fine-tuning for token-level
tasks (POS, NER, dependency parsing as bracket-label sequence labeling),
metrics, and randomized significance tests.
"""

from . import corpus, evaluation, mlm, model, stats, tokenizer, treecodec

__version__ = "0.1.0"

__all__ = [
    "corpus",
    "evaluation",
    "mlm",
    "model",
    "stats",
    "tokenizer",
    "treecodec",
    "__version__",
]
