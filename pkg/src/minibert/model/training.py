"""Pre-training and fine-tuning loops.

All randomness is derived functionally from (seed, purpose, step), never
from mutable generator state, so a run resumed from a checkpoint replays
the exact arithmetic of an uninterrupted one.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..corpus import AnnotatedSentence, DocumentSet
from ..mlm import MaskedBatch, MaskingPolicy, mask_batch, pack_sequences
from ..tokenizer import Vocab, encode_sentence, encode_word
from .checkpoint import ModelCheckpoint
from .labels import LabelSet
from .network import (
    ModelConfig,
    ModelError,
    TokenClassBatch,
    classify_logits,
    encode,
    init_classifier,
    init_model,
    loss_and_grads,
    mlm_logits,
    mlm_loss,
)
from .optim import OptimizerConfig, adam_step, init_opt_state, lr_at

# salts keeping the functional RNG streams apart
_ORDER, _MASK, _DROP, _DEVMASK, _HEAD = 101, 202, 303, 404, 505

METRICS_COLUMNS = ("step", "phase", "lr", "train_loss", "dev_loss", "dev_perplexity")


@dataclass(frozen=True)
class Phase:
    seq_len: int
    batch_size: int
    steps: int

    def __post_init__(self):
        if self.seq_len < 8 or self.batch_size < 1 or self.steps < 0:
            raise ValueError(f"invalid phase {self}")


def piece_streams(docs: DocumentSet, vocab: Vocab) -> list[list[int]]:
    """Per-document sub-word id streams (newline = sentence boundary)."""
    memo: dict[str, list[int]] = {}
    streams = []
    for doc in docs:
        ids: list[int] = []
        for line in doc.text.split("\n"):
            for word in line.split():
                got = memo.get(word)
                if got is None:
                    got = memo[word] = [vocab.id_of(p) for p in encode_word(vocab, word)]
                ids.extend(got)
        streams.append(ids)
    return streams


def _fmt(x) -> str:
    return "nan" if x is None else repr(float(x))


class MetricsLog:
    """CSV metrics log; also keeps rows in memory."""

    def __init__(self, path: str | None, threads: int):
        self.rows: list[tuple] = []
        self._fh = open(path, "w", encoding="utf-8") if path else None
        if self._fh:
            self._fh.write(f"# threads={threads}\n")
            self._fh.write(",".join(METRICS_COLUMNS) + "\n")

    def add(self, step, phase, lr, train_loss, dev_loss, dev_ppl):
        row = (step, phase, lr, train_loss, dev_loss, dev_ppl)
        self.rows.append(row)
        if self._fh:
            self._fh.write(
                f"{step},{phase},{_fmt(lr)},{_fmt(train_loss)},{_fmt(dev_loss)},{_fmt(dev_ppl)}\n"
            )
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _thread_count() -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        if os.environ.get(var):
            try:
                return int(os.environ[var])
            except ValueError:
                pass
    return os.cpu_count() or 1


def _mask_nonempty(rows, vocab, policy, seed_parts):
    """Mask a batch, re-salting in the rare case nothing got selected."""
    for retry in range(64):
        batch = mask_batch(rows, vocab, policy, seed_parts + [retry])
        if batch.loss_mask.any():
            return batch
    raise ModelError("could not draw a non-empty masking in 64 tries")


def _dev_eval(params, cfg, dev_batches):
    """Pooled NLL over fixed pre-masked dev batches -> (loss, perplexity)."""
    total_nll = 0.0
    total_sel = 0
    for batch in dev_batches:
        h, _ = encode(params, cfg, batch.input_ids, batch.attention_mask)
        logits = mlm_logits(params, h)
        loss, _ = mlm_loss(logits, batch.target_ids, batch.loss_mask)
        n = int(batch.loss_mask.sum())
        total_nll += loss * n
        total_sel += n
    loss = total_nll / total_sel
    return loss, math.exp(loss)


def pretrain(
    train_docs: DocumentSet,
    dev_docs: DocumentSet,
    vocab: Vocab,
    model_cfg: ModelConfig,
    opt_cfg: OptimizerConfig,
    policy: MaskingPolicy,
    phase_plan: list[Phase],
    seed: int,
    *,
    out_dir: str | None = None,
    eval_interval: int = 100,
    checkpoint_interval: int = 0,
    eval_rows: int = 64,
    eval_batch_size: int = 16,
    break_documents: bool = False,
    resume: ModelCheckpoint | None = None,
):
    """Run the masked-language-model phases; returns (checkpoint, metrics rows).

    Dev perplexity is logged at step 0, every ``eval_interval`` steps and at
    the end, always on the same fixed masking of the dev rows, so the curve
    is comparable across steps and identical across reruns.
    """
    if len(train_docs) == 0 or len(dev_docs) == 0:
        raise ValueError("need non-empty train and dev splits")
    phase_plan = [p if isinstance(p, Phase) else Phase(*p) for p in phase_plan]
    total_steps = sum(p.steps for p in phase_plan)

    if resume is not None:
        if resume.config != model_cfg:
            raise ModelError("resume checkpoint config differs from the requested config")
        seed = resume.seed
        params = {k: v.copy() for k, v in resume.params.items()}
        opt_state = {
            "m": {k: v.copy() for k, v in (resume.opt_m or {}).items()},
            "v": {k: v.copy() for k, v in (resume.opt_v or {}).items()},
        }
        if not opt_state["m"]:
            opt_state = init_opt_state(params)
        start_step = resume.step
    else:
        params = init_model(model_cfg, seed)
        opt_state = init_opt_state(params)
        start_step = 0

    train_streams = piece_streams(train_docs, vocab)
    dev_streams = piece_streams(dev_docs, vocab)

    # per-phase packed rows and fixed dev masking
    phase_rows = []
    phase_dev = []
    for pi, phase in enumerate(phase_plan):
        rows = pack_sequences(train_streams, phase.seq_len, break_documents)
        if not rows:
            raise ValueError(f"phase {pi + 1}: training corpus packs to zero rows")
        drows = pack_sequences(dev_streams, phase.seq_len, break_documents)[:eval_rows]
        if not drows:
            raise ValueError(f"phase {pi + 1}: dev corpus packs to zero rows")
        dev_batches = [
            _mask_nonempty(drows[i : i + eval_batch_size], vocab, policy, [seed, _DEVMASK, pi, i])
            for i in range(0, len(drows), eval_batch_size)
        ]
        phase_rows.append(rows)
        phase_dev.append(dev_batches)

    os.makedirs(out_dir, exist_ok=True) if out_dir else None
    log = MetricsLog(os.path.join(out_dir, "metrics.csv") if out_dir else None, _thread_count())

    def checkpoint(step: int) -> ModelCheckpoint:
        return ModelCheckpoint(
            config=model_cfg,
            params=params,
            step=step,
            seed=seed,
            vocab_fingerprint=vocab.fingerprint(),
            opt_m=opt_state["m"],
            opt_v=opt_state["v"],
        )

    def eval_and_log(step: int, phase_idx: int, train_loss: float):
        dev_loss, dev_ppl = _dev_eval(params, model_cfg, phase_dev[phase_idx])
        if not math.isfinite(dev_ppl):
            log.close()
            raise ModelError(f"dev perplexity is not finite at step {step}: {dev_ppl}")
        log.add(step, phase_idx + 1, lr_at(opt_cfg, step), train_loss, dev_loss, dev_ppl)

    # map a global step (1-based) to its phase and in-phase offset
    boundaries = []
    acc = 0
    for phase in phase_plan:
        boundaries.append((acc + 1, acc + phase.steps))
        acc += phase.steps

    try:
        if start_step == 0:
            eval_and_log(0, 0, None)  # no training loss yet
        window_losses: list[float] = []
        for step in range(start_step + 1, total_steps + 1):
            phase_idx = next(i for i, (lo, hi) in enumerate(boundaries) if lo <= step <= hi)
            phase = phase_plan[phase_idx]
            in_phase = step - boundaries[phase_idx][0]  # 0-based
            rows = phase_rows[phase_idx]
            steps_per_epoch = max(1, len(rows) // phase.batch_size)
            epoch, bidx = divmod(in_phase, steps_per_epoch)
            order = np.random.default_rng([seed, _ORDER, phase_idx, epoch]).permutation(len(rows))
            take = order[bidx * phase.batch_size : bidx * phase.batch_size + phase.batch_size]
            if take.size == 0:
                take = order[: phase.batch_size]
            batch_rows = [rows[j] for j in take]
            batch = _mask_nonempty(batch_rows, vocab, policy, [seed, _MASK, phase_idx, in_phase])
            drop_rng = np.random.default_rng([seed, _DROP, step])
            loss, _ppl, grads = loss_and_grads(
                params, model_cfg, batch, train=True, drop_rng=drop_rng
            )
            adam_step(params, grads, opt_state, opt_cfg, step)
            window_losses.append(loss)
            if step % eval_interval == 0 or step == total_steps:
                eval_and_log(step, phase_idx, float(np.mean(window_losses)))
                window_losses = []
            if out_dir and checkpoint_interval and step % checkpoint_interval == 0:
                from .checkpoint import save_checkpoint

                save_checkpoint(checkpoint(step), os.path.join(out_dir, f"step{step}.ckpt"))
        if not log.rows:
            # resumed at (or past) the end of the plan: still record one eval
            eval_and_log(min(start_step, total_steps), len(phase_plan) - 1, None)
    finally:
        log.close()

    final = checkpoint(total_steps)
    if out_dir:
        from .checkpoint import save_checkpoint

        save_checkpoint(final, os.path.join(out_dir, "final.ckpt"))
    return final, log.rows


def labels_for(sentence: AnnotatedSentence, kind: str) -> list[str] | None:
    """The gold label sequence of a sentence for a task, None if unusable."""
    if kind == "upos":
        return sentence.upos
    if kind == "fpos":
        return sentence.fpos
    if kind == "ner":
        return sentence.ner
    if kind == "dep-bracket":
        from ..treecodec import DepTree, TreeError, encode_tree, format_label

        if sentence.heads is None or sentence.deprels is None:
            return None
        tree = DepTree(heads=list(sentence.heads), deprels=list(sentence.deprels))
        try:
            return [format_label(lab) for lab in encode_tree(tree)]
        except TreeError:
            return None
    raise ValueError(f"unknown task kind {kind!r}")


def prepare_task_data(sentences, kind: str):
    """(words, labels) pairs for a task; skips unusable sentences.

    For dep-bracket, non-projective trees cannot be encoded and are skipped;
    the skip count is returned so the caller can report it.
    """
    pairs = []
    skipped = 0
    for sent in sentences:
        labels = labels_for(sent, kind)
        if labels is None:
            skipped += 1
            continue
        pairs.append((list(sent.words), labels))
    return pairs, skipped


def _class_batches(pairs, vocab, label_set, max_positions, batch_size, order=None):
    """Encode (words, labels) pairs into padded TokenClassBatch groups."""
    encoded = []
    for si, (words, labels) in enumerate(pairs):
        seq = encode_sentence(vocab, words, add_specials=True)
        if len(seq.ids) > max_positions:
            raise ModelError(
                f"sentence {si} encodes to {len(seq.ids)} pieces, over max_positions"
                f" {max_positions}"
            )
        lab_ids = [label_set.id_of(lab) for lab in labels]
        encoded.append((seq, lab_ids))
    if order is None:
        order = range(len(encoded))
    batches = []
    order = list(order)
    for at in range(0, len(order), batch_size):
        group = [encoded[i] for i in order[at : at + batch_size]]
        width = max(len(seq.ids) for seq, _ in group)
        n = len(group)
        ids = np.zeros((n, width), dtype=np.int32)  # PAD id is 0
        attn = np.zeros((n, width), dtype=bool)
        starts = np.zeros((n, width), dtype=bool)
        labs = np.full((n, width), -1, dtype=np.int32)
        for r, (seq, lab_ids) in enumerate(group):
            k = len(seq.ids)
            ids[r, :k] = seq.ids
            attn[r, :k] = True
            starts[r, :k] = seq.word_start
            labs[r, np.flatnonzero(starts[r])] = lab_ids
        batches.append(TokenClassBatch(ids, attn, starts, labs))
    return batches


def _token_accuracy(params, cfg, batches) -> float:
    correct = 0
    total = 0
    for batch in batches:
        h, _ = encode(params, cfg, batch.input_ids, batch.attention_mask)
        pred = np.argmax(classify_logits(params, h), axis=-1)
        at = batch.word_start
        correct += int((pred[at] == batch.labels[at]).sum())
        total += int(at.sum())
    return correct / total if total else 0.0


def finetune(
    ckpt: ModelCheckpoint,
    vocab: Vocab,
    train_sentences,
    dev_sentences,
    label_set: LabelSet,
    opt_cfg: OptimizerConfig,
    seed: int,
    *,
    kind: str | None = None,
    batch_size: int = 16,
    max_epochs: int = 20,
    patience: int = 3,
    out_dir: str | None = None,
):
    """Train classifier head + full encoder; returns the best-dev checkpoint.

    ``train_sentences``/``dev_sentences`` are either AnnotatedSentences (then
    ``kind`` selects the layer, defaulting to the label set's) or prepared
    (words, labels) pairs.  Early stopping: training halts after ``patience``
    epochs without dev token-accuracy improvement.
    """
    kind = kind or label_set.kind
    if train_sentences and isinstance(train_sentences[0], AnnotatedSentence):
        train_pairs, _ = prepare_task_data(train_sentences, kind)
    else:
        train_pairs = train_sentences
    if dev_sentences and isinstance(dev_sentences[0], AnnotatedSentence):
        dev_pairs, _ = prepare_task_data(dev_sentences, kind)
    else:
        dev_pairs = dev_sentences
    if not train_pairs or not dev_pairs:
        raise ValueError("need non-empty train and dev data")
    label_set.check_known(lab for _w, labs in train_pairs + dev_pairs for lab in labs)

    cfg = ckpt.config
    params = {k: v.copy() for k, v in ckpt.params.items()}
    dtype = params["tok_emb"].dtype
    params["cls_w"], params["cls_b"] = init_classifier(
        cfg, len(label_set), [seed, _HEAD], dtype=dtype
    )
    opt_state = init_opt_state(params)
    dev_batches = _class_batches(dev_pairs, vocab, label_set, cfg.max_positions, batch_size)

    best_acc = -1.0
    best_params = None
    best_step = 0
    since_best = 0
    history = []
    step = 0
    for epoch in range(1, max_epochs + 1):
        order = np.random.default_rng([seed, _ORDER, epoch]).permutation(len(train_pairs))
        batches = _class_batches(
            train_pairs, vocab, label_set, cfg.max_positions, batch_size, order
        )
        losses = []
        for batch in batches:
            step += 1
            drop_rng = np.random.default_rng([seed, _DROP, step])
            loss, _aux, grads = loss_and_grads(params, cfg, batch, train=True, drop_rng=drop_rng)
            adam_step(params, grads, opt_state, opt_cfg, step)
            losses.append(loss)
        acc = _token_accuracy(params, cfg, dev_batches)
        history.append((epoch, float(np.mean(losses)), acc))
        if acc > best_acc:
            best_acc = acc
            best_params = {k: v.copy() for k, v in params.items()}
            best_step = step
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break

    tuned = ModelCheckpoint(
        config=cfg,
        params=best_params,
        step=best_step,
        seed=seed,
        vocab_fingerprint=vocab.fingerprint(),
        label_set=label_set,
        opt_m=opt_state["m"],
        opt_v=opt_state["v"],
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        from .checkpoint import save_checkpoint

        save_checkpoint(tuned, os.path.join(out_dir, "finetuned.ckpt"))
        with open(os.path.join(out_dir, "finetune_metrics.csv"), "w", encoding="utf-8") as f:
            f.write("epoch,train_loss,dev_accuracy\n")
            for epoch, loss, acc in history:
                f.write(f"{epoch},{_fmt(loss)},{_fmt(acc)}\n")
    return tuned, history


def predict_labels(ckpt: ModelCheckpoint, vocab: Vocab, words) -> list[str]:
    """One label per word: argmax at each word's first sub-word."""
    return predict_corpus(ckpt, vocab, [list(words)])[0]


def predict_corpus(ckpt: ModelCheckpoint, vocab: Vocab, sentences, batch_size: int = 32):
    """Label many sentences; ``sentences`` is a list of word lists."""
    if ckpt.label_set is None:
        raise ModelError("checkpoint has no label set; fine-tune before predicting")
    if vocab.fingerprint() != ckpt.vocab_fingerprint:
        raise ModelError("vocab fingerprint mismatch")
    cfg = ckpt.config
    out = []
    for at in range(0, len(sentences), batch_size):
        group = sentences[at : at + batch_size]
        pairs = [(list(words), ["?"] * len(words)) for words in group]
        dummy = LabelSet(kind=ckpt.label_set.kind, labels=("?",))
        batches = _class_batches(pairs, vocab, dummy, cfg.max_positions, len(group))
        batch = batches[0]
        h, _ = encode(ckpt.params, cfg, batch.input_ids, batch.attention_mask)
        pred = np.argmax(classify_logits(ckpt.params, h), axis=-1)
        for r, words in enumerate(group):
            starts = np.flatnonzero(batch.word_start[r])
            out.append([ckpt.label_set.labels[int(pred[r, s])] for s in starts])
    return out
