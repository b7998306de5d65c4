"""Transformer encoder with hand-written forward and backward passes.

Post-layer-norm BERT architecture: token + learned position embeddings, then
per layer multi-head scaled-dot-product self-attention (PAD keys score -inf)
with residual + LayerNorm, and a GELU feed-forward block with residual +
LayerNorm.  The MLM head ties its projection to the token embedding matrix;
the token-classification head is a single affine map per position.

Gradients are exact analytic derivatives of the losses with respect to every
parameter, validated against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf
from scipy.stats import truncnorm

from ..mlm import MaskedBatch

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ModelError(Exception):
    pass


class NonFiniteGradient(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    hidden: int
    n_heads: int
    ffn_size: int
    vocab_size: int
    max_positions: int
    dropout: float = 0.1
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden % self.n_heads != 0:
            raise ModelError(f"hidden {self.hidden} not divisible by n_heads {self.n_heads}")
        for name in ("n_layers", "hidden", "n_heads", "ffn_size", "vocab_size", "max_positions"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "n_heads": self.n_heads,
            "ffn_size": self.ffn_size,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
            "layer_norm_eps": self.layer_norm_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class TokenClassBatch:
    """Word-level labels aligned to the first sub-word of each word."""

    input_ids: np.ndarray  # [batch, seq] int32
    attention_mask: np.ndarray  # [batch, seq] bool
    word_start: np.ndarray  # [batch, seq] bool
    labels: np.ndarray  # [batch, seq] int32, -1 where word_start is false


def param_names(cfg: ModelConfig, n_labels: int = 0) -> list[str]:
    """Canonical parameter order; checkpoints serialize tensors this way."""
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        p = f"l{i}."
        names += [p + "att.q_w", p + "att.q_b", p + "att.k_w", p + "att.k_b"]
        names += [p + "att.v_w", p + "att.v_b", p + "att.o_w", p + "att.o_b"]
        names += [p + "ln1_g", p + "ln1_b"]
        names += [p + "ffn.w1", p + "ffn.b1", p + "ffn.w2", p + "ffn.b2"]
        names += [p + "ln2_g", p + "ln2_b"]
    names.append("mlm_b")
    if n_labels:
        names += ["cls_w", "cls_b"]
    return names


def decays(name: str) -> bool:
    """Weight decay applies to matrices only, not biases or layer norms."""
    if name.endswith(("_b", ".b1", ".b2")) or "ln" in name:
        return False
    return True


def init_model(cfg: ModelConfig, seed: int, n_labels: int = 0, dtype=np.float32) -> dict:
    """Truncated-normal(0, 0.02) weights, zero biases, identity layer norms."""
    rng = np.random.default_rng(seed)
    h, f, v, m = cfg.hidden, cfg.ffn_size, cfg.vocab_size, cfg.max_positions

    def tn(*shape):
        u = rng.random(shape)
        return (truncnorm.ppf(u, -2.0, 2.0) * 0.02).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    params: dict[str, np.ndarray] = {}
    for name in param_names(cfg, n_labels):
        if name == "tok_emb":
            params[name] = tn(v, h)
        elif name == "pos_emb":
            params[name] = tn(m, h)
        elif name.endswith(("q_w", "k_w", "v_w", "o_w")):
            params[name] = tn(h, h)
        elif name.endswith(".w1"):
            params[name] = tn(h, f)
        elif name.endswith(".w2"):
            params[name] = tn(f, h)
        elif name.endswith("ln1_g") or name.endswith("ln2_g"):
            params[name] = np.ones(h, dtype=dtype)
        elif name.endswith(("ln1_b", "ln2_b")):
            params[name] = zeros(h)
        elif name.endswith(".b1"):
            params[name] = zeros(f)
        elif name.endswith((".b2", "q_b", "k_b", "v_b", "o_b")):
            params[name] = zeros(h)
        elif name == "mlm_b":
            params[name] = zeros(v)
        elif name == "cls_w":
            params[name] = tn(n_labels, h)
        elif name == "cls_b":
            params[name] = zeros(n_labels)
        else:  # pragma: no cover
            raise ModelError(f"unknown parameter {name}")
    return params


def init_classifier(cfg: ModelConfig, n_labels: int, seed, dtype=np.float32):
    """Fresh classification head with the same init law as init_model."""
    rng = np.random.default_rng(seed)
    w = (truncnorm.ppf(rng.random((n_labels, cfg.hidden)), -2.0, 2.0) * 0.02).astype(dtype)
    return w, np.zeros(n_labels, dtype=dtype)


def _gelu(x):
    """Exact (erf) GELU; returns the erf term too so backward can reuse it."""
    e = erf(x * (1.0 / math.sqrt(2.0)))
    return 0.5 * x * (1.0 + e), e


def _gelu_grad(x, e):
    return 0.5 * (1.0 + e) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _softmax_lastdim(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return g * xhat + b, xhat, inv


def _layer_norm_bwd(dy, g, xhat, inv):
    dg = np.sum(dy * xhat, axis=(0, 1))
    db = np.sum(dy, axis=(0, 1))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _dropout(x, rate, rng):
    keep = 1.0 - rate
    mask = rng.random(x.shape) < keep
    return x * mask / keep, mask


def _split_heads(x, n_heads):
    b, s, h = x.shape
    return x.reshape(b, s, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, a, s, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, a * d)


def encode(params, cfg: ModelConfig, ids, attention_mask, *, train=False, drop_rng=None):
    """Run the encoder stack; returns hidden states and a backprop cache."""
    ids = np.asarray(ids)
    attention_mask = np.asarray(attention_mask, dtype=bool)
    b, s = ids.shape
    if s > cfg.max_positions:
        raise ModelError(f"sequence length {s} exceeds max_positions {cfg.max_positions}")
    if ids.max(initial=0) >= cfg.vocab_size:
        raise ModelError(f"token id {int(ids.max())} >= vocab_size {cfg.vocab_size}")
    if not attention_mask.any(axis=1).all():
        raise ModelError("every sequence needs at least one attended position")
    if train and cfg.dropout > 0.0 and drop_rng is None:
        raise ModelError("training forward with dropout needs drop_rng")

    dtype = params["tok_emb"].dtype
    dropping = train and cfg.dropout > 0.0
    scale = 1.0 / math.sqrt(cfg.head_dim)

    x = params["tok_emb"][ids] + params["pos_emb"][:s][None, :, :]
    cache: dict = {"ids": ids, "attention_mask": attention_mask, "train": dropping, "layers": []}
    if dropping:
        x, cache["emb_mask"] = _dropout(x, cfg.dropout, drop_rng)

    # -inf on PAD keys makes their post-softmax weight exactly zero
    key_bias = np.where(attention_mask[:, None, None, :], dtype.type(0.0), dtype.type(-np.inf))

    for i in range(cfg.n_layers):
        p = f"l{i}."
        lc: dict = {"x": x}
        q = _split_heads(x @ params[p + "att.q_w"] + params[p + "att.q_b"], cfg.n_heads)
        k = _split_heads(x @ params[p + "att.k_w"] + params[p + "att.k_b"], cfg.n_heads)
        v = _split_heads(x @ params[p + "att.v_w"] + params[p + "att.v_b"], cfg.n_heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + key_bias
        probs = _softmax_lastdim(scores)
        lc.update(q=q, k=k, v=v, probs=probs)
        probs_used = probs
        if dropping:
            probs_used, lc["probs_mask"] = _dropout(probs, cfg.dropout, drop_rng)
            lc["probs_used"] = probs_used
        ctx = _merge_heads(probs_used @ v)
        lc["ctx"] = ctx
        ao = ctx @ params[p + "att.o_w"] + params[p + "att.o_b"]
        if dropping:
            ao, lc["ao_mask"] = _dropout(ao, cfg.dropout, drop_rng)
        u1, lc["xhat1"], lc["inv1"] = _layer_norm(
            x + ao, params[p + "ln1_g"], params[p + "ln1_b"], cfg.layer_norm_eps
        )
        z = u1 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        a, lc["gelu_erf"] = _gelu(z)
        f = a @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        if dropping:
            f, lc["f_mask"] = _dropout(f, cfg.dropout, drop_rng)
        x, lc["xhat2"], lc["inv2"] = _layer_norm(
            u1 + f, params[p + "ln2_g"], params[p + "ln2_b"], cfg.layer_norm_eps
        )
        lc.update(u1=u1, z=z, a=a)
        cache["layers"].append(lc)

    return x, cache


def mlm_logits(params, h):
    return h @ params["tok_emb"].T + params["mlm_b"]


def classify_logits(params, h):
    return h @ params["cls_w"].T + params["cls_b"]


def forward(params, cfg: ModelConfig, ids, attention_mask, head=None, **kw):
    """Hidden states plus task logits ('mlm', 'classify', or None)."""
    h, _ = encode(params, cfg, ids, attention_mask, **kw)
    if head == "mlm":
        return h, mlm_logits(params, h)
    if head == "classify":
        return h, classify_logits(params, h)
    if head is None:
        return h, None
    raise ModelError(f"unknown head {head!r}")


def _log_softmax(x):
    m = np.max(x, axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def mlm_loss(logits, target_ids, loss_mask):
    """Mean negative log-likelihood over selected positions, plus exp(loss)."""
    loss_mask = np.asarray(loss_mask, dtype=bool)
    n = int(loss_mask.sum())
    if n == 0:
        raise ModelError("empty loss_mask: no selected positions (caller must skip batch)")
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, np.asarray(target_ids)[..., None].astype(np.int64), axis=-1)
    loss = -float(np.sum(picked[..., 0], where=loss_mask, dtype=np.float64)) / n
    return loss, math.exp(loss)


def _mlm_loss_grad(logits, target_ids, loss_mask):
    loss, ppl = mlm_loss(logits, target_ids, loss_mask)
    n = int(np.asarray(loss_mask).sum())
    probs = _softmax_lastdim(logits)
    dlogits = probs
    b, s = np.asarray(target_ids).shape
    idx = np.asarray(target_ids).astype(np.int64)
    np.subtract.at(
        dlogits.reshape(b * s, -1),
        (np.arange(b * s), idx.ravel()),
        np.asarray(1.0, dtype=dlogits.dtype),
    )
    dlogits *= np.asarray(loss_mask)[..., None] / n
    return loss, ppl, dlogits


def classify_loss(logits, labels, word_start_mask):
    """Cross-entropy summed over first-sub-word positions only."""
    mask = np.asarray(word_start_mask, dtype=bool)
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    used = labels[mask]
    if used.size and (used.min() < 0 or used.max() >= n_classes):
        raise ModelError(f"label id outside [0, {n_classes})")
    logp = _log_softmax(logits)
    safe = np.where(mask, labels, 0).astype(np.int64)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    return -float(np.sum(picked, where=mask, dtype=np.float64))


def _classify_loss_grad(logits, labels, word_start_mask):
    loss = classify_loss(logits, labels, word_start_mask)
    mask = np.asarray(word_start_mask, dtype=bool)
    probs = _softmax_lastdim(logits)
    dlogits = probs
    b, s = np.asarray(labels).shape
    safe = np.where(mask, np.asarray(labels), 0).astype(np.int64)
    np.subtract.at(
        dlogits.reshape(b * s, -1),
        (np.arange(b * s), safe.ravel()),
        np.asarray(1.0, dtype=dlogits.dtype),
    )
    dlogits *= mask[..., None]
    return loss, dlogits


def _linear_bwd(x, dy, w):
    """y = x @ w + b with x [B,S,I], dy [B,S,O]."""
    i = x.shape[-1]
    o = dy.shape[-1]
    dw = x.reshape(-1, i).T @ dy.reshape(-1, o)
    db = dy.sum(axis=(0, 1))
    dx = dy @ w.T
    return dx, dw, db


def backward_encoder(params, cfg: ModelConfig, cache, dh):
    """Backprop dh through the encoder; returns grads for encoder params."""
    grads = {name: None for name in params}
    ids = cache["ids"]
    dropping = cache["train"]
    scale = 1.0 / math.sqrt(cfg.head_dim)
    keep = 1.0 - cfg.dropout
    dx = dh

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        lc = cache["layers"][i]
        dr2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_bwd(
            dx, params[p + "ln2_g"], lc["xhat2"], lc["inv2"]
        )
        du1 = dr2.copy()
        df = dr2
        if dropping:
            df = df * lc["f_mask"] / keep
        da, grads[p + "ffn.w2"], grads[p + "ffn.b2"] = _linear_bwd(
            lc["a"], df, params[p + "ffn.w2"]
        )
        dz = da * _gelu_grad(lc["z"], lc["gelu_erf"])
        du1_ffn, grads[p + "ffn.w1"], grads[p + "ffn.b1"] = _linear_bwd(
            lc["u1"], dz, params[p + "ffn.w1"]
        )
        du1 += du1_ffn
        dr1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_bwd(
            du1, params[p + "ln1_g"], lc["xhat1"], lc["inv1"]
        )
        dx = dr1.copy()
        dao = dr1
        if dropping:
            dao = dao * lc["ao_mask"] / keep
        dctx, grads[p + "att.o_w"], grads[p + "att.o_b"] = _linear_bwd(
            lc["ctx"], dao, params[p + "att.o_w"]
        )
        dctx4 = _split_heads(dctx, cfg.n_heads)
        probs_used = lc.get("probs_used", lc["probs"])
        dprobs_used = dctx4 @ lc["v"].transpose(0, 1, 3, 2)
        dv4 = probs_used.transpose(0, 1, 3, 2) @ dctx4
        dprobs = dprobs_used
        if dropping:
            dprobs = dprobs * lc["probs_mask"] / keep
        probs = lc["probs"]
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dq4 = (dscores @ lc["k"]) * scale
        dk4 = (dscores.transpose(0, 1, 3, 2) @ lc["q"]) * scale
        x_in = lc["x"]
        for mat, g4 in (("q", dq4), ("k", dk4), ("v", dv4)):
            dlin = _merge_heads(g4)
            dxm, grads[p + f"att.{mat}_w"], grads[p + f"att.{mat}_b"] = _linear_bwd(
                x_in, dlin, params[p + f"att.{mat}_w"]
            )
            dx += dxm
        if not np.isfinite(dx).all():
            raise NonFiniteGradient(f"non-finite gradient flowing out of layer {i}")

    if dropping:
        dx = dx * cache["emb_mask"] / keep
    s = ids.shape[1]
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, ids.ravel(), dx.reshape(-1, dx.shape[-1]))
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:s] = dx.sum(axis=0)
    grads["tok_emb"] = dtok
    grads["pos_emb"] = dpos
    return grads


def loss_and_grads(params, cfg: ModelConfig, batch, *, train=False, drop_rng=None):
    """Forward + loss + full backward for one batch.

    Dispatches on batch type: MaskedBatch trains the MLM head,
    TokenClassBatch the classifier head.  Returns (loss, aux, grads) with
    aux = perplexity for MLM and None for classification.
    """
    if isinstance(batch, MaskedBatch):
        h, cache = encode(
            params, cfg, batch.input_ids, batch.attention_mask, train=train, drop_rng=drop_rng
        )
        logits = mlm_logits(params, h)
        loss, ppl, dlogits = _mlm_loss_grad(logits, batch.target_ids, batch.loss_mask)
        dh = dlogits @ params["tok_emb"]
        dtok_head = dlogits.reshape(-1, dlogits.shape[-1]).T @ h.reshape(-1, h.shape[-1])
        grads = backward_encoder(params, cfg, cache, dh)
        grads["tok_emb"] += dtok_head
        grads["mlm_b"] = dlogits.sum(axis=(0, 1))
        for name in ("cls_w", "cls_b"):
            if name in params:
                grads[name] = np.zeros_like(params[name])
        return loss, ppl, grads

    if isinstance(batch, TokenClassBatch):
        h, cache = encode(
            params, cfg, batch.input_ids, batch.attention_mask, train=train, drop_rng=drop_rng
        )
        logits = classify_logits(params, h)
        loss, dlogits = _classify_loss_grad(logits, batch.labels, batch.word_start)
        dh = dlogits @ params["cls_w"]
        grads = backward_encoder(params, cfg, cache, dh)
        grads["cls_w"] = dlogits.reshape(-1, dlogits.shape[-1]).T @ h.reshape(-1, h.shape[-1])
        grads["cls_b"] = dlogits.sum(axis=(0, 1))
        grads["mlm_b"] = np.zeros_like(params["mlm_b"])
        return loss, None, grads

    raise ModelError(f"unsupported batch type {type(batch).__name__}")


def backward(params, cfg: ModelConfig, batch, loss_kind: str):
    """Exact analytic gradients of the requested loss for every parameter."""
    if loss_kind not in ("mlm", "classify"):
        raise ModelError(f"unknown loss kind {loss_kind!r}")
    expected = MaskedBatch if loss_kind == "mlm" else TokenClassBatch
    if not isinstance(batch, expected):
        raise ModelError(f"{loss_kind} loss needs a {expected.__name__}")
    _, _, grads = loss_and_grads(params, cfg, batch)
    return grads
