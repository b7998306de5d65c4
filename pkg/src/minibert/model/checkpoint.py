"""Bit-exact checkpoint files.

Layout: magic ``MBCK``, u32 version, u64 header length, canonical-JSON
header (model config, label set, vocab fingerprint, step, seed, tensor
manifest), then raw little-endian float32 tensors in manifest order.
Optimizer moments are stored as ``m.<name>`` / ``v.<name>`` entries so a
resumed run continues exactly where the saved one stopped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from ..tokenizer import Vocab
from .labels import LabelSet
from .network import ModelConfig, param_names

MAGIC = b"MBCK"
VERSION = 1
_TENSOR_DTYPE = "<f4"


class CheckpointError(Exception):
    pass


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict
    step: int
    seed: int
    vocab_fingerprint: int
    label_set: LabelSet | None = None
    opt_m: dict | None = None
    opt_v: dict | None = None

    def expected_names(self) -> list[str]:
        n_labels = len(self.label_set) if self.label_set else 0
        return param_names(self.config, n_labels)

    def clone(self) -> "ModelCheckpoint":
        return replace(
            self,
            params={k: v.copy() for k, v in self.params.items()},
            opt_m={k: v.copy() for k, v in self.opt_m.items()} if self.opt_m else None,
            opt_v={k: v.copy() for k, v in self.opt_v.items()} if self.opt_v else None,
        )


def _manifest(ckpt: ModelCheckpoint) -> list[tuple[str, list[int]]]:
    names = ckpt.expected_names()
    missing = [n for n in names if n not in ckpt.params]
    if missing or len(ckpt.params) != len(names):
        raise CheckpointError(f"params do not match the canonical layout (missing {missing})")
    entries = [(name, list(ckpt.params[name].shape)) for name in names]
    if ckpt.opt_m is not None:
        entries += [(f"m.{name}", list(ckpt.opt_m[name].shape)) for name in names]
        entries += [(f"v.{name}", list(ckpt.opt_v[name].shape)) for name in names]
    return entries


def save_checkpoint(ckpt: ModelCheckpoint, path: str) -> None:
    entries = _manifest(ckpt)
    header = {
        "config": ckpt.config.to_dict(),
        "label_set": ckpt.label_set.to_dict() if ckpt.label_set else None,
        "vocab_fingerprint": f"{ckpt.vocab_fingerprint:016x}",
        "step": ckpt.step,
        "rng": {"seed": ckpt.seed},
        "manifest": [[name, _TENSOR_DTYPE, shape] for name, shape in entries],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()

    def tensor(name: str) -> np.ndarray:
        if name.startswith("m."):
            return ckpt.opt_m[name[2:]]
        if name.startswith("v."):
            return ckpt.opt_v[name[2:]]
        return ckpt.params[name]

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name, _shape in entries:
            arr = np.ascontiguousarray(tensor(name), dtype=_TENSOR_DTYPE)
            f.write(arr.tobytes())


def load_checkpoint(path: str, vocab: Vocab | None = None) -> ModelCheckpoint:
    """Read a checkpoint; verifies the vocab fingerprint when one is given."""
    with open(path, "rb") as f:
        data = f.read()

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError(f"truncated checkpoint: {what} cut short at byte {offset}")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", take(8, "header length"))
    try:
        header = json.loads(take(hlen, "header"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt header JSON: {e}") from e

    config = ModelConfig.from_dict(header["config"])
    label_set = LabelSet.from_dict(header["label_set"]) if header["label_set"] else None
    fingerprint = int(header["vocab_fingerprint"], 16)
    if vocab is not None and vocab.fingerprint() != fingerprint:
        raise CheckpointError(
            f"vocab fingerprint mismatch: checkpoint has {fingerprint:016x}, "
            f"supplied vocab hashes to {vocab.fingerprint():016x}"
        )

    params: dict = {}
    opt_m: dict = {}
    opt_v: dict = {}
    for name, dtype_str, shape in header["manifest"]:
        if dtype_str != _TENSOR_DTYPE:
            raise CheckpointError(f"unsupported tensor dtype {dtype_str!r} for {name}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = take(4 * count, f"tensor {name}")
        arr = np.frombuffer(raw, dtype=_TENSOR_DTYPE).reshape(shape).copy()
        if name.startswith("m."):
            opt_m[name[2:]] = arr
        elif name.startswith("v."):
            opt_v[name[2:]] = arr
        else:
            params[name] = arr
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after the last tensor")

    ckpt = ModelCheckpoint(
        config=config,
        params=params,
        step=int(header["step"]),
        seed=int(header["rng"]["seed"]),
        vocab_fingerprint=fingerprint,
        label_set=label_set,
        opt_m=opt_m or None,
        opt_v=opt_v or None,
    )
    expected = set(ckpt.expected_names())
    if set(params) != expected:
        raise CheckpointError("manifest does not cover the canonical parameter layout")
    return ckpt
