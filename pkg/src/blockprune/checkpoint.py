"""Binary checkpoint format.

Layout (all integers little-endian):
    magic       4 bytes  b"ITRB"
    version     uint32
    meta_len    uint32
    meta        UTF-8 JSON: {config, origin_indices, drop_history}
    n_tensors   uint32
    per tensor:
        name_len  uint16
        name      UTF-8
        rank      uint32
        dims      rank * uint32
        data      prod(dims) * float32, row-major little-endian

Round-trip is bit-exact: load(save(m)) reproduces identical forward outputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import BLOCK_WEIGHTS, Block, ModelConfig, Tensor, TransformerModel

MAGIC = b"ITRB"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed checkpoint; the message names the failing byte offset."""


def save_checkpoint(model: TransformerModel, path) -> None:
    meta = json.dumps({
        "config": model.config.to_dict(),
        "origin_indices": model.origin_indices,
        "drop_history": model.drop_history,
    }, sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(t.data.astype("<f4", copy=False).tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]


def load_checkpoint(path) -> TransformerModel:
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic bytes at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version} at offset 4")
    meta = json.loads(r.take(r.u32("meta length"), "metadata").decode("utf-8"))
    config = ModelConfig.from_dict(meta["config"])

    tensors: dict[str, Tensor] = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u16("name length"), "tensor name").decode("utf-8")
        rank = r.u32("tensor rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "tensor dims"))
        n = int(np.prod(dims)) if rank else 1
        raw = r.take(4 * n, f"tensor data for {name}")
        tensors[name] = Tensor(np.frombuffer(raw, dtype="<f4").reshape(dims).copy())
    if r.pos != len(blob):
        raise CheckpointFormatError(f"trailing bytes at offset {r.pos}")

    try:
        blocks = [Block({k: tensors[f"block{i}.{k}"] for k in BLOCK_WEIGHTS})
                  for i in range(config.n_layers)]
        return TransformerModel(
            config=config,
            tok_emb=tensors["tok_emb"], pos_emb=tensors["pos_emb"],
            blocks=blocks,
            ln_f_g=tensors["ln_f_g"], ln_f_b=tensors["ln_f_b"],
            w_out=tensors["w_out"],
            origin_indices=list(meta["origin_indices"]),
            drop_history=list(meta["drop_history"]))
    except KeyError as e:
        raise CheckpointFormatError(f"missing tensor {e.args[0]}") from None
