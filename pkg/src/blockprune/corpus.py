"""Byte-level tokenization and corpus splits.

Vocabulary is the 256 byte values plus two specials (pad, bos), so any
plain-text file works with no external assets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOCAB_SIZE = 258
PAD_ID = 256
BOS_ID = 257


def encode(text: str | bytes) -> np.ndarray:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return np.frombuffer(text, dtype=np.uint8).astype(np.int64)


def decode(ids: np.ndarray) -> str:
    ids = np.asarray(ids)
    return bytes(ids[ids < 256].astype(np.uint8)).decode("utf-8", errors="replace")


@dataclass
class Corpus:
    """Tokenized stream with disjoint, exhaustive train/validation splits.

    Calibration sequences are sampled from the validation side so scoring
    never sees training text.
    """
    tokens: np.ndarray
    train_end: int          # train = tokens[:train_end], validation = rest
    split_seed: int = 0
    source: str = ""

    def __post_init__(self):
        if not 0 < self.train_end < len(self.tokens):
            raise ValueError("train_end must split the stream into two non-empty parts")

    @property
    def train(self) -> np.ndarray:
        return self.tokens[:self.train_end]

    @property
    def validation(self) -> np.ndarray:
        return self.tokens[self.train_end:]

    @classmethod
    def from_text(cls, text: str | bytes, val_fraction: float = 0.1,
                  split_seed: int = 0, source: str = "") -> "Corpus":
        tokens = encode(text)
        if len(tokens) < 4:
            raise ValueError("corpus too small")
        train_end = int(round(len(tokens) * (1.0 - val_fraction)))
        train_end = min(max(train_end, 1), len(tokens) - 1)
        return cls(tokens=tokens, train_end=train_end, split_seed=split_seed,
                   source=source)

    @classmethod
    def from_file(cls, path, **kw) -> "Corpus":
        return cls.from_text(Path(path).read_bytes(), source=str(path), **kw)

    def sample_calibration(self, n_sequences: int, seq_len: int,
                           seed: int = 0) -> list[np.ndarray]:
        """Seeded uniform sample of fixed-length windows from validation."""
        val = self.validation
        high = len(val) - seq_len
        if high < 1:
            raise ValueError(f"validation split too short for seq_len {seq_len}")
        rng = np.random.default_rng(seed)
        starts = rng.integers(0, high, size=n_sequences)
        return [val[s:s + seq_len].copy() for s in starts]
