"""Block importance via output cosine similarity against the unpruned model.

For each candidate block, build the model with that block removed, run both
models on the calibration sequences, and compare final hidden states per
token position. High similarity means the block barely changes the output,
so the highest-scoring block is the one removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import TransformerModel, forward_with_trace, remove_block


@dataclass
class CalibrationSet:
    sequences: list[np.ndarray]
    source: str = ""
    sample_seed: int = 0

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("calibration set must be non-empty")
        self.sequences = [np.asarray(s) for s in self.sequences]
        for s in self.sequences:
            if s.ndim != 1 or len(s) < 2:
                raise ValueError("each calibration sequence needs length >= 2")


@dataclass
class ImportanceReport:
    scores: list[float]                 # one per current block, in [-1, 1]
    chosen: int                         # argmax of scores, lowest-index ties
    per_sequence: np.ndarray            # blocks x sequences

    def to_dict(self) -> dict:
        return {"scores": self.scores, "chosen": self.chosen,
                "per_sequence": self.per_sequence.tolist()}


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity per position (last axis = features), averaged over
    positions. A position where either vector is zero contributes 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {list(a.shape)} vs {list(b.shape)}")
    dots = (a * b).sum(axis=-1)
    denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    return float(sims.mean())


def score_blocks(model: TransformerModel, calib: CalibrationSet,
                 on_candidate=None) -> ImportanceReport:
    """Score every block; `on_candidate` (if given) is called once per
    candidate model evaluated, for instrumentation."""
    n = model.n_layers
    if n < 2:
        raise ValueError("need at least 2 blocks to score")
    reference = [forward_with_trace(model, seq[None, :]).final_hidden.data[0]
                 for seq in calib.sequences]
    per_sequence = np.zeros((n, len(calib.sequences)))
    for i in range(n):
        candidate = remove_block(model, i)
        if on_candidate is not None:
            on_candidate(candidate)
        for d, seq in enumerate(calib.sequences):
            hidden = forward_with_trace(candidate, seq[None, :]).final_hidden.data[0]
            per_sequence[i, d] = cosine_similarity(reference[d], hidden)
    scores = per_sequence.mean(axis=1)
    return ImportanceReport(scores=[float(s) for s in scores],
                            chosen=int(np.argmax(scores)),
                            per_sequence=per_sequence)


def prune_one(model: TransformerModel, calib: CalibrationSet,
              on_candidate=None) -> tuple[TransformerModel, ImportanceReport]:
    """Remove the least impactful block; drop history records its index in
    the ORIGINAL unpruned model."""
    report = score_blocks(model, calib, on_candidate=on_candidate)
    return remove_block(model, report.chosen), report
