"""Perplexity and multiple-choice probe evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID
from .model import TransformerModel, forward_with_trace


@dataclass
class ProbeItem:
    context: np.ndarray
    candidates: list[np.ndarray]
    correct: int

    def __post_init__(self):
        self.context = np.asarray(self.context)
        self.candidates = [np.asarray(c) for c in self.candidates]
        if len(self.candidates) < 2:
            raise ValueError("probe item needs at least 2 candidates")
        if not 0 <= self.correct < len(self.candidates):
            raise ValueError("correct index out of range")
        if any(len(c) == 0 for c in self.candidates):
            raise ValueError("empty candidate continuation")


@dataclass
class MetricSuite:
    perplexity: float
    probe_accuracies: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        for name, acc in self.probe_accuracies.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {name} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"perplexity": self.perplexity,
                "probe_accuracies": dict(self.probe_accuracies)}


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def perplexity(model: TransformerModel, tokens: np.ndarray,
               context_len: int = 128, batch_size: int = 16) -> float:
    """exp(mean next-token NLL) over non-overlapping windows."""
    tokens = np.asarray(tokens)
    if len(tokens) < 2:
        raise ValueError("corpus needs at least 2 tokens")
    context_len = min(context_len, model.config.max_seq_len)
    n_windows = len(tokens) // context_len
    if n_windows == 0:
        windows = tokens[None, :]
    else:
        windows = tokens[:n_windows * context_len].reshape(n_windows, context_len)
    total_nll, total_count = 0.0, 0
    for i in range(0, len(windows), batch_size):
        chunk = windows[i:i + batch_size]
        logits = forward_with_trace(model, chunk[:, :-1]).logits.data
        logp = _log_softmax(logits.astype(np.float64))
        targets = chunk[:, 1:]
        b, s = targets.shape
        total_nll -= logp[np.arange(b)[:, None], np.arange(s)[None, :], targets].sum()
        total_count += b * s
    return float(np.exp(total_nll / total_count))


def _candidate_loglik(model: TransformerModel, context: np.ndarray,
                      candidate: np.ndarray) -> float:
    """Total log-likelihood of the candidate tokens given the context.
    A bos token is prepended so empty contexts score unconditionally."""
    seq = np.concatenate(([BOS_ID], context, candidate))
    max_len = model.config.max_seq_len
    if len(seq) > max_len + 1:
        seq = seq[-(max_len + 1):]
    logits = forward_with_trace(model, seq[None, :-1]).logits.data[0]
    logp = _log_softmax(logits.astype(np.float64))
    n = len(candidate)
    positions = np.arange(len(seq) - 1 - n, len(seq) - 1)
    return float(logp[positions, seq[positions + 1]].sum())


def choice_accuracy(model: TransformerModel, items: list[ProbeItem]) -> float:
    """Fraction of items where the correct candidate has the highest total
    log-likelihood; ties go to the lowest candidate index."""
    if not items:
        raise ValueError("no probe items")
    correct = 0
    for item in items:
        scores = [_candidate_loglik(model, item.context, c) for c in item.candidates]
        if int(np.argmax(scores)) == item.correct:
            correct += 1
    return correct / len(items)


def make_probes(tokens: np.ndarray, n_items: int = 20, context_len: int = 32,
                continuation_len: int = 8, n_distractors: int = 3,
                seed: int = 0) -> dict[str, list[ProbeItem]]:
    """Synthetic probe sets built from a held-out token stream.

    continuation: true next span vs spans lifted from elsewhere.
    corruption:   true next span vs shuffled copies of itself.
    """
    tokens = np.asarray(tokens)
    span = context_len + continuation_len
    high = len(tokens) - span
    if high < 1:
        raise ValueError("token stream too short for probe generation")
    rng = np.random.default_rng(seed)
    continuation, corruption = [], []
    for _ in range(n_items):
        s = int(rng.integers(0, high))
        ctx = tokens[s:s + context_len].copy()
        true = tokens[s + context_len:s + span].copy()

        distractors = [tokens[p:p + continuation_len].copy()
                       for p in rng.integers(0, high, size=n_distractors)]
        correct = int(rng.integers(0, n_distractors + 1))
        cands = distractors[:correct] + [true] + distractors[correct:]
        continuation.append(ProbeItem(context=ctx, candidates=cands, correct=correct))

        shuffled = [rng.permutation(true) for _ in range(n_distractors)]
        correct = int(rng.integers(0, n_distractors + 1))
        cands = shuffled[:correct] + [true] + shuffled[correct:]
        corruption.append(ProbeItem(context=ctx, candidates=cands, correct=correct))
    return {"continuation": continuation, "corruption": corruption}


def evaluate_model(model: TransformerModel, tokens: np.ndarray,
                   probes: dict[str, list[ProbeItem]] | None = None,
                   context_len: int = 128) -> MetricSuite:
    accs = {name: choice_accuracy(model, items)
            for name, items in (probes or {}).items()}
    return MetricSuite(perplexity=perplexity(model, tokens, context_len=context_len),
                       probe_accuracies=accs)
