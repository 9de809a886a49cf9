"""Recovery phase: distill the frozen full teacher into the pruned student.

The loss is the mean squared error between mapped hidden states, mapped
post-softmax attention probabilities, and output logits. The teacher is
always the original unpruned model; the cumulative drop record drives the
student-to-teacher layer mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import ADAPTER_TARGETS, TransformerModel, forward_with_trace, Trace
from .optim import LowRankAdapter, OptimizerState, merge_adapter
from .tensor import GradientTape, Tensor, backward


@dataclass
class DropRecord:
    """Original-teacher block indices (0-based) removed so far."""
    dropped: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.dropped = sorted(self.dropped)
        if len(set(self.dropped)) != len(self.dropped):
            raise ValueError("duplicate dropped indices")
        if self.dropped and self.dropped[0] < 0:
            raise ValueError("negative dropped index")

    def __len__(self):
        return len(self.dropped)


def map_layer(l: int, drop: DropRecord, teacher_layers: int) -> int:
    """Map student layer l to its teacher layer, both 1-based.

    Returns the unique m not in the drop set with m = l + |{d in D : d < m}|
    (D taken 1-based). Equivalently the l-th surviving teacher index.
    """
    n_student = teacher_layers - len(drop)
    if not 1 <= l <= n_student:
        raise ValueError(f"student layer {l} out of range [1, {n_student}]")
    dropped = [d + 1 for d in drop.dropped]  # to 1-based
    m = l
    while True:
        nxt = l + sum(1 for d in dropped if d <= m)
        if nxt == m:
            return m
        m = nxt


@dataclass
class RecoveryConfig:
    token_budget: int = 100_000
    batch_size: int = 8
    grad_accum: int = 1
    lr: float = 1e-3
    max_seq_len: int = 128
    adapter_rank: int = 8   # 0 means full fine-tune
    seed: int = 0

    def __post_init__(self):
        for name in ("token_budget", "batch_size", "grad_accum", "lr", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.adapter_rank < 0:
            raise ValueError("adapter_rank must be >= 0")

    def to_dict(self) -> dict:
        return {"token_budget": self.token_budget, "batch_size": self.batch_size,
                "grad_accum": self.grad_accum, "lr": self.lr,
                "max_seq_len": self.max_seq_len, "adapter_rank": self.adapter_rank,
                "seed": self.seed}


@dataclass
class KDLossBreakdown:
    hidden_term: Tensor
    attention_term: Tensor
    logit_term: Tensor
    total: Tensor

    def to_dict(self) -> dict:
        return {"hidden": self.hidden_term.item(), "attention": self.attention_term.item(),
                "logit": self.logit_term.item(), "total": self.total.item()}


def kd_loss(teacher_trace: Trace, student_trace: Trace, drop: DropRecord) -> KDLossBreakdown:
    """Sum over student layers of MSE(mapped teacher hidden, student hidden)
    + MSE(mapped teacher attention, student attention), plus logit MSE."""
    n_teacher = len(teacher_trace.block_hidden)
    n_student = len(student_trace.block_hidden)
    if n_student != n_teacher - len(drop):
        raise ValueError(f"student has {n_student} layers, expected {n_teacher - len(drop)}")
    hidden = Tensor(0.0)
    attention = Tensor(0.0)
    for l in range(1, n_student + 1):
        m = map_layer(l, drop, n_teacher)
        hidden = T.add(hidden, T.mse(student_trace.block_hidden[l - 1],
                                     teacher_trace.block_hidden[m - 1]))
        attention = T.add(attention, T.mse(student_trace.block_attention[l - 1],
                                           teacher_trace.block_attention[m - 1]))
    logit = T.mse(student_trace.logits, teacher_trace.logits)
    total = T.add(T.add(hidden, attention), logit)
    return KDLossBreakdown(hidden_term=hidden, attention_term=attention,
                           logit_term=logit, total=total)


def sample_batches(data: np.ndarray, n_steps: int, batch_size: int, seq_len: int,
                   rng: np.random.Generator):
    """Seeded uniform windows over a 1-D token stream."""
    high = len(data) - seq_len
    if high < 1:
        raise ValueError(f"token stream too short: {len(data)} < {seq_len + 1}")
    for _ in range(n_steps):
        starts = rng.integers(0, high, size=batch_size)
        yield np.stack([data[s:s + seq_len + 1] for s in starts])


def _attach_adapters(student: TransformerModel, rank: int,
                     rng: np.random.Generator) -> dict[str, LowRankAdapter]:
    adapters = {}
    for i, blk in enumerate(student.blocks):
        for name in ADAPTER_TARGETS:
            adapters[f"block{i}.{name}"] = LowRankAdapter.create(
                blk.weights[name], rank, rng)
    return adapters


def recover(teacher: TransformerModel, student: TransformerModel,
            data: np.ndarray, cfg: RecoveryConfig) -> tuple[TransformerModel, list[dict]]:
    """Train the student to match the teacher's traces; returns a recovered
    copy plus per-step loss rows. The teacher and input student are untouched."""
    data = np.asarray(data)
    if data.size == 0:
        raise ValueError("empty recovery data")
    student = student.copy()
    drop = DropRecord(list(student.drop_history))
    rng = np.random.default_rng(cfg.seed)

    tokens_per_step = cfg.batch_size * cfg.max_seq_len
    n_steps = cfg.token_budget // tokens_per_step
    if n_steps == 0:
        return student, []

    adapters = _attach_adapters(student, cfg.adapter_rank, rng) if cfg.adapter_rank > 0 else None
    if adapters is not None:
        trainable = {}
        for key, a in adapters.items():
            trainable[f"{key}.down"] = a.down
            trainable[f"{key}.up"] = a.up
    else:
        trainable = student.named_parameters()

    opt = OptimizerState(lr=cfg.lr)
    log: list[dict] = []
    accum: dict[str, np.ndarray] = {}
    n_accum = 0

    for step, batch in enumerate(sample_batches(data, n_steps, cfg.batch_size,
                                                cfg.max_seq_len, rng)):
        inputs = batch[:, :-1]
        teacher_trace = forward_with_trace(teacher, inputs)
        with GradientTape() as tape:
            student_trace = forward_with_trace(student, inputs, adapters=adapters)
            loss = kd_loss(teacher_trace, student_trace, drop)
        grads = backward(tape, loss.total)
        for name, p in trainable.items():
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            accum[name] = accum.get(name, 0.0) + g
        n_accum += 1
        log.append({"step": step, **loss.to_dict()})
        if n_accum == cfg.grad_accum:
            opt.step(trainable, {k: v / n_accum for k, v in accum.items()})
            accum, n_accum = {}, 0
    if n_accum:
        opt.step(trainable, {k: v / n_accum for k, v in accum.items()})

    if adapters is not None:
        for i, blk in enumerate(student.blocks):
            for name in ADAPTER_TARGETS:
                blk.weights[name] = merge_adapter(adapters[f"block{i}.{name}"])
    return student, log
