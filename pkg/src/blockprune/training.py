"""Next-token cross-entropy pretraining for the desk-scale teacher."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import TransformerModel
from .model import forward_with_trace
from .recovery import sample_batches
from .optim import OptimizerState
from .tensor import GradientTape, backward, cross_entropy


@dataclass
class PretrainConfig:
    token_budget: int = 2_000_000
    batch_size: int = 16
    seq_len: int = 128
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 50

    def to_dict(self) -> dict:
        return {"token_budget": self.token_budget, "batch_size": self.batch_size,
                "seq_len": self.seq_len, "lr": self.lr, "seed": self.seed}


def pretrain(model: TransformerModel, data: np.ndarray,
             cfg: PretrainConfig) -> tuple[TransformerModel, list[dict]]:
    """One seeded pass over the token budget; returns a trained copy and a
    per-logged-step loss history. Budget below one batch leaves the model at
    its initialization."""
    data = np.asarray(data)
    model = model.copy()
    params = model.named_parameters()
    opt = OptimizerState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n_steps = cfg.token_budget // (cfg.batch_size * cfg.seq_len)
    log: list[dict] = []
    for step, batch in enumerate(sample_batches(data, n_steps, cfg.batch_size,
                                                cfg.seq_len, rng)):
        with GradientTape() as tape:
            trace = forward_with_trace(model, batch[:, :-1])
            loss = cross_entropy(trace.logits, batch[:, 1:])
        grads = backward(tape, loss)
        opt.step(params, {name: grads.get(id(p), np.zeros_like(p.data))
                          for name, p in params.items()})
        if step % cfg.log_every == 0 or step == n_steps - 1:
            log.append({"step": step, "loss": loss.item()})
    return model, log
