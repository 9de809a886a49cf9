"""Adaptive-moment optimizer and low-rank adapter parameterization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, matmul, scale, add


class OptimizerState:
    """Adam with bias correction. Moments are keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        """Update params in place. Every param must have a gradient."""
        missing = [k for k in params if k not in grads]
        if missing:
            raise ValueError(f"missing gradients for parameters: {missing}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name].astype(np.float32)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(np.float32)


@dataclass
class LowRankAdapter:
    """Additive low-rank factor on a frozen base weight.

    Effective weight = base + scaling * (down @ up). `up` starts at zero so
    the effective weight equals the base until training moves it.
    """

    base: Tensor
    down: Tensor
    up: Tensor
    rank: int
    scaling: float = 1.0

    @classmethod
    def create(cls, base: Tensor, rank: int, rng: np.random.Generator,
               scaling: float = 1.0) -> "LowRankAdapter":
        m, n = base.data.shape
        if rank > min(m, n):
            raise ValueError(f"rank {rank} exceeds min dim {min(m, n)}")
        down = Tensor(rng.normal(0.0, 0.02, size=(m, rank)).astype(np.float32))
        up = Tensor(np.zeros((rank, n), dtype=np.float32))
        return cls(base=base, down=down, up=up, rank=rank, scaling=scaling)

    def effective(self) -> Tensor:
        """Tape-recorded effective weight; gradients flow to down/up only."""
        return add(self.base, scale(matmul(self.down, self.up), self.scaling))


def merge_adapter(adapter: LowRankAdapter) -> Tensor:
    """Fold the adapter into its base and zero the adapter contribution."""
    merged = Tensor(adapter.base.data
                    + np.float32(adapter.scaling) * (adapter.down.data @ adapter.up.data))
    adapter.base = merged
    adapter.up = Tensor(np.zeros_like(adapter.up.data))
    return merged
