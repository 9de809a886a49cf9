"""Miniature decoder-only transformer with per-block trace capture.

Pre-norm blocks (norm -> attention -> residual; norm -> feed-forward ->
residual). Final norm is applied only before the output projection, so the
traced per-block hidden states are the raw residual-stream values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

ATTENTION_MASK_FILL = -1e9
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    vocab_size: int
    max_seq_len: int
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "vocab_size", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {"n_layers": self.n_layers, "d_model": self.d_model,
                "n_heads": self.n_heads, "vocab_size": self.vocab_size,
                "max_seq_len": self.max_seq_len, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# weight names within one block, in checkpoint order
BLOCK_WEIGHTS = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                 "ln2_g", "ln2_b", "w1", "w2")
# projection matrices eligible for low-rank adapters
ADAPTER_TARGETS = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass
class Block:
    """One attention + feed-forward unit. All widths equal d_model; the
    feed-forward inner width is fixed at 4*d_model."""
    weights: dict[str, Tensor]

    def copy(self) -> "Block":
        return Block({k: v.copy() for k, v in self.weights.items()})


@dataclass
class Trace:
    """Per-block activations from one forward pass."""
    block_hidden: list[Tensor]      # each batch x seq x d_model, post-block
    block_attention: list[Tensor]   # each batch x heads x seq x seq, post-softmax
    final_hidden: Tensor            # last block's hidden state (pre final norm)
    logits: Tensor                  # batch x seq x vocab


@dataclass
class TransformerModel:
    config: ModelConfig
    tok_emb: Tensor
    pos_emb: Tensor
    blocks: list[Block]
    ln_f_g: Tensor
    ln_f_b: Tensor
    w_out: Tensor
    # maps each current block to its index in the original (unpruned) model
    origin_indices: list[int] = field(default_factory=list)
    # original-model indices of blocks removed so far, ascending
    drop_history: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.origin_indices:
            self.origin_indices = list(range(len(self.blocks)))
        if len(self.blocks) != self.config.n_layers:
            raise ValueError(f"{len(self.blocks)} blocks but config says {self.config.n_layers}")

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb,
                  "ln_f_g": self.ln_f_g, "ln_f_b": self.ln_f_b, "w_out": self.w_out}
        for i, blk in enumerate(self.blocks):
            for k, v in blk.weights.items():
                params[f"block{i}.{k}"] = v
        return params

    def copy(self) -> "TransformerModel":
        return TransformerModel(
            config=self.config,
            tok_emb=self.tok_emb.copy(), pos_emb=self.pos_emb.copy(),
            blocks=[b.copy() for b in self.blocks],
            ln_f_g=self.ln_f_g.copy(), ln_f_b=self.ln_f_b.copy(),
            w_out=self.w_out.copy(),
            origin_indices=list(self.origin_indices),
            drop_history=list(self.drop_history))


def init_model(config: ModelConfig) -> TransformerModel:
    """Seeded scaled-normal initialization; deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    d, v, s = config.d_model, config.vocab_size, config.max_seq_len

    def normal(*dims):
        return Tensor(rng.normal(0.0, INIT_STD, size=dims).astype(np.float32))

    blocks = []
    for _ in range(config.n_layers):
        w = {"ln1_g": Tensor(np.ones(d, dtype=np.float32)),
             "ln1_b": Tensor(np.zeros(d, dtype=np.float32)),
             "wq": normal(d, d), "wk": normal(d, d),
             "wv": normal(d, d), "wo": normal(d, d),
             "ln2_g": Tensor(np.ones(d, dtype=np.float32)),
             "ln2_b": Tensor(np.zeros(d, dtype=np.float32)),
             "w1": normal(d, 4 * d), "w2": normal(4 * d, d)}
        blocks.append(Block(w))
    return TransformerModel(
        config=config,
        tok_emb=normal(v, d), pos_emb=normal(s, d),
        blocks=blocks,
        ln_f_g=Tensor(np.ones(d, dtype=np.float32)),
        ln_f_b=Tensor(np.zeros(d, dtype=np.float32)),
        w_out=normal(d, v))


def _block_forward(x: Tensor, blk: Block, cfg: ModelConfig, mask: np.ndarray,
                   weight_of) -> tuple[Tensor, Tensor]:
    """Returns (post-block hidden, post-softmax attention probabilities)."""
    b, s, d = x.dims
    h, hd = cfg.n_heads, cfg.head_dim
    w = blk.weights

    def split_heads(t):
        # b x s x d -> b x h x s x hd
        return T.transpose(T.reshape(t, (b, s, h, hd)), (0, 2, 1, 3))

    normed = T.layernorm(x, w["ln1_g"], w["ln1_b"])
    q = split_heads(T.matmul(normed, weight_of("wq")))
    k = split_heads(T.matmul(normed, weight_of("wk")))
    v = split_heads(T.matmul(normed, weight_of("wv")))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    probs = T.softmax(T.add(scores, Tensor(mask)))
    ctx = T.matmul(probs, v)  # b x h x s x hd
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    x = T.add(x, T.matmul(ctx, weight_of("wo")))

    normed2 = T.layernorm(x, w["ln2_g"], w["ln2_b"])
    ff = T.matmul(T.gelu(T.matmul(normed2, weight_of("w1"))), weight_of("w2"))
    return T.add(x, ff), probs


def forward_with_trace(model: TransformerModel, tokens: np.ndarray,
                       adapters: dict[str, "LowRankAdapter"] | None = None) -> Trace:
    """Run the causal forward pass capturing every block's activations.

    tokens: int array, batch x seq. adapters maps "block{i}.{name}" to a
    LowRankAdapter whose effective weight replaces that projection.
    """
    tokens = np.atleast_2d(np.asarray(tokens))
    cfg = model.config
    if tokens.size == 0:
        raise ValueError("empty token batch")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    b, s = tokens.shape
    if s > cfg.max_seq_len:
        raise ValueError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")

    mask = np.triu(np.full((s, s), ATTENTION_MASK_FILL, dtype=np.float32), k=1)
    pos = T.embedding_lookup(model.pos_emb, np.arange(s))
    x = T.add(T.embedding_lookup(model.tok_emb, tokens), pos)

    block_hidden, block_attention = [], []
    for i, blk in enumerate(model.blocks):
        if adapters:
            def weight_of(name, _i=i, _blk=blk):
                a = adapters.get(f"block{_i}.{name}")
                return a.effective() if a is not None else _blk.weights[name]
        else:
            def weight_of(name, _blk=blk):
                return _blk.weights[name]
        x, probs = _block_forward(x, blk, cfg, mask, weight_of)
        block_hidden.append(x)
        block_attention.append(probs)

    logits = T.matmul(T.layernorm(x, model.ln_f_g, model.ln_f_b), model.w_out)
    return Trace(block_hidden=block_hidden, block_attention=block_attention,
                 final_hidden=x, logits=logits)


def remove_block(model: TransformerModel, position: int) -> TransformerModel:
    """New model with the block at `position` deleted; input is untouched."""
    n = model.n_layers
    if not 0 <= position < n:
        raise IndexError(f"block position {position} out of range [0, {n})")
    if n <= 1:
        raise ValueError("refusing to remove the last remaining block")
    cfg = model.config
    new_cfg = ModelConfig(n_layers=n - 1, d_model=cfg.d_model, n_heads=cfg.n_heads,
                          vocab_size=cfg.vocab_size, max_seq_len=cfg.max_seq_len,
                          seed=cfg.seed)
    origin = list(model.origin_indices)
    dropped = origin.pop(position)
    return TransformerModel(
        config=new_cfg,
        tok_emb=model.tok_emb.copy(), pos_emb=model.pos_emb.copy(),
        blocks=[b.copy() for i, b in enumerate(model.blocks) if i != position],
        ln_f_g=model.ln_f_g.copy(), ln_f_b=model.ln_f_b.copy(),
        w_out=model.w_out.copy(),
        origin_indices=origin,
        drop_history=sorted(model.drop_history + [dropped]))
