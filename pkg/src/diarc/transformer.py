"""Multi-head attention encoder and decoder stacks.

Pre-norm residual blocks, sinusoidal positional encodings, scaled
dot-product attention. Defaults follow the target architecture: 6 layers,
256 hidden units, 8 heads, feedforward 4x hidden. Fully-masked attention
rows emit the zero vector rather than a uniform mix, which keeps the
degenerate case deterministic and testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import (
    DimensionError,
    Embedding,
    Linear,
    Module,
    ModuleList,
    Tensor,
    add,
    dropout,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
)


class SequenceLengthError(ValueError):
    """Input sequence exceeds the configured maximum length."""


class GenerationComplete(Exception):
    """Signal that the decoder prefix is already at maximum length."""


@dataclass
class TransformerConfig:
    num_layers: int = 6
    hidden_dim: int = 256
    num_heads: int = 8
    feedforward_dim: int = 1024
    max_sequence_len: int = 64
    vocab_size: int = 0
    dropout_rate: float = 0.1

    def __post_init__(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )


@lru_cache(maxsize=16)
def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Standard fixed sin/cos position table, shape [length, dim]."""
    position = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: dim // 2])
    return table.astype(np.float32)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        d = config.hidden_dim
        self.num_heads = config.num_heads
        self.head_dim = d // config.num_heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor,
                 mask: np.ndarray | None) -> Tensor:
        b, tq, d = queries.shape
        tk = keys.shape[1]
        if keys.shape[1] != values.shape[1]:
            raise DimensionError(
                f"key/value lengths disagree: {keys.shape} vs {values.shape}"
            )
        if mask is not None and mask.shape != (b, tq, tk):
            raise DimensionError(
                f"attention mask shape {mask.shape} != expected {(b, tq, tk)}"
            )

        def split_heads(t: Tensor) -> Tensor:
            return transpose(reshape(t, (b, -1, self.num_heads, self.head_dim)),
                             (0, 2, 1, 3))

        q = split_heads(self.wq(queries))
        k = split_heads(self.wk(keys))
        v = split_heads(self.wv(values))
        scores = matmul(q, transpose(k, (0, 1, 3, 2)))
        scores = mul(scores, 1.0 / np.sqrt(self.head_dim))
        masking = mask is not None and not mask.all()
        if masking:
            bias = np.where(mask, 0.0, -1e9).astype(np.float32)[:, None, :, :]
            scores = add(scores, Tensor(bias))
        probs = softmax(scores, axis=-1)
        ctx = matmul(probs, v)
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
        out = self.wo(merged)
        if masking:
            alive = mask.any(axis=-1)
            if not alive.all():
                # rows with no attendable key collapse to the zero vector
                out = mul(out, Tensor(alive.astype(np.float32)[:, :, None]))
        return out


class FeedForward(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.inner = Linear(config.hidden_dim, config.feedforward_dim, rng)
        self.outer = Linear(config.feedforward_dim, config.hidden_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


class EncoderLayer(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(config, rng)
        self.ffn = FeedForward(config, rng)
        self.norm1 = LayerNorm(config.hidden_dim)
        self.norm2 = LayerNorm(config.hidden_dim)
        self.p_drop = config.dropout_rate

    def __call__(self, x: Tensor, mask: np.ndarray | None,
                 rng: np.random.Generator) -> Tensor:
        h = self.norm1(x)
        x = add(x, dropout(self.attn(h, h, h, mask), self.p_drop, rng, self.training))
        x = add(x, dropout(self.ffn(self.norm2(x)), self.p_drop, rng, self.training))
        return x


class Encoder(Module):
    """Stack of pre-norm encoder blocks over already-embedded inputs."""

    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.config = config
        self.layers = ModuleList(
            EncoderLayer(config, rng) for _ in range(config.num_layers)
        )
        self._rng = rng

    def __call__(self, x: Tensor, pad_mask: np.ndarray,
                 add_positional: bool = True) -> Tensor:
        b, t, d = x.shape
        if t > self.config.max_sequence_len:
            raise SequenceLengthError(
                f"sequence length {t} exceeds max {self.config.max_sequence_len}"
            )
        if add_positional:
            x = add(x, Tensor(sinusoidal_encoding(t, d)))
        # every query may attend every non-pad key
        mask = np.broadcast_to(pad_mask[:, None, :], (b, t, t))
        for layer in self.layers:
            x = layer(x, mask, self._rng)
        return x


class DecoderLayer(Module):
    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(config, rng)
        self.cross_attn = MultiHeadAttention(config, rng)
        self.ffn = FeedForward(config, rng)
        self.norm1 = LayerNorm(config.hidden_dim)
        self.norm2 = LayerNorm(config.hidden_dim)
        self.norm3 = LayerNorm(config.hidden_dim)
        self.p_drop = config.dropout_rate

    def __call__(self, x: Tensor, enc_out: Tensor, self_mask: np.ndarray,
                 cross_mask: np.ndarray, rng: np.random.Generator) -> Tensor:
        h = self.norm1(x)
        x = add(x, dropout(self.self_attn(h, h, h, self_mask),
                           self.p_drop, rng, self.training))
        h = self.norm2(x)
        x = add(x, dropout(self.cross_attn(h, enc_out, enc_out, cross_mask),
                           self.p_drop, rng, self.training))
        x = add(x, dropout(self.ffn(self.norm3(x)), self.p_drop, rng, self.training))
        return x


class Decoder(Module):
    """Causal decoder over token prefixes, cross-attending encoder output.

    ``embed`` may be shared with other components (the caption models share
    one word-embedding table between decoder inputs and attribute slots).
    """

    def __init__(self, config: TransformerConfig, embed: Embedding,
                 rng: np.random.Generator):
        self.config = config
        self.embed = embed
        self.layers = ModuleList(
            DecoderLayer(config, rng) for _ in range(config.num_layers)
        )
        self.out_proj = Linear(config.hidden_dim, config.vocab_size, rng)
        self._rng = rng

    def decode_all(self, prefix_ids: np.ndarray, enc_out: Tensor,
                   enc_pad_mask: np.ndarray) -> Tensor:
        """Teacher-forcing pass: logits for the token after each position."""
        b, tp = prefix_ids.shape
        if tp > self.config.max_sequence_len:
            raise SequenceLengthError(
                f"prefix length {tp} exceeds max {self.config.max_sequence_len}"
            )
        d = self.config.hidden_dim
        x = add(self.embed(prefix_ids), Tensor(sinusoidal_encoding(tp, d)))
        causal = np.tril(np.ones((tp, tp), dtype=bool))
        self_mask = np.broadcast_to(causal, (b, tp, tp))
        te = enc_out.shape[1]
        cross_mask = np.broadcast_to(enc_pad_mask[:, None, :], (b, tp, te))
        for layer in self.layers:
            x = layer(x, enc_out, self_mask, cross_mask, self._rng)
        return self.out_proj(x)

    def decode_step(self, prefix_ids: np.ndarray, enc_out: Tensor,
                    enc_pad_mask: np.ndarray) -> np.ndarray:
        """Next-token logits [batch, vocab] for a (non-full) prefix."""
        if prefix_ids.shape[1] >= self.config.max_sequence_len:
            raise GenerationComplete(
                f"prefix already at maximum length {self.config.max_sequence_len}"
            )
        logits = self.decode_all(prefix_ids, enc_out, enc_pad_mask)
        return logits.data[:, -1, :]


def parameter_count(module: Module) -> int:
    return sum(p.data.size for _, p in module.parameters())
