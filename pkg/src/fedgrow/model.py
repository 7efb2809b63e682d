"""Growable Pre-LN encoder/decoder sequence-to-sequence model.

The encoder turns a token sequence into a memory; the decoder turns shifted
target frames plus that memory into predicted frames (teacher forcing). Both
stacks start shallow and grow in lockstep by appending freshly initialized
blocks at the top, which never touches existing weights.

Every sublayer is pre-normalized, ``x + Sublayer(LN(x))``, with one extra
normalization after the last block of each stack before prediction. Block
projection weights use equalized runtime scaling (see optim.Param).

Block initialization is a pure function of (model seed, tensor name), so a
block added by growth is bit-identical to the same block of a model built
deep from the start with the same seed.

A model instance is single-writer: concurrent read-only forward passes are
safe, but ``grow`` and optimizer steps need exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, DimensionError, GrowthCapError
from .optim import EQUALIZED, PLAIN, Param
from .rng import init_normal, subseed
from .tensor import (
    Tensor,
    add,
    embedding,
    layer_norm,
    masked_mse,
    matmul,
    merge_heads,
    mse,
    no_grad,
    relu,
    scaled_dot_attention,
    split_heads,
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; target_layers must divide by growth_parts."""

    vocab_size: int
    frame_dim: int
    d_model: int
    heads: int
    ffn_dim: int
    target_layers: int
    growth_parts: int
    max_seq_len: int
    # Literal reading of "divide by the scaling constant": multiplies raw
    # weights by 1/sqrt(2/fan_in) instead of sqrt(2/fan_in).
    literal_scaling_division: bool = False

    def __post_init__(self):
        for name in (
            "vocab_size",
            "frame_dim",
            "d_model",
            "heads",
            "ffn_dim",
            "target_layers",
            "growth_parts",
            "max_seq_len",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {getattr(self, name)}")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"model.d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.target_layers % self.growth_parts != 0:
            raise ConfigError(
                f"model.target_layers={self.target_layers} is not divisible by "
                f"growth_parts={self.growth_parts}"
            )

    @property
    def layers_per_growth(self) -> int:
        return self.target_layers // self.growth_parts


def sinusoid_table(length: int, width: int) -> np.ndarray:
    """Fixed sinusoidal position table [length, width]; non-trainable."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / width)
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def shift_right(frames: np.ndarray) -> np.ndarray:
    """Prepend a zero frame and drop the last: decoder input for teacher forcing."""
    b, f, d = frames.shape
    out = np.zeros_like(frames)
    out[:, 1:, :] = frames[:, : f - 1, :]
    return out


class _Linear:
    def __init__(self, name: str, d_in: int, d_out: int, seed: int):
        self.w = Param(
            f"{name}.w",
            init_normal((d_in, d_out), subseed(seed, f"{name}.w")),
            fan_in=d_in,
            scaling=EQUALIZED,
        )
        self.b = Param(f"{name}.b", np.zeros(d_out), scaling=PLAIN)

    def __call__(self, x: Tensor, literal: bool) -> Tensor:
        return add(matmul(x, self.w.effective(literal)), self.b.raw)

    def params(self) -> list[Param]:
        return [self.w, self.b]


class _LayerNorm:
    def __init__(self, name: str, d: int):
        self.gamma = Param(f"{name}.gamma", np.ones(d), scaling=PLAIN)
        self.beta = Param(f"{name}.beta", np.zeros(d), scaling=PLAIN)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma.raw, self.beta.raw)

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


class _MultiHeadAttention:
    def __init__(self, name: str, d_model: int, heads: int, seed: int):
        self.heads = heads
        self.q = _Linear(f"{name}.q", d_model, d_model, seed)
        self.k = _Linear(f"{name}.k", d_model, d_model, seed)
        self.v = _Linear(f"{name}.v", d_model, d_model, seed)
        self.out = _Linear(f"{name}.out", d_model, d_model, seed)

    def __call__(
        self, q_in: Tensor, kv_in: Tensor, mask: Optional[np.ndarray], literal: bool
    ) -> Tensor:
        q = split_heads(self.q(q_in, literal), self.heads)
        k = split_heads(self.k(kv_in, literal), self.heads)
        v = split_heads(self.v(kv_in, literal), self.heads)
        ctx = scaled_dot_attention(q, k, v, mask)
        return self.out(merge_heads(ctx), literal)

    def params(self) -> list[Param]:
        return self.q.params() + self.k.params() + self.v.params() + self.out.params()


class EncoderBlock:
    """Pre-LN self-attention + feed-forward with identity residual paths."""

    def __init__(self, name: str, config: ModelConfig, seed: int):
        d, f = config.d_model, config.ffn_dim
        self.ln1 = _LayerNorm(f"{name}.ln1", d)
        self.attn = _MultiHeadAttention(f"{name}.attn", d, config.heads, seed)
        self.ln2 = _LayerNorm(f"{name}.ln2", d)
        self.ffn1 = _Linear(f"{name}.ffn1", d, f, seed)
        self.ffn2 = _Linear(f"{name}.ffn2", f, d, seed)

    def __call__(self, x: Tensor, pad_mask: Optional[np.ndarray], literal: bool) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h, pad_mask, literal))
        h = self.ln2(x)
        x = add(x, self.ffn2(relu(self.ffn1(h, literal)), literal))
        return x

    def params(self) -> list[Param]:
        return (
            self.ln1.params()
            + self.attn.params()
            + self.ln2.params()
            + self.ffn1.params()
            + self.ffn2.params()
        )


class DecoderBlock:
    """Pre-LN causal self-attention, cross-attention over the memory, feed-forward."""

    def __init__(self, name: str, config: ModelConfig, seed: int):
        d, f = config.d_model, config.ffn_dim
        self.ln1 = _LayerNorm(f"{name}.ln1", d)
        self.self_attn = _MultiHeadAttention(f"{name}.self", d, config.heads, seed)
        self.ln2 = _LayerNorm(f"{name}.ln2", d)
        self.cross_attn = _MultiHeadAttention(f"{name}.cross", d, config.heads, seed)
        self.ln3 = _LayerNorm(f"{name}.ln3", d)
        self.ffn1 = _Linear(f"{name}.ffn1", d, f, seed)
        self.ffn2 = _Linear(f"{name}.ffn2", f, d, seed)

    def __call__(
        self,
        x: Tensor,
        causal_mask: np.ndarray,
        memory: Tensor,
        mem_pad_mask: Optional[np.ndarray],
        literal: bool,
    ) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.self_attn(h, h, causal_mask, literal))
        h = self.ln2(x)
        x = add(x, self.cross_attn(h, memory, mem_pad_mask, literal))
        h = self.ln3(x)
        x = add(x, self.ffn2(relu(self.ffn1(h, literal)), literal))
        return x

    def params(self) -> list[Param]:
        return (
            self.ln1.params()
            + self.self_attn.params()
            + self.ln2.params()
            + self.cross_attn.params()
            + self.ln3.params()
            + self.ffn1.params()
            + self.ffn2.params()
        )


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal: position j may attend to keys <= j only."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def padding_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """[B, 1, 1, width] boolean; True marks padded key positions."""
    cols = np.arange(width)[None, :]
    blocked = cols >= np.asarray(lengths)[:, None]
    return blocked[:, None, None, :]


class DynamicTransformer:
    """Growable encoder/decoder seq2seq model mapping tokens to frames."""

    def __init__(self, config: ModelConfig, seed: int, depth: Optional[int] = None):
        if depth is None:
            depth = config.layers_per_growth
        if depth < 1 or depth > config.target_layers:
            raise ConfigError(f"initial depth {depth} outside 1..{config.target_layers}")
        self.config = config
        self.seed = seed
        d = config.d_model
        self.embed = Param(
            "text_prenet.embed",
            init_normal((config.vocab_size, d), subseed(seed, "text_prenet.embed")),
            scaling=PLAIN,
        )
        self.text_proj = _Linear("text_prenet.proj", d, d, seed)
        self.mel_fc1 = _Linear("mel_prenet.fc1", config.frame_dim, d, seed)
        self.mel_fc2 = _Linear("mel_prenet.fc2", d, d, seed)
        self.mel_fc3 = _Linear("mel_prenet.fc3", d, d, seed)
        self.final_norm_enc = _LayerNorm("final_norm_enc", d)
        self.final_norm_dec = _LayerNorm("final_norm_dec", d)
        self.head = _Linear("head", d, config.frame_dim, seed)
        self.pos = sinusoid_table(config.max_seq_len, d)
        self.enc_blocks: list[EncoderBlock] = []
        self.dec_blocks: list[DecoderBlock] = []
        for _ in range(depth):
            self._append_block()

    @property
    def depth(self) -> int:
        return len(self.enc_blocks)

    def _append_block(self) -> None:
        idx = len(self.enc_blocks)
        self.enc_blocks.append(EncoderBlock(f"enc.{idx}", self.config, self.seed))
        self.dec_blocks.append(DecoderBlock(f"dec.{idx}", self.config, self.seed))

    def grow(self, layers: Optional[int] = None) -> None:
        """Append freshly initialized blocks at the top of both stacks.

        Existing tensors (weights and Adam moments) are untouched; new blocks
        come from the model's deterministic seed stream with zero moments.
        """
        q = self.config.layers_per_growth if layers is None else layers
        if q < 1:
            raise GrowthCapError(f"grow: layer count must be positive, got {q}")
        if self.depth + q > self.config.target_layers:
            raise GrowthCapError(
                f"grow: depth {self.depth} + {q} exceeds target {self.config.target_layers}"
            )
        for _ in range(q):
            self._append_block()

    # -- parameter bookkeeping ------------------------------------------------

    def fixed_params(self) -> list[Param]:
        """Everything outside the growable blocks (positions excluded: not trainable)."""
        out = [self.embed]
        out += self.text_proj.params()
        out += self.mel_fc1.params() + self.mel_fc2.params() + self.mel_fc3.params()
        out += self.final_norm_enc.params() + self.final_norm_dec.params()
        out += self.head.params()
        return out

    def block_params(self) -> list[Param]:
        out: list[Param] = []
        for blk in self.enc_blocks:
            out += blk.params()
        for blk in self.dec_blocks:
            out += blk.params()
        return out

    def parameters(self) -> list[Param]:
        return self.fixed_params() + self.block_params()

    def param_count(self) -> dict[str, int]:
        per_enc = sum(p.raw.data.size for p in self.enc_blocks[0].params())
        per_dec = sum(p.raw.data.size for p in self.dec_blocks[0].params())
        return {
            "block_params": self.depth * (per_enc + per_dec),
            "fixed_params": sum(p.raw.data.size for p in self.fixed_params()),
            "per_enc_block": per_enc,
            "per_dec_block": per_dec,
        }

    # -- forward paths ---------------------------------------------------------

    def _validate_inputs(self, tokens: np.ndarray, frames: np.ndarray) -> None:
        cfg = self.config
        if tokens.ndim != 2:
            raise DataError(f"tokens must be [B, S], got shape {tokens.shape}")
        if frames.ndim != 3 or frames.shape[-1] != cfg.frame_dim:
            raise DimensionError(
                f"target frames must be [B, F, {cfg.frame_dim}], got shape {frames.shape}"
            )
        if tokens.shape[0] != frames.shape[0]:
            raise DimensionError(
                f"batch mismatch: {tokens.shape[0]} token rows vs {frames.shape[0]} frame rows"
            )
        if frames.shape[1] < 1:
            raise DataError("target frames must contain at least one frame")
        if tokens.shape[1] > cfg.max_seq_len or frames.shape[1] > cfg.max_seq_len:
            raise DataError(
                f"sequence longer than max_seq_len={cfg.max_seq_len}: "
                f"tokens {tokens.shape[1]}, frames {frames.shape[1]}"
            )
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
            raise DataError(f"token id outside 0..{cfg.vocab_size - 1}")

    def encode(
        self,
        tokens: np.ndarray,
        token_lengths: Optional[np.ndarray] = None,
        depth: Optional[int] = None,
    ) -> tuple[Tensor, Optional[np.ndarray]]:
        literal = self.config.literal_scaling_division
        s = tokens.shape[1]
        pad = None if token_lengths is None else padding_mask(token_lengths, s)
        x = embedding(self.embed.raw, tokens)
        x = self.text_proj(x, literal)
        x = add(x, Tensor(self.pos[:s]))
        for blk in self.enc_blocks[: self.depth if depth is None else depth]:
            x = blk(x, pad, literal)
        return self.final_norm_enc(x), pad

    def decode(
        self,
        memory: Tensor,
        mem_pad: Optional[np.ndarray],
        target_frames: np.ndarray,
        depth: Optional[int] = None,
    ) -> Tensor:
        literal = self.config.literal_scaling_division
        f = target_frames.shape[1]
        y = Tensor(shift_right(np.asarray(target_frames, dtype=np.float64)))
        y = self.mel_fc1(y, literal)
        y = relu(y)
        y = self.mel_fc2(y, literal)
        y = relu(y)
        y = self.mel_fc3(y, literal)
        y = add(y, Tensor(self.pos[:f]))
        cmask = causal_mask(f)
        for blk in self.dec_blocks[: self.depth if depth is None else depth]:
            y = blk(y, cmask, memory, mem_pad, literal)
        y = self.final_norm_dec(y)
        return self.head(y, literal)

    def forward(
        self,
        tokens: np.ndarray,
        target_frames: np.ndarray,
        token_lengths: Optional[np.ndarray] = None,
        depth: Optional[int] = None,
    ) -> Tensor:
        """Teacher-forced pass: predicted frames, same shape as the targets.

        ``depth`` restricts both stacks to their first blocks; used by growth
        checks to evaluate the pre-existing model in isolation.
        """
        tokens = np.asarray(tokens)
        target_frames = np.asarray(target_frames, dtype=np.float64)
        self._validate_inputs(tokens, target_frames)
        memory, pad = self.encode(tokens, token_lengths, depth)
        return self.decode(memory, pad, target_frames, depth)

    def infer(
        self,
        tokens: np.ndarray,
        n_frames: int,
        token_lengths: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Greedy autoregressive decoding from a zero start frame.

        Emits exactly ``n_frames``; there is no stop token.
        """
        if n_frames < 1:
            raise DataError(f"infer: n_frames must be >= 1, got {n_frames}")
        tokens = np.asarray(tokens)
        b = tokens.shape[0]
        fd = self.config.frame_dim
        with no_grad():
            memory, pad = self.encode(tokens, token_lengths)
            out = np.zeros((b, 0, fd), dtype=np.float64)
            for _ in range(n_frames):
                probe = np.concatenate([out, np.zeros((b, 1, fd))], axis=1)
                pred = self.decode(memory, pad, probe)
                out = np.concatenate([out, pred.data[:, -1:, :]], axis=1)
        return out


def new_model(config: ModelConfig, seed: int, depth: Optional[int] = None) -> DynamicTransformer:
    """Fresh model at the given depth (default: target_layers / growth_parts)."""
    return DynamicTransformer(config, seed, depth)


def loss(pred: Tensor, target) -> Tensor:
    """Training loss: mean squared error over all elements."""
    return mse(pred, target)


def batch_loss(model: DynamicTransformer, tokens, frames, token_lengths, frame_lengths) -> Tensor:
    """Teacher-forced masked MSE for a padded batch."""
    pred = model.forward(tokens, frames, token_lengths)
    valid = np.arange(frames.shape[1])[None, :] < np.asarray(frame_lengths)[:, None]
    return masked_mse(pred, frames, valid)
