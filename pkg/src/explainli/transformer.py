"""Differentiable Transformer building blocks at the base configuration.

Encoder/decoder stacks follow the original post-norm layout, with learned
positional embeddings that restart at every segment boundary so a
concatenated premise+hypothesis pair fits inside the 25-position table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import torch
from torch import nn

from .corpus import PAD_ID

NEG_INF = float("-inf")


@dataclass
class ModelConfig:
    """Layer/width hyperparameters shared by every model family."""

    vocab_size: int
    layers: int = 6
    hidden: int = 512
    heads: int = 8
    ffn: int = 2048
    max_pos: int = 25
    dropout: float = 0.1
    latent_dim: int | None = None  # None means latent_dim == hidden

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def d_z(self) -> int:
        return self.hidden if self.latent_dim is None else self.latent_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def toy_config(vocab_size: int, **overrides) -> ModelConfig:
    """Laptop-scale profile: small widths, no dropout, same interfaces."""
    params = dict(
        vocab_size=vocab_size, layers=2, hidden=64, heads=2, ffn=256,
        max_pos=25, dropout=0.0,
    )
    params.update(overrides)
    return ModelConfig(**params)


@dataclass
class SequenceStates:
    """A batch of per-position vectors plus the mask of real (non-pad) tokens."""

    values: torch.Tensor  # [B, L, hidden]
    mask: torch.Tensor  # [B, L] bool, True = real token

    @property
    def length(self) -> int:
        return self.values.shape[1]


def segment_positions(length: int, segment_starts: Sequence[int], max_pos: int) -> list[int]:
    """Position indices 0.. restarting at each segment start.

    Raises if any segment exceeds the positional table.
    """
    starts = sorted(set(segment_starts) | {0})
    if any(s < 0 or s >= length for s in starts if length > 0):
        raise ValueError("segment start outside sequence")
    bounds = starts + [length]
    positions: list[int] = []
    for begin, end in zip(bounds, bounds[1:]):
        if end - begin > max_pos:
            raise ValueError(
                f"segment of length {end - begin} exceeds positional table ({max_pos})"
            )
        positions.extend(range(end - begin))
    return positions


def single_segment_positions(ids: torch.Tensor, max_pos: int) -> torch.Tensor:
    """[B, L] position ids 0..L-1 per row; rejects sequences beyond the table."""
    length = ids.shape[1]
    if length > max_pos:
        raise ValueError(f"sequence length {length} exceeds positional table ({max_pos})")
    return torch.arange(length, device=ids.device).expand(ids.shape[0], length)


def concat_pair(
    first: torch.Tensor,
    first_mask: torch.Tensor,
    second: torch.Tensor,
    second_mask: torch.Tensor,
    max_pos: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Concatenate two padded id matrices row-wise, pads pushed to the end.

    Returns (ids, mask, positions) where positions restart at the second
    segment so both halves index the same positional table.
    """
    batch = first.shape[0]
    len1 = first_mask.sum(dim=1)
    len2 = second_mask.sum(dim=1)
    if int(len1.max()) > max_pos or int(len2.max()) > max_pos:
        raise ValueError("segment exceeds positional table")
    total = len1 + len2
    width = int(total.max())
    ids = torch.full((batch, width), PAD_ID, dtype=first.dtype)
    positions = torch.zeros((batch, width), dtype=torch.long)
    for i in range(batch):
        l1, l2 = int(len1[i]), int(len2[i])
        ids[i, :l1] = first[i, :l1]
        ids[i, l1 : l1 + l2] = second[i, :l2]
        positions[i, :l1] = torch.arange(l1)
        positions[i, l1 : l1 + l2] = torch.arange(l2)
    return ids, ids.ne(PAD_ID), positions


class TokenEmbedding(nn.Module):
    """Token embedding scaled by sqrt(hidden) plus a learned positional table."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.tokens = nn.Embedding(config.vocab_size, config.hidden)
        self.positions = nn.Embedding(config.max_pos, config.hidden)
        self.scale = math.sqrt(config.hidden)
        self.dropout = nn.Dropout(config.dropout)
        self.max_pos = config.max_pos

    def forward(self, ids: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        if positions is None:
            positions = single_segment_positions(ids, self.max_pos)
        if int(positions.max()) >= self.max_pos:
            raise ValueError("position index outside positional table")
        out = self.tokens(ids) * self.scale + self.positions(positions)
        return self.dropout(out)


def attention_mask(
    key_mask: torch.Tensor, causal: bool = False, query_len: int | None = None
) -> torch.Tensor:
    """Additive attention mask [B, 1, Lq, Lk]: 0 where allowed, -inf elsewhere."""
    batch, key_len = key_mask.shape
    query_len = key_len if query_len is None else query_len
    allowed = key_mask[:, None, None, :].expand(batch, 1, query_len, key_len)
    if causal:
        tri = torch.ones(query_len, key_len, dtype=torch.bool).tril()
        allowed = allowed & tri[None, None, :, :]
    mask = torch.zeros(allowed.shape, dtype=torch.get_default_dtype())
    return mask.masked_fill(~allowed, NEG_INF)


class MultiHeadAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.d_head = hidden // heads
        self.q_proj = nn.Linear(hidden, hidden)
        self.k_proj = nn.Linear(hidden, hidden)
        self.v_proj = nn.Linear(hidden, hidden)
        self.out_proj = nn.Linear(hidden, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        batch, q_len, hidden = query.shape
        k_len = key.shape[1]

        def split(x: torch.Tensor, length: int) -> torch.Tensor:
            return x.view(batch, length, self.heads, self.d_head).transpose(1, 2)

        q = split(self.q_proj(query), q_len)
        k = split(self.k_proj(key), k_len)
        v = split(self.v_proj(value), k_len)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores + mask.to(scores.dtype)
        weights = self.dropout(torch.softmax(scores, dim=-1))
        mixed = (weights @ v).transpose(1, 2).reshape(batch, q_len, hidden)
        return self.out_proj(mixed)


class FeedForward(nn.Module):
    def __init__(self, hidden: int, ffn: int, dropout: float):
        super().__init__()
        self.inner = nn.Linear(hidden, ffn)
        self.outer = nn.Linear(ffn, hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(torch.relu(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(config.hidden, config.heads, config.dropout)
        self.ffn = FeedForward(config.hidden, config.ffn, config.dropout)
        self.norm1 = nn.LayerNorm(config.hidden)
        self.norm2 = nn.LayerNorm(config.hidden)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, x, x, mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class Encoder(nn.Module):
    """Post-norm encoder stack; a zero-layer stack is the identity."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.layers))

    def forward(self, states: SequenceStates) -> SequenceStates:
        mask = attention_mask(states.mask)
        x = states.values
        for layer in self.layers:
            x = layer(x, mask)
        return SequenceStates(values=x, mask=states.mask)


class DecoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.hidden, config.heads, config.dropout)
        self.cross_attn = MultiHeadAttention(config.hidden, config.heads, config.dropout)
        self.ffn = FeedForward(config.hidden, config.ffn, config.dropout)
        self.norm1 = nn.LayerNorm(config.hidden)
        self.norm2 = nn.LayerNorm(config.hidden)
        self.norm3 = nn.LayerNorm(config.hidden)
        self.dropout = nn.Dropout(config.dropout)

    def forward(
        self,
        x: torch.Tensor,
        self_mask: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, self_mask)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory, memory_mask)))
        return self.norm3(x + self.dropout(self.ffn(x)))


class Decoder(nn.Module):
    """Causal post-norm decoder stack with cross-attention over a memory."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.layers))

    def forward(self, prefix: SequenceStates, memory: SequenceStates) -> torch.Tensor:
        self_mask = attention_mask(prefix.mask, causal=True)
        memory_mask = attention_mask(memory.mask, query_len=prefix.length)
        x = prefix.values
        for layer in self.layers:
            x = layer(x, self_mask, memory.values, memory_mask)
        return x


def init_parameters(module: nn.Module, seed: int | None = None) -> None:
    """Xavier-uniform projections, N(0, 0.02) embeddings, zero biases."""
    if seed is not None:
        torch.manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, mean=0.0, std=0.02)
        elif isinstance(m, nn.Conv1d):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)


def count_params(model: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Closed-form parameter accounting, used as an independent check on the
# implementation and by the `params` CLI subcommand.
# ---------------------------------------------------------------------------

def embedding_param_count(config: ModelConfig) -> int:
    return config.vocab_size * config.hidden + config.max_pos * config.hidden


def attention_param_count(hidden: int) -> int:
    return 4 * (hidden * hidden + hidden)


def ffn_param_count(hidden: int, ffn: int) -> int:
    return hidden * ffn + ffn + ffn * hidden + hidden


def layer_norm_param_count(hidden: int) -> int:
    return 2 * hidden


def encoder_layer_param_count(config: ModelConfig) -> int:
    return (
        attention_param_count(config.hidden)
        + ffn_param_count(config.hidden, config.ffn)
        + 2 * layer_norm_param_count(config.hidden)
    )


def decoder_layer_param_count(config: ModelConfig) -> int:
    return (
        2 * attention_param_count(config.hidden)
        + ffn_param_count(config.hidden, config.ffn)
        + 3 * layer_norm_param_count(config.hidden)
    )


def encoder_stack_param_count(config: ModelConfig) -> int:
    return config.layers * encoder_layer_param_count(config)


def decoder_stack_param_count(config: ModelConfig) -> int:
    return config.layers * decoder_layer_param_count(config)


def affine_param_count(in_dim: int, out_dim: int) -> int:
    return in_dim * out_dim + out_dim
