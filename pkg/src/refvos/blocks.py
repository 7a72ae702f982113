"""Shared transformer building blocks.

All modules use batch-first token layout (B, N, C). Attention is the plain
scaled-dot-product kind with explicit query/key/value/output projections so
tests can pin weights by hand.
"""

from __future__ import annotations

import math
from functools import lru_cache

import torch
from torch import nn


class MultiheadCrossAttention(nn.Module):
    """Attention(W_q X, W_k Y, W_v Y) with an output projection.

    Self-attention is the Y=X special case.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query, key_value, key_padding_mask=None, need_weights=False):
        """query (B, Nq, C), key_value (B, Nk, C),
        key_padding_mask (B, Nk) bool with True marking padded keys."""
        B, Nq, _ = query.shape
        Nk = key_value.shape[1]
        head_dim = self.dim // self.heads

        def split(x, n):
            return x.view(B, n, self.heads, head_dim).transpose(1, 2)

        q = split(self.q_proj(query), Nq)
        k = split(self.k_proj(key_value), Nk)
        v = split(self.v_proj(key_value), Nk)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        if key_padding_mask is not None:
            scores = scores.masked_fill(
                key_padding_mask[:, None, None, :], float("-inf")
            )
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, Nq, self.dim)
        out = self.out_proj(out)
        if need_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    """Two-layer MLP with a 4x hidden expansion."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Post-norm self-attention block: LN(attn(x)+x) then LN(ffn(.)+.)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.attn = MultiheadCrossAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x, key_padding_mask=None):
        x = self.norm1(self.attn(x, x, key_padding_mask) + x)
        return self.norm2(self.ffn(x) + x)


class DecoderLayer(nn.Module):
    """Query self-attention, cross-attention into memory, then FFN."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.self_attn = MultiheadCrossAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_attn = MultiheadCrossAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, queries, memory, memory_key_padding_mask=None):
        x = self.norm1(self.self_attn(queries, queries) + queries)
        x = self.norm2(self.cross_attn(x, memory, memory_key_padding_mask) + x)
        return self.norm3(self.ffn(x) + x)


@lru_cache(maxsize=64)
def _sinusoid_table(length: int, dim: int) -> torch.Tensor:
    """(length, dim) fixed sinusoidal table in float64."""
    position = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)
    return table


def position_encoding_1d(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    return _sinusoid_table(length, dim).to(dtype)


@lru_cache(maxsize=64)
def _grid_table(height: int, width: int, dim: int) -> torch.Tensor:
    """(height*width, dim) 2-D sinusoidal encoding, half for rows, half for
    columns, flattened row-major."""
    if dim % 4 != 0:
        raise ValueError(f"2-D position encoding needs dim % 4 == 0, got {dim}")
    row = _sinusoid_table(height, dim // 2)
    col = _sinusoid_table(width, dim // 2)
    grid = torch.cat(
        [
            row[:, None, :].expand(height, width, dim // 2),
            col[None, :, :].expand(height, width, dim // 2),
        ],
        dim=-1,
    )
    return grid.reshape(height * width, dim)


def position_encoding_2d(height: int, width: int, dim: int, dtype=torch.float32):
    return _grid_table(height, width, dim).to(dtype)


def position_encoding_video(window: int, height: int, width: int, dim: int, dtype=torch.float32):
    """(window*height*width, dim): spatial 2-D table plus a temporal term."""
    spatial = _grid_table(height, width, dim)
    temporal = _sinusoid_table(window, dim)
    pos = spatial[None, :, :] + temporal[:, None, :]
    return pos.reshape(window * height * width, dim).to(dtype)
