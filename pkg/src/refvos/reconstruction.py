"""Projection of grounded video features back into the sentence-embedding
space, plus the consensus head that scores whether the pair refers to a real
object, and the learned fusion of original and reconstructed embeddings.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import DecoderLayer


class EmbeddingReconstructor(nn.Module):
    """Transformer decoder with a single learned query attending into the
    grounded feature positions; outputs the reconstructed embedding."""

    def __init__(self, channels: int = 64, heads: int = 4, layers: int = 2):
        super().__init__()
        self.query = nn.Parameter(torch.randn(channels) * 0.02)
        self.layers = nn.ModuleList(DecoderLayer(channels, heads) for _ in range(layers))

    def forward(self, memory: torch.Tensor, memory_pos=None) -> torch.Tensor:
        """memory: (B, P, C) grounded tokens; memory_pos: (P, C) or (B, P, C)
        added to memory before attention. Returns (B, C)."""
        if memory_pos is not None:
            memory = memory + memory_pos
        x = self.query[None, None, :].expand(memory.shape[0], 1, -1)
        for layer in self.layers:
            x = layer(x, memory)
        return x[:, 0, :]


class ConsensusHead(nn.Module):
    """Two fully-connected layers over e concatenated with e'; the scalar
    output is the pre-sigmoid alignment logit for the whole video."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(2 * channels, channels)
        self.fc2 = nn.Linear(channels, 1)

    def forward(self, e: torch.Tensor, e_prime: torch.Tensor) -> torch.Tensor:
        """(B, C), (B, C) -> (B,) logits."""
        return self.fc2(torch.relu(self.fc1(torch.cat([e, e_prime], dim=-1))))[:, 0]


class EmbeddingFusion(nn.Module):
    """Learned linear fusion of e and e' down to the query width."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.fc = nn.Linear(2 * channels, channels)

    def forward(self, e: torch.Tensor, e_prime: torch.Tensor) -> torch.Tensor:
        return self.fc(torch.cat([e, e_prime], dim=-1))
