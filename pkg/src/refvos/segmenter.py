"""Instance-query mask decoding: per-frame transformer decoding of N query
slots, dynamic-kernel mask prediction against a full-resolution fused feature
map, box/score heads, and the confidence/consensus gate applied at inference.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import DecoderLayer, position_encoding_2d


def _norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class InstanceDecoder(nn.Module):
    """Frame-shared decoder: queries start from the fused text embedding plus
    learned slot offsets and cross-attend into both pyramid scales."""

    def __init__(self, channels: int = 64, heads: int = 4, layers: int = 2, queries: int = 5):
        super().__init__()
        self.channels = channels
        self.queries = queries
        self.slot_embed = nn.Parameter(torch.randn(queries, channels) * 0.02)
        self.level_embed = nn.Parameter(torch.randn(2, channels) * 0.02)
        self.layers = nn.ModuleList(DecoderLayer(channels, heads) for _ in range(layers))

    def build_queries(self, fused: torch.Tensor) -> torch.Tensor:
        """(B, C) -> (B, N, C): repeat plus per-slot offsets."""
        return fused[:, None, :] + self.slot_embed[None, :, :]

    def frame_memory(self, pyramid) -> torch.Tensor:
        """Flatten both scales into per-frame tokens (B, T, S, C) with 2-D
        position and scale embeddings."""
        tokens = []
        for level, feat in enumerate(pyramid):
            B, T, C, h, w = feat.shape
            tok = feat.flatten(3).transpose(2, 3)  # (B, T, h*w, C)
            tok = tok + position_encoding_2d(h, w, C, tok.dtype)
            tok = tok + self.level_embed[level]
            tokens.append(tok)
        return torch.cat(tokens, dim=2)

    def forward(self, pyramid, fused: torch.Tensor) -> torch.Tensor:
        """Returns instance embeddings (B, T, N, C)."""
        memory = self.frame_memory(pyramid)
        B, T, S, C = memory.shape
        memory = memory.reshape(B * T, S, C)
        queries = self.build_queries(fused)
        queries = queries[:, None, :, :].expand(B, T, self.queries, C).reshape(B * T, self.queries, C)
        x = queries
        for layer in self.layers:
            x = layer(x, memory)
        return x.reshape(B, T, self.queries, C)


class FeaturePyramidDecoder(nn.Module):
    """Two skip merges (H/4, H/2) on the fine encoder scale, then a final
    upsample to full resolution; output keeps the shared channel width."""

    def __init__(self, channels: int = 64, width: int = 32):
        super().__init__()
        self.lateral_fine = nn.Conv2d(channels, width, 1)
        self.lateral_s2 = nn.Conv2d(32, width, 1)
        self.lateral_s1 = nn.Conv2d(16, width, 1)
        self.conv1 = nn.Sequential(nn.Conv2d(width, width, 3, padding=1), _norm(width), nn.ReLU())
        self.conv2 = nn.Sequential(nn.Conv2d(width, width, 3, padding=1), _norm(width), nn.ReLU())
        self.out = nn.Conv2d(width, channels, 1)

    def forward(self, fine: torch.Tensor, skips) -> torch.Tensor:
        """fine (B, T, C, H/8, W/8), skips [(B, T, 16, H/2, .), (B, T, 32, H/4, .)]
        -> f_out (B, T, C, H, W)."""
        B, T = fine.shape[:2]

        def fold(x):
            return x.reshape(B * T, *x.shape[2:])

        def up(x):
            return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

        s1, s2 = fold(skips[0]), fold(skips[1])
        x = self.lateral_fine(fold(fine))
        x = self.conv1(up(x) + self.lateral_s2(s2))
        x = self.conv2(up(x) + self.lateral_s1(s1))
        x = up(self.out(x))
        return x.reshape(B, T, *x.shape[1:])


class MaskHead(nn.Module):
    """Per-slot dynamic kernels from instance embeddings; mask logits are the
    per-pixel inner product with the fused feature map."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.kernel = nn.Linear(channels, channels)

    def forward(self, z: torch.Tensor, f_out: torch.Tensor) -> torch.Tensor:
        """z (B, T, N, C), f_out (B, T, C, H, W) -> logits (B, T, N, H, W)."""
        w = self.kernel(z)
        return torch.einsum("btnc,btchw->btnhw", w, f_out)


class BoxScoreHead(nn.Module):
    """Two-layer MLPs for normalized (cx, cy, w, h) boxes and confidence logits."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.box = nn.Sequential(nn.Linear(channels, channels), nn.ReLU(), nn.Linear(channels, 4))
        self.score = nn.Sequential(nn.Linear(channels, channels), nn.ReLU(), nn.Linear(channels, 1))

    def forward(self, z: torch.Tensor):
        """z (B, T, N, C) -> boxes (B, T, N, 4) in [0,1], scores (B, T, N)."""
        return torch.sigmoid(self.box(z)), self.score(z)[..., 0]


def select_slot(scores: torch.Tensor) -> int:
    """Highest summed-over-frames confidence; ties take the lowest index.

    scores: (T, N)."""
    totals = scores.sum(dim=0)
    return int(torch.argmax(totals).item())


def select_and_gate(mask_logits: torch.Tensor, scores: torch.Tensor, gate_open: bool):
    """Pick the best slot and binarize its masks; a closed gate empties every
    frame. mask_logits (T, N, H, W), scores (T, N) -> ((T, H, W) bool, slot)."""
    slot = select_slot(scores)
    if not gate_open:
        empty = torch.zeros(
            mask_logits.shape[0], *mask_logits.shape[2:], dtype=torch.bool,
            device=mask_logits.device,
        )
        return empty, slot
    return mask_logits[:, slot] > 0, slot
