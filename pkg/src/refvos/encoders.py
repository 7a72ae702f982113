"""Single-modal feature extraction.

The visual side is a 3-stage strided conv backbone followed by a small
self-attention encoder on a further-downsampled scale; every frame is
processed independently (no temporal mixing). The textual side is an
embedding table plus one self-attention layer; the sentence embedding is the
masked mean of word features through a learned linear map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import EncoderLayer, position_encoding_1d, position_encoding_2d
from .errors import DataError, ShapeMismatchError


@dataclass
class VisualFeatures:
    """f: backbone map (B, T, C, H/8, W/8).
    pyramid: [(B, T, C, H/8, W/8), (B, T, C, H/16, W/16)] attention-encoded maps.
    skips: [(B, T, 16, H/2, W/2), (B, T, 32, H/4, W/4)] for the mask decoder.
    """

    f: torch.Tensor
    pyramid: list
    skips: list


def _norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class VisualEncoder(nn.Module):
    def __init__(self, channels: int = 64, heads: int = 4, enc_layers: int = 2):
        super().__init__()
        self.channels = channels
        self.backbone = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            _norm(16),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            _norm(32),
            nn.ReLU(),
            nn.Conv2d(32, channels, 3, stride=2, padding=1),
            _norm(channels),
            nn.ReLU(),
        )
        self.fine_proj = nn.Conv2d(channels, channels, 1)
        self.down = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.layers = nn.ModuleList(EncoderLayer(channels, heads) for _ in range(enc_layers))

    def forward(self, frames: torch.Tensor) -> VisualFeatures:
        """frames: (B, T, 3, H, W) with H, W divisible by 16."""
        if frames.ndim != 5 or frames.shape[2] != 3:
            raise ShapeMismatchError(f"expected (B, T, 3, H, W), got {tuple(frames.shape)}")
        B, T, _, H, W = frames.shape
        if H % 16 or W % 16:
            raise ShapeMismatchError(f"frame size {H}x{W} not divisible by 16")
        flat = frames.reshape(B * T, 3, H, W)
        feats = []
        x = flat
        for stage in self.backbone:
            x = stage(x)
            if isinstance(stage, nn.ReLU):
                feats.append(x)
        s1, s2, f = feats  # H/2, H/4, H/8
        fine = self.fine_proj(f)
        coarse = self.down(f)
        h2, w2 = coarse.shape[-2:]
        tokens = coarse.flatten(2).transpose(1, 2)  # (B*T, h2*w2, C)
        tokens = tokens + position_encoding_2d(h2, w2, self.channels, tokens.dtype)
        for layer in self.layers:
            tokens = layer(tokens)
        coarse = tokens.transpose(1, 2).reshape(B * T, self.channels, h2, w2)

        def unfold(x):
            return x.reshape(B, T, *x.shape[1:])

        return VisualFeatures(
            f=unfold(f),
            pyramid=[unfold(fine), unfold(coarse)],
            skips=[unfold(s1), unfold(s2)],
        )


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, channels: int = 64, heads: int = 4):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, channels, padding_idx=0)
        self.layer = EncoderLayer(channels, heads)
        self.sentence_proj = nn.Linear(channels, channels)

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor):
        """tokens: (B, L) int ids; pad_mask: (B, L) bool, True where padded.

        Returns word features g (B, L, C) and sentence embeddings e (B, C).
        """
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise DataError(
                f"token id out of vocabulary [0, {self.vocab_size}): "
                f"{int(tokens.min())}..{int(tokens.max())}"
            )
        valid = ~pad_mask
        if (valid.sum(dim=1) == 0).any():
            raise DataError("expression with no non-padding tokens")
        L = tokens.shape[1]
        x = self.embed(tokens)
        x = x + position_encoding_1d(L, x.shape[-1], x.dtype)
        g = self.layer(x, key_padding_mask=pad_mask)
        counts = valid.sum(dim=1, keepdim=True).to(g.dtype)
        mean = (g * valid[:, :, None].to(g.dtype)).sum(dim=1) / counts
        return g, self.sentence_proj(mean)
