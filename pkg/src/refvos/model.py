"""Full model: encoders, early grounding, embedding reconstruction, the
consensus head, and the instance-query segmenter, wired end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import position_encoding_video
from .config import RunConfig
from .data import VOCAB
from .encoders import TextEncoder, VisualEncoder
from .errors import ConfigError
from .grounding import EarlyGrounding
from .reconstruction import ConsensusHead, EmbeddingFusion, EmbeddingReconstructor
from .segmenter import BoxScoreHead, FeaturePyramidDecoder, InstanceDecoder, MaskHead


@dataclass
class ModelConfig:
    channels: int = 64
    heads: int = 4
    kernels: int = 4
    queries: int = 5
    enc_layers: int = 2
    dec_layers: int = 2
    text_dec_layers: int = 2
    pyramid_channels: int = 32
    vocab_size: int = len(VOCAB)

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "ModelConfig":
        mc = cls(
            channels=cfg["model.channels"],
            heads=cfg["model.heads"],
            kernels=cfg["model.kernels"],
            queries=cfg["model.queries"],
            enc_layers=cfg["model.enc_layers"],
            dec_layers=cfg["model.dec_layers"],
            text_dec_layers=cfg["model.text_dec_layers"],
            pyramid_channels=cfg["model.pyramid_channels"],
        )
        mc.validate()
        return mc

    def validate(self) -> None:
        if self.channels % self.heads:
            raise ConfigError("model.channels must be divisible by model.heads")
        if self.channels % 4:
            raise ConfigError("model.channels must be divisible by 4")
        if self.pyramid_channels % 4:
            raise ConfigError("model.pyramid_channels must be divisible by 4")
        if min(self.kernels, self.queries, self.enc_layers, self.dec_layers, self.text_dec_layers) < 1:
            raise ConfigError("model sizes must be >= 1")


class RefVosModel(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        C = cfg.channels
        self.visual = VisualEncoder(C, cfg.heads, cfg.enc_layers)
        self.text = TextEncoder(cfg.vocab_size, C, cfg.heads)
        self.grounding = EarlyGrounding(C, cfg.heads, cfg.kernels)
        self.reconstructor = EmbeddingReconstructor(C, cfg.heads, cfg.text_dec_layers)
        self.consensus = ConsensusHead(C)
        self.fusion = EmbeddingFusion(C)
        self.instance_decoder = InstanceDecoder(C, cfg.heads, cfg.dec_layers, cfg.queries)
        self.pyramid_decoder = FeaturePyramidDecoder(C, cfg.pyramid_channels)
        self.mask_head = MaskHead(C)
        self.box_score_head = BoxScoreHead(C)

    def backbone_parameters(self):
        return list(self.visual.backbone.parameters())

    def head_parameters(self):
        backbone = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def forward(self, frames: torch.Tensor, tokens: torch.Tensor, pad_mask: torch.Tensor) -> dict:
        """frames (B, T, 3, H, W); tokens (B, L); pad_mask (B, L) True=pad.

        Returns every intermediate the losses and diagnostics consume.
        """
        B, T = frames.shape[:2]
        vis = self.visual(frames)
        g, e = self.text(tokens, pad_mask)

        _, C, h, w = vis.f.shape[1:]
        f_tokens = vis.f.reshape(B, T, C, h * w).transpose(2, 3).reshape(B, T * h * w, C)
        f_early, grounded, kernels = self.grounding(f_tokens, g, pad_mask)

        memory_pos = position_encoding_video(T, h, w, C, f_early.dtype)
        e_prime = self.reconstructor(f_early, memory_pos)
        alignment = self.consensus(e, e_prime)
        fused = self.fusion(e, e_prime)

        z = self.instance_decoder(vis.pyramid, fused)
        f_out = self.pyramid_decoder(vis.pyramid[0], vis.skips)
        masks = self.mask_head(z, f_out)
        boxes, scores = self.box_score_head(z)
        return {
            "e": e,
            "e_prime": e_prime,
            "alignment": alignment,
            "fused": fused,
            "f_early": f_early,
            "grounded": grounded,
            "dynamic_kernels": kernels,
            "instance_embeddings": z,
            "f_out": f_out,
            "masks": masks,
            "boxes": boxes,
            "scores": scores,
            "feature_shape": (T, h, w),
        }


def build_model(cfg: RunConfig) -> RefVosModel:
    return RefVosModel(ModelConfig.from_run(cfg))
