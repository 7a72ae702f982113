"""Optimization loop, batch assembly with on-the-fly negative pairing,
checkpointing, and checkpoint evaluation.

Training is deterministic given the config seed: fixed initialization, fixed
data order, and fixed negative draws, so repeated runs on one platform
produce bit-identical checkpoints.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .checkpoint import load_into_model, save_checkpoint
from .config import RunConfig
from .errors import NegativePairingError
from .losses import LossWeights, box_xyxy_to_cxcywh, compute_losses
from .metrics import build_report, video_F, video_J
from .model import build_model
from .segmenter import select_and_gate


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    base_lr: float = 1e-4
    backbone_lr_multiplier: float = 0.5
    lr_decay_epochs: tuple = (10, 17)
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    seed: int = 0
    negative_ratio: float = 0.3

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "TrainConfig":
        tc = cls(
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            base_lr=cfg["train.base_lr"],
            backbone_lr_multiplier=cfg["train.backbone_lr_multiplier"],
            lr_decay_epochs=tuple(cfg["train.lr_decay_epochs"]),
            lr_decay_factor=cfg["train.lr_decay_factor"],
            weight_decay=cfg["train.weight_decay"],
            grad_clip=cfg["train.grad_clip"],
            seed=cfg["train.seed"],
            negative_ratio=cfg["data.negative_ratio"],
        )
        tc.validate()
        return tc

    def validate(self) -> None:
        if list(self.lr_decay_epochs) != sorted(set(self.lr_decay_epochs)):
            raise ValueError("train.lr_decay_epochs must be strictly increasing")
        if self.batch_size < 3:
            warnings.warn(
                "batch_size < 3 leaves the angle term of the cycle loss degenerate",
                stacklevel=2,
            )


def lr_at(epoch: float, base_lr: float, decay_epochs, factor: float) -> float:
    """Piecewise-constant schedule: multiply by ``factor`` at each decay epoch."""
    decays = sum(1 for e in decay_epochs if epoch >= e)
    return base_lr * factor**decays


# ---------------------------------------------------------------------------
# batch assembly

@dataclass
class Dataset:
    clips: dict
    records: dict
    manifest: data_mod.DatasetManifest

    @classmethod
    def load(cls, root) -> "Dataset":
        return cls(*data_mod.read_archive(root))

    @classmethod
    def generate(cls, cfg: RunConfig) -> "Dataset":
        return cls(*data_mod.build_dataset(cfg))

    def attr_sets(self, split: str) -> dict:
        ids = {e.video_id for e in self.manifest.split(split)}
        return {vid: self.clips[vid].attr_set() for vid in sorted(ids)}


def pair_tensors(clip, record, positive: bool):
    """Single (video, expression) pair -> model-ready tensors.

    Returns frames (T, 3, H, W), token ids, gt_masks (T, H, W) float,
    gt_boxes (T, 4) normalized cxcywh (zeros for negative pairs)."""
    frames = torch.from_numpy(clip.frames).permute(0, 3, 1, 2).contiguous()
    tokens = torch.tensor(record.tokens, dtype=torch.long)
    T, _, H, W = frames.shape
    if positive:
        masks = torch.from_numpy(
            clip.masks_for(record.target_attrs).astype(np.float32)
        )
        boxes_px = torch.from_numpy(clip.boxes_for(record.target_attrs).copy())
        scale = torch.tensor([W, H, W, H], dtype=torch.float32)
        boxes = box_xyxy_to_cxcywh(boxes_px / scale)
    else:
        masks = torch.zeros(T, H, W)
        boxes = torch.zeros(T, 4)
    return frames, tokens, masks, boxes


def collate(samples: list) -> dict:
    """samples: (frames, tokens, gt_masks, gt_boxes, positive) tuples."""
    max_len = max(s[1].shape[0] for s in samples)
    tokens = torch.full((len(samples), max_len), data_mod.PAD_ID, dtype=torch.long)
    pad_mask = torch.ones(len(samples), max_len, dtype=torch.bool)
    for i, s in enumerate(samples):
        tokens[i, : s[1].shape[0]] = s[1]
        pad_mask[i, : s[1].shape[0]] = False
    return {
        "frames": torch.stack([s[0] for s in samples]),
        "tokens": tokens,
        "pad_mask": pad_mask,
        "gt_masks": torch.stack([s[2] for s in samples]),
        "gt_boxes": torch.stack([s[3] for s in samples]),
        "positive": torch.tensor([s[4] for s in samples], dtype=torch.bool),
    }


def draw_negative_video(rng, dataset: Dataset, attr_sets: dict, entry) -> str:
    """Shuffle-and-verify: a different video with no matching object."""
    target = dataset.records[entry.expression_id].target_attrs
    candidates = [
        vid
        for vid in sorted(attr_sets)
        if vid != entry.video_id
        and data_mod.matching_objects(attr_sets[vid], target) == 0
    ]
    if not candidates:
        raise NegativePairingError(
            f"no unrelated training video for expression {entry.expression_id}"
        )
    return candidates[int(rng.integers(len(candidates)))]


def training_batches(dataset: Dataset, tc: TrainConfig, epoch: int):
    """Yield full batches; round(batch * negative_ratio) members per batch are
    re-paired with verified-unrelated videos."""
    positives = dataset.manifest.positives("train")
    attr_sets = dataset.attr_sets("train")
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 101, epoch]))
    order = rng.permutation(len(positives))
    n_neg = int(round(tc.batch_size * tc.negative_ratio))
    for start in range(0, len(order) - tc.batch_size + 1, tc.batch_size):
        chunk = [positives[i] for i in order[start : start + tc.batch_size]]
        neg_slots = set(
            rng.choice(tc.batch_size, size=n_neg, replace=False).tolist()
        ) if n_neg else set()
        samples = []
        for slot, entry in enumerate(chunk):
            record = dataset.records[entry.expression_id]
            if slot in neg_slots:
                video_id = draw_negative_video(rng, dataset, attr_sets, entry)
                samples.append((*pair_tensors(dataset.clips[video_id], record, False), False))
            else:
                samples.append((*pair_tensors(dataset.clips[entry.video_id], record, True), True))
        yield collate(samples)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    final_checkpoint: Path
    loss_trace: list
    log_path: Path


def train(cfg: RunConfig, dataset: Dataset, out_dir) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig.from_run(cfg)
    weights = LossWeights.from_run(cfg)
    torch.manual_seed(tc.seed)
    model = build_model(cfg)
    model.train()
    backbone = model.backbone_parameters()
    heads = model.head_parameters()
    optimizer = torch.optim.AdamW(
        [
            {"params": backbone, "lr": tc.base_lr * tc.backbone_lr_multiplier},
            {"params": heads, "lr": tc.base_lr},
        ],
        weight_decay=tc.weight_decay,
    )
    log_path = out_dir / "train_log.tsv"
    trace = []
    step = 0
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("step\tL_text\tL_dist\tL_angle\tL_segm\tL_align\ttotal\n")
        for epoch in range(tc.epochs):
            scale = lr_at(epoch, 1.0, tc.lr_decay_epochs, tc.lr_decay_factor)
            optimizer.param_groups[0]["lr"] = tc.base_lr * tc.backbone_lr_multiplier * scale
            optimizer.param_groups[1]["lr"] = tc.base_lr * scale
            for batch_idx, batch in enumerate(training_batches(dataset, tc, epoch)):
                outputs = model(batch["frames"], batch["tokens"], batch["pad_mask"])
                try:
                    breakdown = compute_losses(outputs, batch, weights)
                except FloatingPointError as exc:
                    raise FloatingPointError(
                        f"epoch {epoch} batch {batch_idx}: {exc}"
                    ) from exc
                optimizer.zero_grad()
                breakdown.total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
                optimizer.step()
                cols = breakdown.columns()
                log.write(
                    f"{step}\t{cols['L_text']:.6f}\t{cols['L_dist']:.6f}\t{cols['L_angle']:.6f}"
                    f"\t{cols['L_segm']:.6f}\t{cols['L_align']:.6f}\t{cols['total']:.6f}\n"
                )
                trace.append(cols["total"])
                step += 1
            save_checkpoint(
                out_dir / f"checkpoint_epoch{epoch}.ckpt", model.state_dict(), cfg.dumps()
            )
    final = out_dir / "checkpoint_final.ckpt"
    save_checkpoint(final, model.state_dict(), cfg.dumps())
    return TrainResult(final, trace, log_path)


# ---------------------------------------------------------------------------
# inference and evaluation

def load_model(cfg: RunConfig, checkpoint_path) -> torch.nn.Module:
    model = build_model(cfg)
    load_into_model(checkpoint_path, model)
    model.eval()
    return model


def _gate_open(mode: str, prob: float, threshold: float) -> bool:
    if mode == "open":
        return True
    if mode == "closed":
        return False
    return prob > threshold


@torch.no_grad()
def run_inference(
    model,
    dataset: Dataset,
    cfg: RunConfig,
    split: str = "val",
    gate_mode: str | None = None,
    chunk: int = 16,
) -> list:
    """Predict every (video, expression) pair of ``split``.

    Returns per-pair dicts: ids, flags, gated masks, selected slot, summed
    score, alignment probability."""
    model.eval()
    threshold = cfg["infer.gate_threshold"]
    mode = gate_mode or cfg["infer.gate_mode"]
    entries = dataset.manifest.split(split)
    results = []
    for start in range(0, len(entries), chunk):
        part = entries[start : start + chunk]
        samples = []
        for entry in part:
            record = dataset.records[entry.expression_id]
            samples.append(
                (*pair_tensors(dataset.clips[entry.video_id], record, False), entry.is_positive)
            )
        batch = collate(samples)
        outputs = model(batch["frames"], batch["tokens"], batch["pad_mask"])
        probs = torch.sigmoid(outputs["alignment"])
        for i, entry in enumerate(part):
            prob = float(probs[i])
            masks, slot = select_and_gate(
                outputs["masks"][i], outputs["scores"][i], _gate_open(mode, prob, threshold)
            )
            results.append(
                {
                    "video_id": entry.video_id,
                    "expression_id": entry.expression_id,
                    "is_positive": entry.is_positive,
                    "masks": masks.cpu().numpy().astype(bool),
                    "slot": slot,
                    "sum_scores": float(outputs["scores"][i].sum(dim=0)[slot]),
                    "prob": prob,
                }
            )
    return results


def prediction_rows(dataset: Dataset, predictions: list) -> list:
    """Join predictions with ground truth into metric rows."""
    rows = []
    for pred in predictions:
        entry_gt = None
        if pred["is_positive"]:
            clip = dataset.clips[pred["video_id"]]
            target = dataset.records[pred["expression_id"]].target_attrs
            entry_gt = clip.masks_for(target)
        row = {
            "video_id": pred["video_id"],
            "expression_id": pred["expression_id"],
            "is_positive": pred["is_positive"],
            "pred_area": int(pred["masks"].sum()),
            "prob": pred.get("prob"),
            "J": video_J(pred["masks"], entry_gt) if entry_gt is not None else None,
            "F": video_F(pred["masks"], entry_gt) if entry_gt is not None else None,
        }
        rows.append(row)
    return rows


def evaluate_checkpoint(
    cfg: RunConfig,
    checkpoint_path,
    dataset: Dataset,
    split: str = "val",
    gate_mode: str | None = None,
):
    """Run gated inference over a split and aggregate the metrics report."""
    model = load_model(cfg, checkpoint_path)
    predictions = run_inference(model, dataset, cfg, split=split, gate_mode=gate_mode)
    rows = prediction_rows(dataset, predictions)
    return build_report(rows), rows, predictions
