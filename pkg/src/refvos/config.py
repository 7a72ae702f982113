"""Flat ``key = value`` run configuration.

One schema covers every tunable surface (data geometry, model widths,
loss weights, optimizer, inference gating). Files are UTF-8 text with
``#`` comments; the CLI layers ``--set key=value`` overrides on top.
Unknown keys are rejected so stale configs fail loudly, and every command
writes its fully-resolved snapshot next to its outputs.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str):
    text = text.strip()
    if not text:
        return []
    return [int(part) for part in text.split(",")]


# key -> (parser, default, optional choices)
SCHEMA = {
    # synthetic dataset geometry
    "data.height": (int, 64, None),
    "data.width": (int, 64, None),
    "data.window": (int, 5, None),  # frames per clip (T)
    "data.min_objects": (int, 2, None),
    "data.max_objects": (int, 4, None),
    "data.twin_prob": (float, 0.5, None),  # chance of a motion-only-distinguishable pair
    "data.train_videos": (int, 200, None),
    "data.val_videos": (int, 50, None),
    "data.negative_ratio": (float, 0.3, None),
    "data.seed": (int, 0, None),
    # model widths (one shared channel count C for visual/text/query spaces)
    "model.channels": (int, 64, None),
    "model.kernels": (int, 4, None),  # dynamic kernel count K in early grounding
    "model.queries": (int, 5, None),  # instance query slots N
    "model.heads": (int, 4, None),
    "model.enc_layers": (int, 2, None),
    "model.dec_layers": (int, 2, None),
    "model.text_dec_layers": (int, 2, None),
    "model.pyramid_channels": (int, 32, None),
    # losses
    "loss.constraint": (str, "rd+ra", ("none", "pw", "ra", "rd", "rd+ra")),
    "loss.lambda_text": (float, 0.5, None),
    "loss.lambda_segm": (float, 1.0, None),
    "loss.lambda_align": (float, 0.5, None),
    "loss.lambda_angle": (float, 1.0, None),
    "loss.lambda_mask": (float, 2.0, None),
    "loss.lambda_conf": (float, 2.0, None),
    "loss.giou_weight": (float, 2.0, None),
    "loss.l1_weight": (float, 5.0, None),
    # optimization
    "train.epochs": (int, 20, None),
    "train.batch_size": (int, 8, None),
    "train.base_lr": (float, 1e-4, None),
    "train.backbone_lr_multiplier": (float, 0.5, None),
    "train.lr_decay_epochs": (_parse_int_list, [10, 17], None),
    "train.lr_decay_factor": (float, 0.1, None),
    "train.weight_decay": (float, 1e-4, None),
    "train.grad_clip": (float, 0.1, None),
    "train.seed": (int, 0, None),
    # inference
    "infer.gate_threshold": (float, 0.5, None),
    "infer.gate_mode": (str, "auto", ("auto", "open", "closed")),
}


class RunConfig:
    """Resolved configuration: schema defaults + file values + overrides."""

    def __init__(self, values=None):
        self._values = {key: default for key, (_, default, _) in SCHEMA.items()}
        if values:
            for key, value in values.items():
                self.set(key, value)

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key: {key}")
        return self._values[key]

    def set(self, key: str, raw):
        """Set ``key`` from a raw string (or an already-typed value)."""
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        parser, _, choices = SCHEMA[key]
        if isinstance(raw, str):
            try:
                value = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
        else:
            value = raw
        if choices is not None and value not in choices:
            raise ConfigError(f"{key} must be one of {choices}, got {value!r}")
        self._values[key] = value

    def items(self):
        return sorted(self._values.items())

    def copy(self) -> "RunConfig":
        clone = RunConfig()
        clone._values = dict(self._values)
        return clone

    # -- serialization ----------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for key, value in self.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            cfg.set(key.strip(), raw.strip())
        return cfg

    def apply_overrides(self, pairs) -> None:
        """Apply ``key=value`` strings from ``--set`` flags."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"--set expects key=value, got {pair!r}")
            key, _, raw = pair.partition("=")
            self.set(key.strip(), raw.strip())
