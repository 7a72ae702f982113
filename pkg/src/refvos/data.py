"""Synthetic referring-video dataset: moving colored shapes plus templated
expressions, positive/negative pairing, and the on-disk archive format.

A video holds 2-4 shapes whose attribute tuple (shape, color, size, motion)
is unique within the video; every expression names one tuple in full, so the
referent is unambiguous whenever it is present. Generation is a pure function
of (seed, config).

Archive layout::

    <root>/videos/<video_id>/frame_<t>.ppm   binary P6 frames
    <root>/videos/<video_id>/objects.json    shape specs (masks re-render from these)
    <root>/masks/<video_id>_<expr_id>.rle    referred-object masks, positive pairs
    <root>/expressions.jsonl                 one expression record per line
    <root>/manifest.tsv                      video_id, expression_id, is_positive, split
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ArchiveError, ConfigError, NegativePairingError, PlacementError
from .netpbm import read_ppm, write_ppm

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "yellow")
SIZES = ("small", "large")
MOTIONS = ("left", "right", "up", "down", "still")

_PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (235, 220, 50),
}
_SIZE_PX = {"small": 10, "large": 18}
# (drow, dcol) per frame
_VELOCITY = {"left": (0, -2), "right": (0, 2), "up": (-2, 0), "down": (2, 0), "still": (0, 0)}

AttrTuple = tuple  # (shape_class, color, size, motion)


@dataclass(frozen=True)
class ShapeSpec:
    """One object: its attribute tuple plus the (row, col) of the bounding
    box top-left corner in the first frame."""

    shape_class: str
    color: str
    size: str
    motion: str
    start_position: tuple

    @property
    def attrs(self) -> AttrTuple:
        return (self.shape_class, self.color, self.size, self.motion)

    def to_json(self) -> dict:
        return {
            "shape": self.shape_class,
            "color": self.color,
            "size": self.size,
            "motion": self.motion,
            "start": list(self.start_position),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "ShapeSpec":
        return cls(blob["shape"], blob["color"], blob["size"], blob["motion"], tuple(blob["start"]))


@dataclass
class GenConfig:
    height: int = 64
    width: int = 64
    window: int = 5
    min_objects: int = 2
    max_objects: int = 4
    twin_prob: float = 0.5

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "GenConfig":
        return cls(
            height=cfg["data.height"],
            width=cfg["data.width"],
            window=cfg["data.window"],
            min_objects=cfg["data.min_objects"],
            max_objects=cfg["data.max_objects"],
            twin_prob=cfg["data.twin_prob"],
        )

    def validate(self) -> None:
        if self.height < 32 or self.width < 32:
            raise ConfigError("data.height and data.width must be >= 32")
        if self.window < 1:
            raise ConfigError("data.window must be >= 1")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ConfigError("need 1 <= data.min_objects <= data.max_objects")


@dataclass
class VideoClip:
    """Frames plus per-object visible masks and tight boxes.

    frames: (T, H, W, 3) float32 in [0, 1], exactly representable as uint8/255.
    masks:  (O, T, H, W) bool, the visible part of each object after z-order.
    boxes:  (O, T, 4) float32 (x1, y1, x2, y2) pixels, right/bottom exclusive.
    """

    frames: np.ndarray
    masks: np.ndarray
    boxes: np.ndarray
    objects: list

    @property
    def window(self) -> int:
        return self.frames.shape[0]

    def attr_set(self) -> set:
        return {obj.attrs for obj in self.objects}

    def object_index(self, target_attrs: AttrTuple) -> int:
        for i, obj in enumerate(self.objects):
            if obj.attrs == tuple(target_attrs):
                return i
        raise KeyError(f"no object with attrs {target_attrs}")

    def masks_for(self, target_attrs: AttrTuple) -> np.ndarray:
        """(T, H, W) bool masks of the referred object."""
        return self.masks[self.object_index(target_attrs)]

    def boxes_for(self, target_attrs: AttrTuple) -> np.ndarray:
        """(T, 4) pixel boxes of the referred object."""
        return self.boxes[self.object_index(target_attrs)]


@dataclass
class ExpressionRecord:
    expression_id: str
    tokens: list
    text: str
    target_attrs: AttrTuple


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    expression_id: str
    is_positive: bool
    split: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def positives(self, name: str) -> list:
        return [e for e in self.split(name) if e.is_positive]


# ---------------------------------------------------------------------------
# expressions and vocabulary

# Each template comes in a moving and a "staying still" variant; `{m}` is the
# direction word. Seeds index templates so one object admits several texts.
_TEMPLATES = [
    ("the {color} {size} {shape} moving {m}", "the {color} {size} {shape} staying still"),
    ("a {size} {color} {shape} going {m}", "a {size} {color} {shape} staying still"),
    (
        "the {size} {shape} which is {color} and moving {m}",
        "the {size} {shape} which is {color} and staying still",
    ),
    (
        "a {color} {shape} of {size} kind heading {m}",
        "a {color} {shape} of {size} kind staying still",
    ),
]


def _build_vocab():
    words = set()
    for moving, still in _TEMPLATES:
        for template in (moving, still):
            skeleton = template.format(color="", size="", shape="", m="")
            words.update(w for w in skeleton.split() if w)
    words.update(COLORS)
    words.update(SIZES)
    words.update(SHAPES)
    words.update(m for m in MOTIONS if m != "still")  # "still" already in templates
    return ["<pad>", "<unk>"] + sorted(words)


VOCAB = _build_vocab()
WORD_TO_ID = {word: i for i, word in enumerate(VOCAB)}
PAD_ID = 0
UNK_ID = 1


def tokenize(text: str) -> list:
    return [WORD_TO_ID.get(word, UNK_ID) for word in text.split()]


def num_templates() -> int:
    return len(_TEMPLATES)


def generate_expression(target, template_seed: int, expression_id: str = "") -> ExpressionRecord:
    """Render one of the templates for ``target`` (a ShapeSpec or attr tuple)."""
    attrs = target.attrs if isinstance(target, ShapeSpec) else tuple(target)
    shape, color, size, motion = attrs
    moving, still = _TEMPLATES[template_seed % len(_TEMPLATES)]
    if motion == "still":
        text = still.format(color=color, size=size, shape=shape)
    else:
        text = moving.format(color=color, size=size, shape=shape, m=motion)
    return ExpressionRecord(expression_id, tokenize(text), text, attrs)


# ---------------------------------------------------------------------------
# rendering

def shape_stamp(shape_class: str, size_px: int) -> np.ndarray:
    """(s, s) bool support of a shape drawn into its bounding box."""
    s = size_px
    if shape_class == "square":
        return np.ones((s, s), dtype=bool)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    if shape_class == "circle":
        r = s / 2.0
        return (yy - r) ** 2 + (xx - r) ** 2 <= r * r
    if shape_class == "triangle":  # isoceles, apex up
        half = (yy / s) * (s / 2.0)
        return np.abs(xx - s / 2.0) <= half
    raise ValueError(f"unknown shape class {shape_class!r}")


def render_clip(objects, cfg: GenConfig) -> VideoClip:
    """Deterministically rasterize ``objects`` over ``cfg.window`` frames.

    Later objects draw above earlier ones; masks keep only visible pixels.
    """
    T, H, W = cfg.window, cfg.height, cfg.width
    count = len(objects)
    support = np.zeros((count, T, H, W), dtype=bool)
    frames = np.zeros((T, H, W, 3), dtype=np.uint8)
    for i, spec in enumerate(objects):
        stamp = shape_stamp(spec.shape_class, _SIZE_PX[spec.size])
        s = stamp.shape[0]
        dr, dc = _VELOCITY[spec.motion]
        r0, c0 = spec.start_position
        for t in range(T):
            r, c = r0 + dr * t, c0 + dc * t
            if r < 0 or c < 0 or r + s > H or c + s > W:
                raise PlacementError(
                    f"object {i} leaves the frame at t={t} (row={r}, col={c})"
                )
            support[i, t, r : r + s, c : c + s] |= stamp
    for t in range(T):
        for i, spec in enumerate(objects):
            frames[t][support[i, t]] = _PALETTE[spec.color]
    masks = support.copy()
    for i in range(count):
        for j in range(i + 1, count):
            masks[i] &= ~support[j]
    boxes = np.zeros((count, T, 4), dtype=np.float32)
    for i in range(count):
        for t in range(T):
            rows, cols = np.nonzero(masks[i, t])
            if rows.size:
                boxes[i, t] = (cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)
    return VideoClip(frames.astype(np.float32) / 255.0, masks, boxes, list(objects))


def _sample_start(rng, size_px: int, motion: str, cfg: GenConfig) -> tuple:
    dr, dc = _VELOCITY[motion]
    span = cfg.window - 1

    def axis_range(delta, limit):
        lo = max(0, -delta * span)
        hi = limit - size_px - max(0, delta * span)
        return lo, hi

    r_lo, r_hi = axis_range(dr, cfg.height)
    c_lo, c_hi = axis_range(dc, cfg.width)
    if r_hi < r_lo or c_hi < c_lo:
        raise PlacementError(f"no valid start for size={size_px} motion={motion}")
    return int(rng.integers(r_lo, r_hi + 1)), int(rng.integers(c_lo, c_hi + 1))


def _sample_attrs(rng, count: int, twin_prob: float) -> list:
    """Distinct attribute tuples; with probability ``twin_prob`` the first two
    share everything but motion, so only temporal cues disambiguate them."""
    chosen = []
    if count >= 2 and rng.random() < twin_prob:
        shape = SHAPES[rng.integers(len(SHAPES))]
        color = COLORS[rng.integers(len(COLORS))]
        size = SIZES[rng.integers(len(SIZES))]
        m1, m2 = rng.choice(len(MOTIONS), size=2, replace=False)
        chosen = [(shape, color, size, MOTIONS[m1]), (shape, color, size, MOTIONS[m2])]
    pool = [
        (s, c, z, m)
        for s in SHAPES
        for c in COLORS
        for z in SIZES
        for m in MOTIONS
    ]
    order = rng.permutation(len(pool))
    for idx in order:
        if len(chosen) >= count:
            break
        if pool[idx] not in chosen:
            chosen.append(pool[idx])
    return chosen[:count]


def generate_video(seed: int, cfg: GenConfig, max_attempts: int = 64) -> VideoClip:
    """Sample a clip whose objects stay in frame and occlude each other by at
    most half of their area in every frame. Deterministic given (seed, cfg)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        attrs = _sample_attrs(rng, count, cfg.twin_prob)
        specs = []
        for shape, color, size, motion in attrs:
            start = _sample_start(rng, _SIZE_PX[size], motion, cfg)
            specs.append(ShapeSpec(shape, color, size, motion, start))
        clip = render_clip(specs, cfg)
        full_areas = np.array(
            [shape_stamp(s.shape_class, _SIZE_PX[s.size]).sum() for s in specs]
        )
        visible = clip.masks.sum(axis=(2, 3))  # (O, T)
        if (visible >= 0.5 * full_areas[:, None]).all():
            return clip
    raise PlacementError(
        f"could not place {cfg.min_objects}-{cfg.max_objects} objects "
        f"within {max_attempts} attempts (seed={seed})"
    )


def matching_objects(attr_set, target_attrs) -> int:
    return sum(1 for attrs in attr_set if attrs == tuple(target_attrs))


# ---------------------------------------------------------------------------
# negative pairing

def build_negative_pairs(
    manifest: DatasetManifest,
    records: dict,
    video_attrs: dict,
    seed: int,
    split: str = "val",
) -> DatasetManifest:
    """Pair every positive entry of ``split`` with a verified-unrelated video.

    The drawn video never equals the expression's own video, and contains no
    object matching the expression's attribute tuple. Raises when some
    expression has no unrelated candidate at all.
    """
    positives = manifest.positives(split)
    if len({e.video_id for e in positives}) < 2:
        raise NegativePairingError("need at least 2 videos to build negative pairs")
    rng = np.random.default_rng(seed)
    video_ids = sorted(video_attrs)
    out = DatasetManifest(list(manifest.entries))
    for entry in positives:
        target = records[entry.expression_id].target_attrs
        candidates = [
            vid
            for vid in video_ids
            if vid != entry.video_id and matching_objects(video_attrs[vid], target) == 0
        ]
        if not candidates:
            raise NegativePairingError(
                f"every other video contains {target} (expression {entry.expression_id})"
            )
        pick = candidates[int(rng.integers(len(candidates)))]
        out.entries.append(ManifestEntry(pick, entry.expression_id, False, entry.split))
    return out


# ---------------------------------------------------------------------------
# RLE codec

def rle_encode(masks: np.ndarray) -> str:
    """Encode (T, H, W) binary masks: header ``H W T`` then one line per frame
    of row-major ``value:runlength`` pairs (runs merge across row ends)."""
    masks = np.asarray(masks)
    if masks.ndim != 3:
        raise ValueError(f"expected (T, H, W), got shape {masks.shape}")
    T, H, W = masks.shape
    lines = [f"{H} {W} {T}"]
    for t in range(T):
        flat = masks[t].reshape(-1).astype(np.uint8)
        change = np.flatnonzero(np.diff(flat))
        starts = np.concatenate(([0], change + 1))
        ends = np.concatenate((change + 1, [flat.size]))
        lines.append(",".join(f"{int(flat[s])}:{int(e - s)}" for s, e in zip(starts, ends)))
    return "\n".join(lines) + "\n"


def rle_decode(text: str, path=None) -> np.ndarray:
    """Inverse of :func:`rle_encode`; reports the byte offset of bad input."""
    offset = 0
    lines = text.split("\n")
    header = lines[0] if lines else ""
    parts = header.split()
    if len(parts) != 3:
        raise ArchiveError("RLE header must be 'H W T'", path=path, offset=0)
    try:
        H, W, T = (int(p) for p in parts)
    except ValueError:
        raise ArchiveError("non-numeric RLE header", path=path, offset=0) from None
    if H <= 0 or W <= 0 or T <= 0:
        raise ArchiveError("non-positive RLE dimensions", path=path, offset=0)
    offset = len(header.encode("utf-8")) + 1
    masks = np.zeros((T, H, W), dtype=bool)
    for t in range(T):
        if t + 1 >= len(lines):
            raise ArchiveError(f"missing frame {t}", path=path, offset=offset)
        line = lines[t + 1]
        flat = np.zeros(H * W, dtype=bool)
        pos = 0
        for token in line.split(","):
            if ":" not in token:
                raise ArchiveError(
                    f"expected value:runlength, got {token!r}", path=path, offset=offset
                )
            value_s, _, length_s = token.partition(":")
            try:
                value, length = int(value_s), int(length_s)
            except ValueError:
                raise ArchiveError(
                    f"non-numeric run {token!r}", path=path, offset=offset
                ) from None
            if value not in (0, 1) or length <= 0 or pos + length > H * W:
                raise ArchiveError(
                    f"invalid run {token!r} at flat index {pos}", path=path, offset=offset
                )
            if value:
                flat[pos : pos + length] = True
            pos += length
        if pos != H * W:
            raise ArchiveError(
                f"frame {t} covers {pos} of {H * W} pixels", path=path, offset=offset
            )
        masks[t] = flat.reshape(H, W)
        offset += len(line.encode("utf-8")) + 1
    return masks


def write_rle(path, masks: np.ndarray) -> None:
    Path(path).write_text(rle_encode(masks), encoding="utf-8")


def read_rle(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ArchiveError(str(exc), path=path) from exc
    return rle_decode(text, path=path)


# ---------------------------------------------------------------------------
# dataset construction and archive IO

def _video_seed(base_seed: int, split_code: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, split_code, index]).generate_state(1)[0])


def build_dataset(cfg: RunConfig):
    """Generate clips, expressions (one per object), and the pairing manifest.

    Train entries are all positive (negatives are drawn per batch during
    training); each val expression gets exactly one positive and one
    verified-unrelated negative pairing.
    """
    gen = GenConfig.from_run(cfg)
    gen.validate()
    base_seed = cfg["data.seed"]
    clips, records = {}, {}
    manifest = DatasetManifest()
    counts = {"train": cfg["data.train_videos"], "val": cfg["data.val_videos"]}
    for split_code, split in enumerate(("train", "val")):
        for i in range(counts[split]):
            video_id = f"{split}_{i:04d}"
            clip = generate_video(_video_seed(base_seed, split_code, i), gen)
            clips[video_id] = clip
            template_rng = np.random.default_rng(
                np.random.SeedSequence([base_seed, split_code, i, 7])
            )
            for k, obj in enumerate(clip.objects):
                expr_id = f"{video_id}_o{k}"
                record = generate_expression(
                    obj, int(template_rng.integers(num_templates())), expression_id=expr_id
                )
                records[expr_id] = record
                manifest.entries.append(ManifestEntry(video_id, expr_id, True, split))
    video_attrs = {vid: clip.attr_set() for vid, clip in clips.items()}
    val_attrs = {vid: video_attrs[vid] for vid in video_attrs if vid.startswith("val_")}
    manifest = build_negative_pairs(
        manifest,
        records,
        val_attrs,
        seed=_video_seed(base_seed, 2, 0),
        split="val",
    )
    return clips, records, manifest


def write_archive(root, clips: dict, records: dict, manifest: DatasetManifest) -> None:
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for video_id, clip in sorted(clips.items()):
        vdir = root / "videos" / video_id
        vdir.mkdir(parents=True, exist_ok=True)
        frames_u8 = np.round(clip.frames * 255.0).astype(np.uint8)
        for t in range(clip.window):
            write_ppm(vdir / f"frame_{t}.ppm", frames_u8[t])
        meta = {
            "height": clip.frames.shape[1],
            "width": clip.frames.shape[2],
            "window": clip.window,
            "objects": [obj.to_json() for obj in clip.objects],
        }
        (vdir / "objects.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
    for entry in manifest.entries:
        if not entry.is_positive:
            continue
        clip = clips[entry.video_id]
        target = records[entry.expression_id].target_attrs
        write_rle(
            root / "masks" / f"{entry.video_id}_{entry.expression_id}.rle",
            clip.masks_for(target),
        )
    with open(root / "expressions.jsonl", "w", encoding="utf-8") as fh:
        for expr_id, record in sorted(records.items()):
            shape, color, size, motion = record.target_attrs
            fh.write(
                json.dumps(
                    {
                        "id": expr_id,
                        "tokens": list(record.tokens),
                        "text": record.text,
                        "target": {
                            "shape": shape,
                            "color": color,
                            "size": size,
                            "motion": motion,
                        },
                    }
                )
                + "\n"
            )
    with open(root / "manifest.tsv", "w", encoding="utf-8") as fh:
        fh.write("video_id\texpression_id\tis_positive\tsplit\n")
        for entry in manifest.entries:
            fh.write(
                f"{entry.video_id}\t{entry.expression_id}\t{int(entry.is_positive)}\t{entry.split}\n"
            )


def read_archive(root):
    """Load an archive back into (clips, records, manifest).

    Frames come from the PPM files; per-object masks and boxes re-render
    from the stored shape specs, which reproduces them exactly.
    """
    root = Path(root)
    manifest_path = root / "manifest.tsv"
    if not manifest_path.exists():
        raise ArchiveError("manifest.tsv not found", path=manifest_path)
    manifest = DatasetManifest()
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines):
        if lineno == 0 and line.startswith("video_id"):
            continue
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ArchiveError(
                f"manifest line {lineno + 1} has {len(parts)} columns", path=manifest_path
            )
        manifest.entries.append(ManifestEntry(parts[0], parts[1], parts[2] == "1", parts[3]))

    records = {}
    expr_path = root / "expressions.jsonl"
    if not expr_path.exists():
        raise ArchiveError("expressions.jsonl not found", path=expr_path)
    offset = 0
    for line in expr_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            try:
                blob = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ArchiveError(
                    f"bad expression record: {exc}", path=expr_path, offset=offset
                ) from exc
            target = blob["target"]
            records[blob["id"]] = ExpressionRecord(
                blob["id"],
                list(blob["tokens"]),
                blob["text"],
                (target["shape"], target["color"], target["size"], target["motion"]),
            )
        offset += len(line.encode("utf-8")) + 1

    clips = {}
    for video_id in sorted({e.video_id for e in manifest.entries}):
        vdir = root / "videos" / video_id
        meta_path = vdir / "objects.json"
        if not meta_path.exists():
            raise ArchiveError("objects.json not found", path=meta_path)
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        cfg = GenConfig(
            height=meta["height"],
            width=meta["width"],
            window=meta["window"],
            min_objects=1,
            max_objects=max(1, len(meta["objects"])),
        )
        clip = render_clip([ShapeSpec.from_json(o) for o in meta["objects"]], cfg)
        frames = np.zeros_like(clip.frames)
        for t in range(meta["window"]):
            frame_path = vdir / f"frame_{t}.ppm"
            if not frame_path.exists():
                raise ArchiveError(f"missing frame {t}", path=frame_path)
            frames[t] = read_ppm(frame_path).astype(np.float32) / 255.0
        clip.frames = frames
        clips[video_id] = clip
    return clips, records, manifest


def read_pair_masks(root, video_id: str, expression_id: str) -> np.ndarray:
    return read_rle(Path(root) / "masks" / f"{video_id}_{expression_id}.rle")
