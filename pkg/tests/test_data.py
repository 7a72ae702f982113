import numpy as np
import pytest

from refvos import data as d
from refvos.config import RunConfig
from refvos.errors import ArchiveError, NegativePairingError

from conftest import small_config


def default_gen(**kw):
    base = dict(height=64, width=64, window=5, min_objects=2, max_objects=2)
    base.update(kw)
    return d.GenConfig(**base)


class TestGenerateVideo:
    def test_two_object_clip_satisfies_invariants(self):
        cfg = default_gen()
        clip = d.generate_video(0, cfg)
        assert clip.frames.shape == (5, 64, 64, 3)
        assert clip.masks.shape == (2, 5, 64, 64)
        assert len(clip.objects) == 2
        # distinct attribute tuples
        assert len(clip.attr_set()) == 2
        # masks nonempty on every frame
        assert (clip.masks.sum(axis=(2, 3)) > 0).all()

    def test_same_seed_bit_identical(self):
        cfg = default_gen()
        a = d.generate_video(3, cfg)
        b = d.generate_video(3, cfg)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.masks, b.masks)
        assert np.array_equal(a.boxes, b.boxes)
        assert a.objects == b.objects

    def test_still_objects_keep_constant_boxes(self):
        cfg = default_gen()
        specs = [
            d.ShapeSpec("square", "red", "small", "still", (5, 5)),
            d.ShapeSpec("circle", "blue", "large", "still", (30, 30)),
        ]
        clip = d.render_clip(specs, cfg)
        for i in range(2):
            for t in range(1, cfg.window):
                assert np.array_equal(clip.boxes[i, t], clip.boxes[i, 0])
                assert np.array_equal(clip.masks[i, t], clip.masks[i, 0])

    def test_boxes_are_tight(self):
        clip = d.generate_video(11, default_gen(max_objects=4))
        for i in range(clip.masks.shape[0]):
            for t in range(clip.window):
                rows, cols = np.nonzero(clip.masks[i, t])
                x1, y1, x2, y2 = clip.boxes[i, t]
                assert (x1, y1, x2, y2) == (cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)

    def test_occlusion_capped_at_half(self):
        for seed in range(20):
            clip = d.generate_video(seed, default_gen(max_objects=4, twin_prob=1.0))
            for i, obj in enumerate(clip.objects):
                full = d.shape_stamp(obj.shape_class, {"small": 10, "large": 18}[obj.size]).sum()
                visible = clip.masks[i].sum(axis=(1, 2))
                assert (visible >= 0.5 * full).all()

    def test_rejects_tiny_frames(self):
        with pytest.raises(Exception):
            d.generate_video(0, default_gen(height=16, width=16))

    def test_object_leaving_frame_is_rejected(self):
        cfg = default_gen()
        specs = [d.ShapeSpec("square", "red", "small", "right", (5, 60))]
        with pytest.raises(d.PlacementError):
            d.render_clip(specs, cfg)


class TestExpressions:
    target = ("square", "red", "small", "left")

    def test_template_zero_deterministic(self):
        a = d.generate_expression(self.target, 0)
        b = d.generate_expression(self.target, 0)
        assert a.tokens == b.tokens
        assert a.text == "the red small square moving left"

    def test_one_to_many_templates(self):
        a = d.generate_expression(self.target, 0)
        b = d.generate_expression(self.target, 1)
        assert a.tokens != b.tokens
        assert a.target_attrs == b.target_attrs
        texts = {d.generate_expression(self.target, k).text for k in range(d.num_templates())}
        assert len(texts) >= 3

    def test_still_motion_uses_staying_still(self):
        still = ("circle", "blue", "large", "still")
        for k in range(d.num_templates()):
            record = d.generate_expression(still, k)
            assert "staying still" in record.text or "stays still" in record.text
            assert d.WORD_TO_ID["still"] in record.tokens

    def test_tokens_in_vocabulary(self):
        for shape in d.SHAPES:
            for color in d.COLORS:
                for size in d.SIZES:
                    for motion in d.MOTIONS:
                        for k in range(d.num_templates()):
                            rec = d.generate_expression((shape, color, size, motion), k)
                            assert all(0 <= t < len(d.VOCAB) for t in rec.tokens)
                            assert d.UNK_ID not in rec.tokens


def _manifest_for(videos):
    """videos: dict video_id -> (attr set, list of (expr_id, target))."""
    manifest = d.DatasetManifest()
    records = {}
    attrs = {}
    for vid, (attr_set, expressions) in videos.items():
        attrs[vid] = attr_set
        for expr_id, target in expressions:
            records[expr_id] = d.ExpressionRecord(expr_id, [2], "x", target)
            manifest.entries.append(d.ManifestEntry(vid, expr_id, True, "val"))
    return manifest, records, attrs


class TestNegativePairs:
    def test_forced_derangement_of_two(self):
        t1 = ("square", "red", "small", "left")
        t2 = ("circle", "blue", "large", "right")
        manifest, records, attrs = _manifest_for(
            {"a": ({t1}, [("e1", t1)]), "b": ({t2}, [("e2", t2)])}
        )
        out = d.build_negative_pairs(manifest, records, attrs, seed=0)
        negatives = {e.expression_id: e.video_id for e in out.entries if not e.is_positive}
        assert negatives == {"e1": "b", "e2": "a"}

    def test_unsatisfiable_constraint_raises(self):
        red_square = ("square", "red", "small", "left")
        manifest, records, attrs = _manifest_for(
            {
                "a": ({red_square}, [("e1", red_square)]),
                "b": ({red_square}, []),
                "c": ({red_square}, []),
            }
        )
        with pytest.raises(NegativePairingError):
            d.build_negative_pairs(manifest, records, attrs, seed=0)

    def test_ten_videos_all_negatives_unrelated(self):
        cfg = RunConfig()
        cfg.set("data.train_videos", 0)
        cfg.set("data.val_videos", 10)
        clips, records, manifest = d.build_dataset(cfg)
        negatives = [e for e in manifest.entries if not e.is_positive]
        assert negatives
        for entry in negatives:
            target = records[entry.expression_id].target_attrs
            # brute-force scan over every object of the paired video
            assert all(obj.attrs != target for obj in clips[entry.video_id].objects)
            # and the expression's own video is never its negative
            own = entry.expression_id.rsplit("_o", 1)[0]
            assert entry.video_id != own


class TestManifestInvariants:
    def test_val_has_one_positive_one_negative_each(self, tiny_dataset):
        _, dataset = tiny_dataset
        by_expr = {}
        for entry in dataset.manifest.split("val"):
            by_expr.setdefault(entry.expression_id, []).append(entry.is_positive)
        for flags in by_expr.values():
            assert sorted(flags) == [False, True]

    def test_positive_exactly_one_match_negative_zero(self, tiny_dataset):
        _, dataset = tiny_dataset
        for entry in dataset.manifest.entries:
            target = dataset.records[entry.expression_id].target_attrs
            matches = sum(
                1 for obj in dataset.clips[entry.video_id].objects if obj.attrs == target
            )
            assert matches == (1 if entry.is_positive else 0)

    def test_generation_is_pure(self):
        cfg = small_config()
        a_clips, a_records, a_manifest = d.build_dataset(cfg)
        b_clips, b_records, b_manifest = d.build_dataset(cfg)
        assert a_manifest.entries == b_manifest.entries
        for vid in a_clips:
            assert np.array_equal(a_clips[vid].frames, b_clips[vid].frames)
            assert a_clips[vid].objects == b_clips[vid].objects
        assert {k: r.tokens for k, r in a_records.items()} == {
            k: r.tokens for k, r in b_records.items()
        }


class TestRLE:
    def test_all_zero_64x64_single_run(self):
        mask = np.zeros((1, 64, 64), dtype=bool)
        text = d.rle_encode(mask)
        assert text == "64 64 1\n0:4096\n"

    def test_alternating_runs(self):
        # row-major flattening 0,1,0,1 over a 2x2 frame
        mask = np.array([[[0, 1], [0, 1]]], dtype=bool)
        assert d.rle_encode(mask) == "2 2 1\n0:1,1:1,0:1,1:1\n"

    def test_roundtrip_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            T = int(rng.integers(1, 4))
            H = int(rng.integers(1, 20))
            W = int(rng.integers(1, 20))
            mask = rng.random((T, H, W)) < rng.random()
            decoded = d.rle_decode(d.rle_encode(mask))
            assert np.array_equal(decoded, mask)

    def test_corrupt_run_reports_offset(self):
        text = "2 2 1\n0:1,banana,1:1\n"
        with pytest.raises(ArchiveError) as err:
            d.rle_decode(text, path="x.rle")
        assert err.value.offset == 6  # header line + newline

    def test_truncated_frame_reports_error(self):
        with pytest.raises(ArchiveError):
            d.rle_decode("2 2 2\n0:4\n")

    def test_wrong_pixel_count_rejected(self):
        with pytest.raises(ArchiveError):
            d.rle_decode("2 2 1\n0:3\n")
        with pytest.raises(ArchiveError):
            d.rle_decode("2 2 1\n0:5\n")


class TestArchive:
    def test_roundtrip_identity(self, tmp_path, tiny_dataset):
        _, dataset = tiny_dataset
        root = tmp_path / "archive"
        d.write_archive(root, dataset.clips, dataset.records, dataset.manifest)
        clips, records, manifest = d.read_archive(root)
        assert manifest.entries == dataset.manifest.entries
        assert set(records) == set(dataset.records)
        for expr_id, record in records.items():
            original = dataset.records[expr_id]
            assert record.tokens == original.tokens
            assert record.text == original.text
            assert record.target_attrs == original.target_attrs
        for vid, clip in clips.items():
            original = dataset.clips[vid]
            assert np.array_equal(clip.frames, original.frames)
            assert np.array_equal(clip.masks, original.masks)
            assert np.array_equal(clip.boxes, original.boxes)
            assert clip.objects == original.objects

    def test_pair_masks_match_referred_object(self, tmp_path, tiny_dataset):
        _, dataset = tiny_dataset
        root = tmp_path / "archive"
        d.write_archive(root, dataset.clips, dataset.records, dataset.manifest)
        entry = dataset.manifest.positives("val")[0]
        stored = d.read_pair_masks(root, entry.video_id, entry.expression_id)
        target = dataset.records[entry.expression_id].target_attrs
        assert np.array_equal(stored, dataset.clips[entry.video_id].masks_for(target))

    def test_truncated_ppm_reports_offset(self, tmp_path, tiny_dataset):
        _, dataset = tiny_dataset
        root = tmp_path / "archive"
        d.write_archive(root, dataset.clips, dataset.records, dataset.manifest)
        frame = next((root / "videos").iterdir()) / "frame_0.ppm"
        blob = frame.read_bytes()
        frame.write_bytes(blob[:-10])
        with pytest.raises(ArchiveError) as err:
            d.read_archive(root)
        assert err.value.offset == len(blob) - 10
