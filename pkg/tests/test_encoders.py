import pytest
import torch

from refvos import data as d
from refvos.encoders import TextEncoder, VisualEncoder
from refvos.errors import DataError, ShapeMismatchError


def make_frames(B=1, T=5, H=64, W=64, fill=None, seed=0):
    if fill is not None:
        return torch.full((B, T, 3, H, W), float(fill))
    g = torch.Generator().manual_seed(seed)
    return torch.rand(B, T, 3, H, W, generator=g)


class TestVisualEncoder:
    def test_shape_contract(self):
        torch.manual_seed(0)
        enc = VisualEncoder(channels=64, heads=4, enc_layers=2)
        out = enc(make_frames())
        assert out.f.shape == (1, 5, 64, 8, 8)
        assert [tuple(p.shape) for p in out.pyramid] == [
            (1, 5, 64, 8, 8),
            (1, 5, 64, 4, 4),
        ]
        assert [tuple(s.shape) for s in out.skips] == [
            (1, 5, 16, 32, 32),
            (1, 5, 32, 16, 16),
        ]

    def test_constant_video_gives_identical_frame_features(self):
        torch.manual_seed(0)
        enc = VisualEncoder(channels=16, heads=2, enc_layers=1)
        out = enc(make_frames(T=4, H=32, W=32, fill=0.0))
        for tensor in [out.f, *out.pyramid, *out.skips]:
            for t in range(1, 4):
                assert torch.equal(tensor[:, t], tensor[:, 0])

    def test_repeated_calls_bit_identical(self):
        torch.manual_seed(1)
        enc = VisualEncoder(channels=16, heads=2, enc_layers=1)
        frames = make_frames(T=2, H=32, W=32, seed=3)
        a = enc(frames)
        b = enc(frames)
        assert torch.equal(a.f, b.f)
        assert all(torch.equal(x, y) for x, y in zip(a.pyramid, b.pyramid))

    def test_finite_outputs(self):
        torch.manual_seed(2)
        enc = VisualEncoder(channels=16, heads=2, enc_layers=1)
        out = enc(make_frames(B=2, T=3, H=32, W=32, seed=5))
        for tensor in [out.f, *out.pyramid, *out.skips]:
            assert torch.isfinite(tensor).all()

    def test_bad_geometry_rejected(self):
        enc = VisualEncoder(channels=16, heads=2, enc_layers=1)
        with pytest.raises(ShapeMismatchError):
            enc(torch.rand(1, 2, 3, 40, 40))
        with pytest.raises(ShapeMismatchError):
            enc(torch.rand(2, 3, 40, 40))


class TestTextEncoder:
    def make(self, channels=64):
        torch.manual_seed(0)
        return TextEncoder(len(d.VOCAB), channels=channels, heads=4)

    def test_shape_contract(self):
        enc = self.make()
        tokens = torch.tensor([d.generate_expression(("square", "red", "small", "left"), 0).tokens])
        pad = torch.zeros_like(tokens, dtype=torch.bool)
        g, e = enc(tokens, pad)
        assert g.shape == (1, tokens.shape[1], 64)
        assert e.shape == (1, 64)

    def test_distinct_templates_distinct_embeddings(self):
        enc = self.make()
        target = ("circle", "blue", "large", "up")
        embeddings = []
        for k in range(2):
            tokens = torch.tensor([d.generate_expression(target, k).tokens])
            pad = torch.zeros_like(tokens, dtype=torch.bool)
            _, e = enc(tokens, pad)
            embeddings.append(e)
        assert not torch.allclose(embeddings[0], embeddings[1])

    def test_all_padding_rejected(self):
        enc = self.make()
        tokens = torch.zeros(1, 4, dtype=torch.long)
        with pytest.raises(DataError):
            enc(tokens, torch.ones(1, 4, dtype=torch.bool))

    def test_out_of_vocabulary_rejected(self):
        enc = self.make()
        tokens = torch.tensor([[len(d.VOCAB) + 3, 2]])
        with pytest.raises(DataError):
            enc(tokens, torch.zeros(1, 2, dtype=torch.bool))

    def test_padding_does_not_change_sentence_embedding(self):
        enc = self.make()
        tokens = torch.tensor([d.generate_expression(("square", "red", "small", "left"), 0).tokens])
        pad = torch.zeros_like(tokens, dtype=torch.bool)
        _, e_plain = enc(tokens, pad)
        padded = torch.cat([tokens, torch.zeros(1, 3, dtype=torch.long)], dim=1)
        pad2 = torch.cat([pad, torch.ones(1, 3, dtype=torch.bool)], dim=1)
        _, e_padded = enc(padded, pad2)
        assert torch.allclose(e_plain, e_padded, atol=1e-6)
