import pytest

from refvos.config import RunConfig
from refvos.errors import ConfigError


def test_defaults_present():
    cfg = RunConfig()
    assert cfg["data.height"] == 64
    assert cfg["model.queries"] == 5
    assert cfg["train.lr_decay_epochs"] == [10, 17]
    assert cfg["loss.constraint"] == "rd+ra"


def test_unknown_key_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("data.hieght", "64")
    with pytest.raises(ConfigError):
        cfg["nope"]


def test_bad_value_rejected():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("data.height", "tall")
    with pytest.raises(ConfigError):
        cfg.set("loss.constraint", "pointwise")


def test_file_parsing_with_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# geometry\n"
        "data.height = 32\n"
        "data.width = 32   # square frames\n"
        "\n"
        "train.lr_decay_epochs = 2,4\n",
        encoding="utf-8",
    )
    cfg = RunConfig.from_file(path)
    assert cfg["data.height"] == 32
    assert cfg["train.lr_decay_epochs"] == [2, 4]


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("data.height 32\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_overrides_and_roundtrip(tmp_path):
    cfg = RunConfig()
    cfg.apply_overrides(["data.window=3", "loss.constraint=pw"])
    assert cfg["data.window"] == 3
    out = tmp_path / "resolved.cfg"
    cfg.write(out)
    again = RunConfig.from_file(out)
    assert dict(again.items()) == dict(cfg.items())


def test_override_requires_equals():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["data.window"])
