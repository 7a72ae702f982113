"""Shared fixtures.

``default_run`` performs the full default training run (seed 0) once per
session; the trained-model behavior tests and the acceptance suite share it.
"""

import numpy as np
import pytest
import torch

from refvos.config import RunConfig
from refvos.trainer import Dataset, evaluate_checkpoint, train


def small_config(**overrides) -> RunConfig:
    """A fast config for unit tests: few small videos, tiny model."""
    cfg = RunConfig()
    values = {
        "data.height": 32,
        "data.width": 32,
        "data.window": 3,
        "data.train_videos": 6,
        "data.val_videos": 3,
        "data.max_objects": 2,
        "model.channels": 16,
        "model.heads": 2,
        "model.kernels": 2,
        "model.queries": 2,
        "model.enc_layers": 1,
        "model.dec_layers": 1,
        "model.text_dec_layers": 1,
        "model.pyramid_channels": 8,
        "train.epochs": 1,
        "train.batch_size": 4,
    }
    values.update(overrides)
    for key, value in values.items():
        cfg.set(key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = small_config()
    return cfg, Dataset.generate(cfg)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Train the default configuration (seed 0) once; reused by the
    trained-model tests and the end-to-end acceptance criteria."""
    cfg = RunConfig()
    out = tmp_path_factory.mktemp("default_run")
    torch.manual_seed(0)
    np.random.seed(0)
    dataset = Dataset.generate(cfg)
    result = train(cfg, dataset, out)
    report, rows, predictions = evaluate_checkpoint(cfg, result.final_checkpoint, dataset)
    return {
        "cfg": cfg,
        "dataset": dataset,
        "out": out,
        "result": result,
        "report": report,
        "rows": rows,
        "predictions": predictions,
    }
