import numpy as np
import pytest

from cadanet import config as cfgmod
from cadanet.backbone import (BackboneConfig, StageConfig, build)
from cadanet.train import train_loop


def tiny_config(filter="cada", variant="d", num_classes=3, input_hw=(16, 16),
                downsample=None, **stage_kw):
    """Two-stage miniature backbone used across the tests."""
    kw = dict(filter=filter, bases=2, head_channels=4, ca_kernel=3,
              agg_kernel=3)
    kw.update(stage_kw)
    stages = (StageConfig(blocks=1, width=8, stride=1, **kw),
              StageConfig(blocks=1, width=16, stride=2, **kw))
    cfg = BackboneConfig(variant=variant, num_classes=num_classes,
                         input_hw=input_hw, stages=stages,
                         downsample=downsample)
    cfg.validate()
    return cfg


def tiny_model(seed=0, dtype=np.float64, **kw):
    return build(tiny_config(**kw), seed=seed, dtype=dtype)


@pytest.fixture(scope="session")
def toy_exp():
    return cfgmod.resolve(cfgmod.preset_path("toy-cadasp-synthetic"))


@pytest.fixture(scope="session")
def toy_data(toy_exp):
    return cfgmod.load_dataset_pair(toy_exp)


@pytest.fixture(scope="session")
def toy_run(toy_exp, toy_data, tmp_path_factory):
    """One full training of the shipped toy preset, shared by the
    training/pruning/checkpoint tests."""
    out = tmp_path_factory.mktemp("toyrun")
    model = build(toy_exp.backbone, seed=toy_exp.seed)
    train_set, val_set = toy_data
    history = train_loop(model, train_set, val_set, toy_exp.train, str(out))
    return {"model": model, "history": history, "out": out}
