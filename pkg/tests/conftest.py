import os

import numpy as np
import pytest

from rit.config import PipelineConfig, SyntheticSceneConfig
from rit.numerics import set_checked
from rit.pointcloud import NO_INSTANCE, Scan


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RIT_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RIT_SLOW=1 to run the benchmark tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _checked_tensors():
    set_checked(True)
    yield
    set_checked(True)


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("RIT_SEED", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_scan(xyz, doppler=None, instance=None, rcs=None, pose=None, frame_id="0000") -> Scan:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    instance = np.full(n, NO_INSTANCE) if instance is None else np.asarray(instance)
    return Scan(
        xyz=xyz,
        rcs=np.zeros(n) if rcs is None else rcs,
        doppler=np.zeros(n) if doppler is None else doppler,
        moving=instance >= 0,
        instance=instance,
        pose=np.eye(4) if pose is None else pose,
        frame_id=frame_id,
    )


@pytest.fixture
def scan_factory():
    return make_scan


def tiny_pipeline(seed: int = 3) -> PipelineConfig:
    """Smallest model that still has two backbone stages."""
    cfg = PipelineConfig(seed=seed)
    cfg.model.T = 1
    cfg.model.d1, cfg.model.d2 = 2, 2
    cfg.model.k_local = 4
    cfg.backbone.widths = [4, 8]
    cfg.backbone.blocks = [1, 1]
    cfg.backbone.s1_pre_fusion = 1
    cfg.backbone.k_attn = 4
    cfg.backbone.k_down = 4
    cfg.head.k_similarity = 4
    cfg.head.teacher_forcing_epochs = 0
    cfg.train.epochs = 3
    cfg.train.batch_size = 4
    cfg.train.lr = 1e-2
    cfg.train.augment = False
    cfg.synth = SyntheticSceneConfig(
        n_sequences=1,
        n_frames=5,
        n_instances=2,
        points_per_instance=[3, 5],
        static_points=20,
        fov=20.0,
    )
    cfg.validate()
    return cfg


@pytest.fixture
def tiny_cfg():
    return tiny_pipeline()


@pytest.fixture
def tiny_cfg_factory():
    return tiny_pipeline
