import numpy as np
import pytest
import torch

from talkit.model import ModelConfig
from talkit.synthdata import SourceGeometry, SynthConfig

TINY_SOURCES = {
    "slowfast": SourceGeometry(32, 16, 12),
    "omnivore": SourceGeometry(32, 16, 8),
    "egovlp": SourceGeometry(4, 4, 6),
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_synth_cfg():
    return SynthConfig(
        num_videos=6,
        duration_range=(20.0, 30.0),
        num_classes=3,
        instances_per_video=(1, 3),
        max_instance_duration=8.0,
        long_median=5.0,
        sources=dict(TINY_SOURCES),
        val_fraction=0.34,
        seed=7,
    )


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(
        num_classes=3, max_seq_len=64, num_levels=3, embed_dim=16, num_heads=2, attention_window=5, input_width=26
    )


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
