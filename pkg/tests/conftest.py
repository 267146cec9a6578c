import numpy as np
import pytest
import torch

from mimeforge.conditions import ConditionRanges
from mimeforge.dataset import build_dataset, make_motor_units
from mimeforge.model import ModelConfig, build_model
from mimeforge.teacher import CylinderConfig

torch.set_num_threads(min(2, torch.get_num_threads()))

TINY_GRID = {
    "fibre_count": [120.0, 400.0],
    "nmj": [0.4, 0.6],
    "velocity": [3.0, 4.5],
    "length_ratio": [0.85, 1.15],
}


@pytest.fixture(scope="session")
def tiny_model_cfg() -> ModelConfig:
    return ModelConfig(
        rows=6, cols=8, time_samples=16, latent_dim=4, condition_embed_dim=8,
        base_channels=2, n_experts=4, gate_hidden_dim=8,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_model_cfg):
    model = build_model(tiny_model_cfg, seed=1)
    model.eval()
    return model


@pytest.fixture(scope="session")
def small_cylinder() -> CylinderConfig:
    return CylinderConfig(rows=8, cols=8, raw_duration_s=0.048)


@pytest.fixture(scope="session")
def ranges() -> ConditionRanges:
    return ConditionRanges()


@pytest.fixture(scope="session")
def tiny_dataset(small_cylinder, ranges):
    """2 MUs x 16 grid conditions on an 8x8 grid with a 48-sample window."""
    mus = make_motor_units(2, seed=11)
    return build_dataset(small_cylinder, mus, TINY_GRID, ranges, window=48)


@pytest.fixture(scope="session")
def small_model_cfg() -> ModelConfig:
    """Matches the tiny_dataset grid."""
    return ModelConfig(rows=8, cols=8, time_samples=48, base_channels=4)


@pytest.fixture(scope="session")
def small_model(small_model_cfg):
    model = build_model(small_model_cfg, seed=3)
    model.eval()
    return model


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
