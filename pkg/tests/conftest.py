import numpy as np
import pytest
import torch

from ddit.model import DynamicPatchModel, ModelConfig

# Keep timings reproducible and friendly to the 2-core sandbox.
torch.set_num_threads(2)

SMALL = ModelConfig(
    hidden=32, layers=2, heads=2, expansion=4, patch=2, latent_h=32, latent_w=32,
    channels=2, multipliers=(1, 2, 4), lora_rank=4, lora_alpha=4, cond_vocab=4,
)


@pytest.fixture(scope="session")
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def small_model(small_config):
    return DynamicPatchModel(small_config, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
