import numpy as np
import pytest
import torch

from g2gan.data import synthesize_multidomain
from g2gan.losses import SsimParams


@pytest.fixture(scope="session")
def tiny_dataset():
    """3 domains, 8 paired scenes, 32x32; enough for structural tests."""
    return synthesize_multidomain(3, 8, 32, 32, seed=21)


@pytest.fixture(scope="session")
def small_ssim():
    """SSIM geometry that fits 32x32 and 16x16 inputs."""
    return SsimParams(window_size=5, scales=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
