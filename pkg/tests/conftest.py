import os
import sys

import numpy as np
import pytest
import torch

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

from src.modules.gkae.model import GkaeHyper, GkaeModel  # noqa: E402
from src.modules.swarm.dynamics import SwarmParams  # noqa: E402
from src.modules.swarm.swarm_graph import GraphSnapshot, Normalizer, TrajectoryDataset  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale scenario, minutes of CPU")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_perfect_model(L: int) -> GkaeModel:
    """Identity activations and identity weights: x_hat == x, z_hat == z, K = I."""
    n = 3 * L
    hyper = GkaeHyper(
        L=L, b=n, sage_widths=(3, 3, 3, 3), latent_hidden=(n, n),
        sage_activation="identity", fc_activation="identity",
    )
    model = GkaeModel(hyper, seed=0)
    eye3 = torch.eye(3, dtype=torch.float64)
    with torch.no_grad():
        for layer in model.sage:
            layer.load_weight(torch.cat([eye3, torch.zeros_like(eye3)], dim=1))
        model.graph_decoder.weight.copy_(eye3)
        model.graph_decoder.bias.zero_()
        for layer in [*model.kae_encoder, *model.kae_decoder]:
            layer.weight.copy_(torch.eye(n, dtype=torch.float64))
            layer.bias.zero_()
        model.K.copy_(torch.eye(n, dtype=torch.float64))
    return model


def make_constant_dataset(L: int = 2, length: int = 10) -> TrajectoryDataset:
    """A formation that never moves, all UAVs mutual neighbors."""
    features = np.linspace(0.2, 0.8, 3 * L).reshape(L, 3)
    adjacency = ~np.eye(L, dtype=bool)
    snapshots = [GraphSnapshot(t=t, features=features.copy(), adjacency=adjacency.copy()) for t in range(length)]
    params = SwarmParams(L=L)
    return TrajectoryDataset(snapshots=snapshots, normalizer=Normalizer.from_area(params), source_params=params)


@pytest.fixture
def perfect_model():
    return make_perfect_model(2)


@pytest.fixture
def constant_dataset():
    return make_constant_dataset()


@pytest.fixture
def tiny_scenario(tmp_path):
    """Small enough to simulate, train and plan in a few seconds."""
    return {
        "swarm": {"L": 3, "seed": 3},
        "train": {
            "epochs": 2, "S_p": 5, "batch": 8, "trajectory_steps": 60,
            "sage_widths": [3, 8, 8, 4], "latent_hidden": [16, 16], "b": 4, "progress": False,
        },
        "horizons": [5, 10],
        "predict_horizon": 10,
        "output_dir": str(tmp_path / "out"),
    }
