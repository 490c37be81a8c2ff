import json

import numpy as np
import pytest

from src.modules.swarm.dynamics import SwarmParams, UavState, simulate
from src.modules.swarm.swarm_graph import (
    DATASET_VERSION,
    Normalizer,
    build_snapshot,
    load_dataset,
    make_dataset,
    save_dataset,
)
from src.modules.utils.errors import DatasetFormatError, NormalizationOverflowError, VersionMismatchError


def _states(points):
    return [UavState(id=i, x=x, y=y, h=h, phi=0.0) for i, (x, y, h) in enumerate(points)]


@pytest.fixture
def normalizer():
    return Normalizer.from_area(SwarmParams())


def test_table_one_adjacency_is_complete(normalizer):
    params = SwarmParams()
    trajectory = simulate(params, T=1)
    snapshot = build_snapshot(trajectory.states[0], params.D_tilde, normalizer)
    assert np.array_equal(snapshot.adjacency, ~np.eye(4, dtype=bool))


def test_offset_corner_maps_to_origin(normalizer):
    point = [normalizer.offset[0], normalizer.offset[1], 200.0]
    features = normalizer.normalize(point)
    assert features[0] == pytest.approx(0.0)
    assert features[1] == pytest.approx(0.0)
    assert features[2] == pytest.approx(200.0 / normalizer.scale[2])


def test_denormalize_inverts_normalize(normalizer):
    points = np.array([[10.0, 4990.0, 200.0], [2500.0, 2500.0, 200.0]])
    assert np.allclose(normalizer.denormalize(normalizer.normalize(points)), points)


def test_adjacency_hand_example(normalizer):
    snapshot = build_snapshot(_states([(0, 0, 200), (50, 0, 200), (200, 0, 200)]), 100.0, normalizer)
    expected = np.zeros((3, 3), dtype=bool)
    expected[0, 1] = expected[1, 0] = True
    assert np.array_equal(snapshot.adjacency, expected)


def test_overflow_is_rejected(normalizer):
    with pytest.raises(NormalizationOverflowError):
        build_snapshot(_states([(0, 0, 200), (9000, 0, 200)]), 100.0, normalizer)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_position_is_rejected(normalizer, bad):
    with pytest.raises(NormalizationOverflowError, match=r"\[1\]"):
        normalizer.check_bounds([(0.0, 0.0, 200.0), (bad, 0.0, 200.0)])
    with pytest.raises(NormalizationOverflowError):
        build_snapshot(_states([(0, 0, 200), (10, bad, 200)]), 100.0, normalizer)


def test_dataset_length_and_range():
    trajectory = simulate(SwarmParams(seed=2), T=1000)
    dataset = make_dataset(trajectory)
    assert len(dataset) == 1001
    assert dataset.features().shape == (1001, 4, 3)
    assert dataset.features().min() >= 0.0
    assert dataset.features().max() <= 1.0


def test_subset_shares_normalizer():
    dataset = make_dataset(simulate(SwarmParams(), T=20))
    tail = dataset.subset(15)
    assert len(tail) == 6
    assert tail.normalizer is dataset.normalizer
    assert tail.snapshots[0].t == 15


def test_dataset_file_reload(tmp_path):
    dataset = make_dataset(simulate(SwarmParams(seed=4), T=30))
    path = tmp_path / "dataset.json"
    save_dataset(dataset, path)
    reloaded = load_dataset(path)
    assert len(reloaded) == len(dataset)
    assert np.array_equal(reloaded.features(), dataset.features())
    assert np.array_equal(reloaded.adjacency(), dataset.adjacency())
    assert reloaded.source_params == dataset.source_params


def test_unsupported_version_is_named(tmp_path):
    dataset = make_dataset(simulate(SwarmParams(), T=2))
    document = dataset.to_dict()
    document["version"] = DATASET_VERSION + 1
    path = tmp_path / "dataset.json"
    path.write_text(json.dumps(document))
    with pytest.raises(VersionMismatchError) as excinfo:
        load_dataset(path)
    assert excinfo.value.found == DATASET_VERSION + 1


def test_malformed_snapshot(tmp_path):
    document = make_dataset(simulate(SwarmParams(), T=2)).to_dict()
    document["snapshots"][1]["adjacency"] = [[False]]
    path = tmp_path / "dataset.json"
    path.write_text(json.dumps(document))
    with pytest.raises(DatasetFormatError):
        load_dataset(path)
