import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .dynamics import SwarmParams, Trajectory, UavState, neighbors
from ..utils.errors import ConfigError, DatasetFormatError, NormalizationOverflowError, VersionMismatchError
from ..utils.storage import read_json, write_json

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
AREA_MARGIN = 0.10
OVERFLOW_SLACK = 0.05


@dataclass(frozen=True)
class Normalizer:
    """Fixed min-max transform shared by every trajectory drawn from the same area."""
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).reshape(3))
        if np.any(self.scale <= 0):
            raise ConfigError(f"Normalizer scale must be strictly positive, got {self.scale}")

    @classmethod
    def from_area(cls, params: SwarmParams, margin: float = AREA_MARGIN):
        width, height = params.area
        altitude_span = max(params.altitude, 1.0) * (1.0 + margin)
        return cls(
            offset=[-margin * width, -margin * height, 0.0],
            scale=[(1 + 2 * margin) * width, (1 + 2 * margin) * height, altitude_span],
        )

    def normalize(self, points):
        return (np.asarray(points, dtype=float) - self.offset) / self.scale

    def denormalize(self, features):
        return np.asarray(features, dtype=float) * self.scale + self.offset

    def check_bounds(self, points, slack: float = OVERFLOW_SLACK):
        points = np.asarray(points, dtype=float)
        non_finite = ~np.isfinite(points).all(axis=-1)
        if np.any(non_finite):
            rows = np.flatnonzero(non_finite).tolist()
            raise NormalizationOverflowError(f"UAV(s) {rows} have non-finite coordinates")
        low = self.offset - slack * self.scale
        high = self.offset + (1 + slack) * self.scale
        outside = np.any((points < low) | (points > high), axis=-1)
        if np.any(outside):
            rows = np.flatnonzero(outside).tolist()
            raise NormalizationOverflowError(
                f"UAV(s) {rows} outside normalization box [{low}, {high}]"
            )

    def to_dict(self):
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(offset=data["offset"], scale=data["scale"])


@dataclass(frozen=True)
class GraphSnapshot:
    t: int
    features: np.ndarray   # (L, 3) normalized
    adjacency: np.ndarray  # (L, L) bool, symmetric, zero diagonal

    @property
    def L(self):
        return self.features.shape[0]

    def to_dict(self):
        return {
            "t": self.t,
            "features": self.features.tolist(),
            "adjacency": self.adjacency.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        features = np.asarray(data["features"], dtype=float)
        adjacency = np.asarray(data["adjacency"], dtype=bool)
        if features.ndim != 2 or features.shape[1] != 3:
            raise DatasetFormatError(f"snapshot t={data.get('t')} features have shape {features.shape}")
        if adjacency.shape != (features.shape[0], features.shape[0]):
            raise DatasetFormatError(f"snapshot t={data.get('t')} adjacency has shape {adjacency.shape}")
        return cls(t=int(data["t"]), features=features, adjacency=adjacency)


@dataclass
class TrajectoryDataset:
    snapshots: List[GraphSnapshot]
    normalizer: Normalizer
    source_params: SwarmParams

    def __len__(self):
        return len(self.snapshots)

    @property
    def L(self):
        return self.snapshots[0].L

    def features(self) -> np.ndarray:
        """(T+1, L, 3) stacked normalized features."""
        return np.stack([s.features for s in self.snapshots])

    def adjacency(self) -> np.ndarray:
        return np.stack([s.adjacency for s in self.snapshots])

    def subset(self, start, stop=None):
        return TrajectoryDataset(self.snapshots[start:stop], self.normalizer, self.source_params)

    def to_dict(self):
        return {
            "version": DATASET_VERSION,
            "normalizer": self.normalizer.to_dict(),
            "params": self.source_params.to_dict(),
            "snapshots": [s.to_dict() for s in self.snapshots],
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or "version" not in data:
            raise DatasetFormatError("dataset document has no version field")
        if data["version"] != DATASET_VERSION:
            raise VersionMismatchError("dataset", data["version"], DATASET_VERSION)
        try:
            snapshots = [GraphSnapshot.from_dict(s) for s in data["snapshots"]]
            normalizer = Normalizer.from_dict(data["normalizer"])
            params = SwarmParams.from_dict(data["params"])
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"Malformed dataset: {e}") from e
        if not snapshots or len({s.L for s in snapshots}) != 1:
            raise DatasetFormatError("dataset snapshots are empty or disagree on L")
        return cls(snapshots=snapshots, normalizer=normalizer, source_params=params)


def build_snapshot(states: Sequence[UavState], D_tilde: float, normalizer: Normalizer, t: int = 0) -> GraphSnapshot:
    """Normalized coordinates plus the raw-meter neighbor adjacency for one timestep."""
    points = np.array([s.position for s in states], dtype=float)
    normalizer.check_bounds(points)

    adjacency = np.zeros((len(states), len(states)), dtype=bool)
    for k, group in enumerate(neighbors(points, D_tilde)):
        adjacency[k, sorted(group)] = True
    return GraphSnapshot(t=t, features=normalizer.normalize(points), adjacency=adjacency)


def make_dataset(trajectory: Trajectory, D_tilde: float = None) -> TrajectoryDataset:
    if not trajectory.states:
        raise ConfigError("make_dataset needs a non-empty trajectory")
    params = trajectory.params
    D_tilde = params.D_tilde if D_tilde is None else D_tilde
    normalizer = Normalizer.from_area(params)
    snapshots = [
        build_snapshot(states, D_tilde, normalizer, t=t)
        for t, states in enumerate(trajectory.states)
    ]
    logger.info(f"Built dataset with {len(snapshots)} snapshots of {params.L} UAVs")
    return TrajectoryDataset(snapshots=snapshots, normalizer=normalizer, source_params=params)


def save_dataset(dataset: TrajectoryDataset, path):
    return write_json(path, dataset.to_dict())


def load_dataset(path) -> TrajectoryDataset:
    return TrajectoryDataset.from_dict(read_json(path, kind="dataset"))
