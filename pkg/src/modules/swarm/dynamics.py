import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from scipy.spatial.distance import cdist

from ..utils.errors import ConfigError, DatasetFormatError
from ..utils.storage import read_csv, write_csv

logger = logging.getLogger(__name__)

# Fixed-wing flock defaults (4 UAVs at 20 m/s over a 5 km square)
DEFAULT_NUM_UAVS = 4
DEFAULT_SPEED = 20.0
DEFAULT_WIND_SPEED = 1e-3
DEFAULT_WIND_DIR = 1e-8
DEFAULT_DT = 0.1
DEFAULT_DISTANCE_THRESHOLD = 1e4
DEFAULT_COUPLING_GAIN = 0.1
DEFAULT_AREA = (5000.0, 5000.0)
DEFAULT_ALTITUDE = 200.0
DEFAULT_INITIAL_PHI = 0.25
DEFAULT_SEED = 0

TRAJECTORY_COLUMNS = ["t", "uav_id", "x", "y", "h", "phi"]


class SwarmParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    L: int = DEFAULT_NUM_UAVS
    v: Union[float, List[float]] = DEFAULT_SPEED
    v_w: float = DEFAULT_WIND_SPEED
    theta_w: float = DEFAULT_WIND_DIR
    dt: float = DEFAULT_DT
    D_tilde: float = DEFAULT_DISTANCE_THRESHOLD
    coupling_gain: float = DEFAULT_COUPLING_GAIN
    area: Tuple[float, float] = DEFAULT_AREA
    altitude: float = DEFAULT_ALTITUDE
    seed: int = DEFAULT_SEED

    @field_validator("L")
    @classmethod
    def _check_count(cls, value):
        if value < 1:
            raise ValueError(f"L must be >= 1, got {value}")
        return value

    @field_validator("dt", "D_tilde")
    @classmethod
    def _check_positive(cls, value, info):
        if value <= 0:
            raise ValueError(f"{info.field_name} must be > 0, got {value}")
        return value

    @field_validator("v_w")
    @classmethod
    def _check_wind(cls, value):
        if value < 0:
            raise ValueError(f"v_w must be >= 0, got {value}")
        return value

    @field_validator("area")
    @classmethod
    def _check_area(cls, value):
        if min(value) <= 0:
            raise ValueError(f"area sides must be > 0, got {value}")
        return value

    @model_validator(mode="after")
    def _check_speeds(self):
        speeds = [self.v] if isinstance(self.v, (int, float)) else list(self.v)
        if any(s < 0 for s in speeds):
            raise ValueError(f"speeds must be >= 0, got {self.v}")
        if not isinstance(self.v, (int, float)) and len(speeds) != self.L:
            raise ValueError(f"v has {len(speeds)} entries for L={self.L} UAVs")
        return self

    def speeds(self) -> np.ndarray:
        """Per-UAV forward speed as an (L,) array."""
        return np.broadcast_to(np.asarray(self.v, dtype=float), (self.L,)).copy()

    def to_dict(self):
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid swarm parameters: {e}") from e


@dataclass(frozen=True)
class UavState:
    id: int
    x: float
    y: float
    h: float
    phi: float  # unwrapped

    @property
    def position(self):
        return (self.x, self.y, self.h)


@dataclass
class Trajectory:
    params: SwarmParams
    states: List[List[UavState]]

    @property
    def T(self):
        return len(self.states) - 1

    def positions(self) -> np.ndarray:
        """(T+1, L, 3) array of UAV coordinates in meters."""
        return np.array([[s.position for s in snap] for snap in self.states], dtype=float)

    def headings(self) -> np.ndarray:
        return np.array([[s.phi for s in snap] for snap in self.states], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (t, s.id, s.x, s.y, s.h, s.phi)
            for t, snap in enumerate(self.states)
            for s in snap
        ]
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def neighbors(positions: Sequence[Sequence[float]], D_tilde: float) -> List[Set[int]]:
    """
    Neighbor sets alpha_k: every other UAV within D_tilde (3D Euclidean distance).

    :param positions: L points, each (x, y, h) in meters.
    :param D_tilde: Distance threshold in meters.
    :return: One set of neighbor indices per UAV, never containing the UAV itself.
    """
    if D_tilde <= 0:
        raise ConfigError(f"D_tilde must be > 0, got {D_tilde}")
    points = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ConfigError("neighbors needs at least one UAV")
    within = cdist(points, points) <= D_tilde
    np.fill_diagonal(within, False)
    return [set(np.flatnonzero(row).tolist()) for row in within]


def aggregate_turn(phis: Sequence[float], neighbor_sets: Sequence[Set[int]]) -> List[float]:
    """Mean heading of each UAV's neighbors; an isolated UAV aggregates to 0."""
    if len(phis) != len(neighbor_sets):
        raise ConfigError(f"{len(phis)} headings but {len(neighbor_sets)} neighbor sets")
    phis = np.asarray(phis, dtype=float)
    return [float(np.mean(phis[sorted(group)])) if group else 0.0 for group in neighbor_sets]


def step(states: Sequence[UavState], params: SwarmParams) -> List[UavState]:
    """Advance every UAV by one dt; all right-hand sides use the t-1 snapshot."""
    speeds = params.speeds()
    alpha = neighbors([s.position for s in states], params.D_tilde)
    phi_agg = aggregate_turn([s.phi for s in states], alpha)
    wind_x = params.v_w * np.cos(params.theta_w)
    wind_y = params.v_w * np.sin(params.theta_w)

    advanced = []
    for s, agg in zip(states, phi_agg):
        v = speeds[s.id]
        advanced.append(replace(
            s,
            x=float(s.x + params.dt * (v * np.cos(s.phi) + wind_x)),
            y=float(s.y + params.dt * (v * np.sin(s.phi) + wind_y)),
            phi=float(s.phi + params.coupling_gain * agg),
        ))
    return advanced


def initial_states(params: SwarmParams, random_headings: bool = False) -> List[UavState]:
    """Uniform positions in the area; headings fixed at 0.25 rad unless randomized."""
    rng = np.random.default_rng(params.seed)
    width, height = params.area
    xy = rng.uniform((0.0, 0.0), (width, height), size=(params.L, 2))
    if random_headings:
        phi = rng.uniform(-np.pi, np.pi, size=params.L)
    else:
        phi = np.full(params.L, DEFAULT_INITIAL_PHI)
    return [
        UavState(id=l, x=float(xy[l, 0]), y=float(xy[l, 1]), h=params.altitude, phi=float(phi[l]))
        for l in range(params.L)
    ]


def simulate(params: SwarmParams, T: int, init: Optional[Sequence[UavState]] = None,
             random_headings: bool = False) -> Trajectory:
    if T < 1:
        raise ConfigError(f"simulate needs T >= 1, got {T}")
    if init is None:
        init = initial_states(params, random_headings=random_headings)
    elif len(init) != params.L:
        raise ConfigError(f"init has {len(init)} UAVs, params.L = {params.L}")

    states = [list(init)]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            states.append(step(states[-1], params))
            if not all(np.isfinite([s.x, s.y, s.h, s.phi]).all() for s in states[-1]):
                raise ConfigError(
                    f"swarm state became non-finite at step t={t}; shorten T or lower coupling_gain"
                )
    logger.info(f"Simulated {params.L} UAVs for {T} steps (seed={params.seed})")
    return Trajectory(params=params, states=states)


def save_trajectory(trajectory: Trajectory, path):
    return write_csv(path, trajectory.to_frame())


def load_trajectory(path, params: SwarmParams) -> Trajectory:
    frame = read_csv(path, kind="trajectory", required_columns=TRAJECTORY_COLUMNS)
    frame = frame.sort_values(["t", "uav_id"], kind="stable")
    states = []
    for t, group in frame.groupby("t", sort=True):
        if len(group) != params.L:
            raise DatasetFormatError(f"trajectory row t={t} has {len(group)} UAVs, expected {params.L}")
        states.append([
            UavState(id=int(r.uav_id), x=float(r.x), y=float(r.y), h=float(r.h), phi=float(r.phi))
            for r in group.itertuples(index=False)
        ])
    return Trajectory(params=params, states=states)
