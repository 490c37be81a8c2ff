"""
Terrestrial and air-ground link model.

Ground-to-ground links use SNR = P * d^-eta * nu / N0 against a threshold
gamma_tilde; ground-to-air leakage uses the line-of-sight law P * d^-eta'.
Distances are raw meters with no reference distance.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Set

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from scipy.spatial.distance import cdist

from ..utils.errors import CoLocatedNodesError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_ETA = 5.0
DEFAULT_ETA_PRIME = 2.0
DEFAULT_NOISE_DENSITY_DBM_HZ = -174.0
DEFAULT_BANDWIDTH_HZ = 250e3
DEFAULT_GAMMA_DB = 10.0
DEFAULT_GROUND_SIDE = 500.0

# Closed-form thresholds land on the boundary; accept SNR within this relative slack.
SNR_RTOL = 1e-9


class Fading(str, Enum):
    deterministic_unit = "deterministic_unit"
    rayleigh_power = "rayleigh_power"


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(ratio):
    return 10.0 * np.log10(np.asarray(ratio, dtype=float))


def noise_power_from_density(dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Convert a noise density in dBm/Hz and a bandwidth into watts."""
    if bandwidth_hz <= 0:
        raise ConfigError(f"bandwidth must be > 0, got {bandwidth_hz}")
    return float(10.0 ** ((dbm_per_hz - 30.0) / 10.0) * bandwidth_hz)


# -174 dBm/Hz over 250 kHz, about 1e-15 W; 1e-13 W would put the default 25-node layout over P_max
DEFAULT_NOISE_POWER = noise_power_from_density(DEFAULT_NOISE_DENSITY_DBM_HZ, DEFAULT_BANDWIDTH_HZ)


class ChannelParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: float = DEFAULT_ETA
    eta_prime: float = DEFAULT_ETA_PRIME
    noise_power: float = DEFAULT_NOISE_POWER
    gamma_tilde_db: float = DEFAULT_GAMMA_DB
    fading: Fading = Fading.deterministic_unit
    fading_seed: int = 0
    # When both are set they override noise_power.
    noise_density_dbm_hz: Optional[float] = None
    bandwidth_hz: Optional[float] = None

    @field_validator("eta", "eta_prime", "noise_power")
    @classmethod
    def _check_positive(cls, value, info):
        if value <= 0:
            raise ValueError(f"{info.field_name} must be > 0, got {value}")
        return value

    @model_validator(mode="before")
    @classmethod
    def _derive_noise(cls, data):
        if isinstance(data, dict) and data.get("noise_density_dbm_hz") is not None \
                and data.get("bandwidth_hz") is not None:
            data = dict(data)
            data["noise_power"] = noise_power_from_density(data["noise_density_dbm_hz"], data["bandwidth_hz"])
        return data

    @property
    def gamma_tilde(self) -> float:
        """SNR threshold as a linear ratio."""
        return float(db_to_linear(self.gamma_tilde_db))

    def to_dict(self):
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid channel parameters: {e}") from e


@dataclass(frozen=True)
class GroundLayout:
    positions: np.ndarray  # (N, 3), altitude column all zero

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] not in (2, 3):
            raise ConfigError(f"layout positions must be (N, 2) or (N, 3), got {positions.shape}")
        if positions.shape[1] == 2:
            positions = np.column_stack([positions, np.zeros(len(positions))])
        if np.any(positions[:, 2] != 0):
            raise ConfigError("ground nodes must sit at zero altitude")
        if len(np.unique(positions, axis=0)) != len(positions):
            raise CoLocatedNodesError("ground node positions must be pairwise distinct")
        object.__setattr__(self, "positions", positions)

    @property
    def N(self):
        return len(self.positions)

    def distances(self) -> np.ndarray:
        return cdist(self.positions, self.positions)

    def to_dict(self):
        return {"N": self.N, "positions": self.positions.tolist()}

    @classmethod
    def from_dict(cls, data):
        layout = cls(positions=data["positions"])
        if "N" in data and data["N"] != layout.N:
            raise ConfigError(f"layout declares N={data['N']} but lists {layout.N} positions")
        return layout


def random_layout(N: int, side: float = DEFAULT_GROUND_SIDE, seed: int = 0) -> GroundLayout:
    """N ground nodes uniform in a side x side square."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    while True:
        xy = rng.uniform(0.0, side, size=(N, 2))
        if len(np.unique(xy, axis=0)) == N:
            return GroundLayout(positions=xy)


def sample_fading(size, seed: int = 0) -> np.ndarray:
    """Unit-mean exponential power gains (Rayleigh amplitude)."""
    return np.random.default_rng(seed).exponential(1.0, size=size)


def draw_fading(N: int, seed: int = 0) -> np.ndarray:
    """Symmetric N x N fading matrix with a unit diagonal."""
    gains = sample_fading((N, N), seed=seed)
    upper = np.triu(gains, k=1)
    draws = upper + upper.T
    np.fill_diagonal(draws, 1.0)
    return draws


def _check_distance(d):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise CoLocatedNodesError("distance must be > 0 (co-located nodes)")
    return d


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else value


def snr(P, d, nu, params: ChannelParams):
    """SNR = P * d^-eta * nu / N0 (linear ratio)."""
    d = _check_distance(d)
    if np.any(np.asarray(P) < 0) or np.any(np.asarray(nu) < 0):
        raise ConfigError("snr needs P >= 0 and nu >= 0")
    return _scalar_or_array(P * d ** (-params.eta) * np.asarray(nu, dtype=float) / params.noise_power)


def uav_received_power(P, d, eta_prime: float):
    """Received power at a UAV, P * d^-eta' in watts."""
    d = _check_distance(d)
    if np.any(np.asarray(P) < 0):
        raise ConfigError(f"transmit power must be >= 0, got {P}")
    return _scalar_or_array(P * d ** (-eta_prime))


def _fading_matrix(N, params: ChannelParams, fading_draws=None):
    if fading_draws is not None:
        draws = np.asarray(fading_draws, dtype=float)
        if draws.shape != (N, N):
            raise ConfigError(f"fading draws must be {N}x{N}, got {draws.shape}")
        return draws
    if params.fading == Fading.rayleigh_power:
        return draw_fading(N, seed=params.fading_seed)
    return np.ones((N, N))


def link_matrix(layout: GroundLayout, P: float, params: ChannelParams, fading_draws=None) -> np.ndarray:
    """Boolean N x N matrix, True where j is in C_i."""
    N = layout.N
    d = layout.distances()
    off_diagonal = ~np.eye(N, dtype=bool)
    gains = _fading_matrix(N, params, fading_draws)
    links = np.zeros((N, N), dtype=bool)
    if N > 1:
        snrs = snr(P, d[off_diagonal], gains[off_diagonal], params)
        links[off_diagonal] = snrs >= params.gamma_tilde * (1.0 - SNR_RTOL)
    return links


def link_sets(layout: GroundLayout, P: float, params: ChannelParams, fading_draws=None) -> List[Set[int]]:
    """C_i = {j != i : snr(P, d_ij, nu_ij) >= gamma_tilde}."""
    links = link_matrix(layout, P, params, fading_draws)
    return [set(np.flatnonzero(row).tolist()) for row in links]
