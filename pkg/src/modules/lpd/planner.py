"""
Uniform transmit-power planning for low probability of detection.

Every ground node transmits with the same power P(t). The three constraints are
monotone in P: the connectivity floor (each node keeps C_tilde links) bounds P
from below, the power cap and the detection threshold at the nearest predicted
UAV bound it from above. Minimizing the largest received power therefore lands
on the connectivity floor whenever the interval is non-empty.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set

import networkx as nx
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from scipy.spatial.distance import cdist

from ..radio.channel import (
    DEFAULT_GROUND_SIDE,
    ChannelParams,
    GroundLayout,
    draw_fading,
    link_matrix,
    link_sets,
    random_layout,
    uav_received_power,
)
from ..utils.errors import CoLocatedNodesError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_NUM_NODES = 25
DEFAULT_P_MAX = 0.1
DEFAULT_MIN_LINKS = 5
DEFAULT_P_DET = 0.5e-6
DEFAULT_GRID_STEP = 1e-5

PLAN_COLUMNS = ["t", "P_star", "feasible", "max_received_W", "margin"]


class LpdSettings(BaseModel):
    """JSON-facing planner settings; `build` turns them into an LpdConfig."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = DEFAULT_NUM_NODES
    ground_side: float = DEFAULT_GROUND_SIDE
    layout_seed: int = 0
    P_max: float = DEFAULT_P_MAX
    C_tilde: int = DEFAULT_MIN_LINKS
    P_det: float = DEFAULT_P_DET
    grid_step: float = DEFAULT_GRID_STEP

    @field_validator("P_max", "P_det", "ground_side", "grid_step")
    @classmethod
    def _check_positive(cls, value, info):
        if value <= 0:
            raise ValueError(f"{info.field_name} must be > 0, got {value}")
        return value

    @field_validator("N", "C_tilde")
    @classmethod
    def _check_count(cls, value, info):
        if value < 0:
            raise ValueError(f"{info.field_name} must be >= 0, got {value}")
        return value

    def build(self, channel: ChannelParams, layout: GroundLayout = None) -> "LpdConfig":
        if layout is None:
            layout = random_layout(self.N, side=self.ground_side, seed=self.layout_seed)
        return LpdConfig(P_max=self.P_max, C_tilde=self.C_tilde, P_det=self.P_det, channel=channel, layout=layout)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid LPD settings: {e}") from e


@dataclass(frozen=True)
class LpdConfig:
    P_max: float
    C_tilde: int
    P_det: float
    channel: ChannelParams
    layout: GroundLayout

    def __post_init__(self):
        if self.P_max <= 0:
            raise ConfigError(f"P_max must be > 0, got {self.P_max}")
        if self.P_det <= 0:
            raise ConfigError(f"P_det must be > 0, got {self.P_det}")
        if not 0 <= self.C_tilde <= self.layout.N - 1:
            raise ConfigError(f"C_tilde={self.C_tilde} needs 0 <= C_tilde <= N-1 (N={self.layout.N})")


@dataclass
class PlanStep:
    t: int
    P_star: float  # nan when infeasible
    feasible: bool
    P_low: float
    P_high: float
    link_sets: List[Set[int]]
    max_received_at_uav: float
    margin: float  # 1 - max_received / P_det


@dataclass
class PowerPlan:
    steps: List[PlanStep] = field(default_factory=list)
    P_det: float = DEFAULT_P_DET

    @property
    def feasible_rate(self):
        return float(np.mean([s.feasible for s in self.steps])) if self.steps else 0.0

    @property
    def max_received(self):
        return max((s.max_received_at_uav for s in self.steps if s.feasible), default=float("nan"))

    @property
    def min_margin(self):
        return min((s.margin for s in self.steps if s.feasible), default=float("nan"))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(s.t, s.P_star, s.feasible, s.max_received_at_uav, s.margin) for s in self.steps],
            columns=PLAN_COLUMNS,
        )

    def to_dict(self):
        return {
            "P_det": self.P_det,
            "feasible_rate": self.feasible_rate,
            "max_received_W": self.max_received,
            "min_margin": self.min_margin,
            "bounds": [{"t": s.t, "P_low": s.P_low, "P_high": s.P_high} for s in self.steps],
        }


def min_connectivity_power(layout: GroundLayout, C_tilde: int, channel: ChannelParams) -> float:
    """
    Least uniform power giving every node at least C_tilde links with nu = 1.

    Node n needs gamma * N0 * d_n^eta, where d_n is its C_tilde-th nearest
    neighbor distance; the binding node is the one with the largest such need.
    """
    if layout.N <= C_tilde:
        raise ConfigError(f"N={layout.N} nodes cannot give each node C_tilde={C_tilde} links")
    if C_tilde == 0:
        return 0.0
    d = layout.distances()
    np.fill_diagonal(d, np.inf)
    kth = np.sort(d, axis=1)[:, C_tilde - 1]
    if np.any(kth <= 0):
        raise CoLocatedNodesError("ground nodes share a location")
    return float(channel.gamma_tilde * channel.noise_power * np.max(kth) ** channel.eta)


def _uav_distances(uav_positions, layout: GroundLayout) -> np.ndarray:
    uavs = np.asarray(uav_positions, dtype=float).reshape(-1, 3)
    d = cdist(uavs, layout.positions)
    if np.any(d <= 0):
        raise CoLocatedNodesError("a UAV sits exactly on a ground node")
    return d


def max_covert_power(uav_positions, layout: GroundLayout, P_det: float, eta_prime: float) -> float:
    """Largest uniform power keeping every UAV at or below P_det."""
    d_min = _uav_distances(uav_positions, layout).min()
    return float(P_det * d_min ** eta_prime)


def max_received_power(P: float, uav_positions, layout: GroundLayout, eta_prime: float) -> float:
    return float(np.max(uav_received_power(P, _uav_distances(uav_positions, layout), eta_prime)))


def solve_uniform(layout: GroundLayout, predictions, config: LpdConfig, t0: int = 1) -> PowerPlan:
    """
    Plan P*(t) for each predicted UAV snapshot.

    :param layout: Ground node positions.
    :param predictions: Sequence of (L, 3) UAV positions in meters, one per planned timestep.
    :param config: Planner constraints.
    :param t0: Time index of the first prediction.
    :return: PowerPlan; infeasible timesteps carry feasible=False and both bounds.
    """
    channel = config.channel
    P_low = min_connectivity_power(layout, config.C_tilde, channel)
    degrees = link_matrix(layout, P_low, channel, np.ones((layout.N, layout.N))).sum(axis=1)
    connected = bool(np.all(degrees >= config.C_tilde))
    links_at_low = link_sets(layout, P_low, channel, np.ones((layout.N, layout.N)))

    plan = PowerPlan(P_det=config.P_det)
    for i, uavs in enumerate(predictions):
        P_high = min(config.P_max, max_covert_power(uavs, layout, config.P_det, channel.eta_prime))
        received = max_received_power(P_low, uavs, layout, channel.eta_prime)
        feasible = connected and P_low <= config.P_max and received <= config.P_det
        plan.steps.append(PlanStep(
            t=t0 + i,
            P_star=P_low if feasible else float("nan"),
            feasible=feasible,
            P_low=P_low,
            P_high=P_high,
            link_sets=links_at_low if feasible else [],
            max_received_at_uav=received,
            margin=1.0 - received / config.P_det,
        ))
    infeasible = [s.t for s in plan.steps if not s.feasible]
    if infeasible:
        logger.warning(f"{len(infeasible)} of {len(plan.steps)} timesteps infeasible (first t={infeasible[0]})")
    return plan


def brute_force_oracle(layout: GroundLayout, uav_positions, config: LpdConfig,
                       grid_step: float = DEFAULT_GRID_STEP) -> Optional[float]:
    """Smallest P on the grid {0, step, ..., P_max} meeting all constraints directly, else None."""
    if grid_step <= 0:
        raise ConfigError(f"grid_step must be > 0, got {grid_step}")
    channel = config.channel
    unit = np.ones((layout.N, layout.N))
    d = _uav_distances(uav_positions, layout)

    for k in range(int(np.floor(config.P_max / grid_step)) + 1):
        P = k * grid_step
        if np.max(uav_received_power(P, d, channel.eta_prime)) > config.P_det:
            # received power only grows with P
            return None
        if all(len(c) >= config.C_tilde for c in link_sets(layout, P, channel, unit)):
            return P
    return None


def link_graph(layout: GroundLayout, P: float, channel: ChannelParams, fading_draws=None) -> nx.Graph:
    """Undirected graph with an edge wherever both directions meet the SNR threshold."""
    links = link_matrix(layout, P, channel, fading_draws)
    graph = nx.Graph()
    graph.add_nodes_from(range(layout.N))
    rows, cols = np.nonzero(np.triu(links & links.T, k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


def connectivity_report(layout: GroundLayout, P: float, channel: ChannelParams, fading_draws=None):
    """Per-node degree |C_n| and the number of connected components of the link graph."""
    degrees = link_matrix(layout, P, channel, fading_draws).sum(axis=1).astype(int).tolist()
    components = nx.number_connected_components(link_graph(layout, P, channel, fading_draws))
    return degrees, components


def topology_edges(layout: GroundLayout, P: float, channel: ChannelParams) -> pd.DataFrame:
    graph = link_graph(layout, P, channel)
    d = layout.distances()
    rows = []
    for i, j in sorted(graph.edges()):
        rows.append((i, j, *layout.positions[i, :2], *layout.positions[j, :2], d[i, j]))
    return pd.DataFrame(rows, columns=["source", "target", "x_source", "y_source", "x_target", "y_target", "distance_m"])


def outage_report(layout: GroundLayout, P: float, channel: ChannelParams, C_tilde: int,
                  trials: int = 100, seed: int = 0) -> dict:
    """
    Links planned at nu = 1 re-evaluated under Rayleigh power draws.

    :return: mean fraction of planned links lost, and the fraction of trials in
        which some node falls below C_tilde links.
    """
    planned = link_matrix(layout, P, channel, np.ones((layout.N, layout.N)))
    n_planned = max(int(planned.sum()), 1)
    lost, degraded = [], 0
    for trial in range(trials):
        faded = link_matrix(layout, P, channel, draw_fading(layout.N, seed=seed + trial))
        lost.append(float((planned & ~faded).sum()) / n_planned)
        degraded += int(np.any(faded.sum(axis=1) < C_tilde))
    return {"link_loss_rate": float(np.mean(lost)), "degree_outage_rate": degraded / trials}


def received_power_frame(plan: PowerPlan, predictions, layout: GroundLayout, eta_prime: float) -> pd.DataFrame:
    """Per-UAV strongest received power at the planned P*(t) (feasible steps only)."""
    rows = []
    for step, uavs in zip(plan.steps, predictions):
        if not step.feasible:
            continue
        received = uav_received_power(step.P_star, _uav_distances(uavs, layout), eta_prime).max(axis=1)
        rows.extend((step.t, l, float(r)) for l, r in enumerate(np.atleast_1d(received)))
    return pd.DataFrame(rows, columns=["t", "uav_id", "received_W"])


def _sweep(values, name, make_config, seeds):
    rows = []
    for value in values:
        powers, feasible = [], []
        for seed in seeds:
            config = make_config(value, seed)
            P = min_connectivity_power(config.layout, config.C_tilde, config.channel)
            powers.append(P)
            feasible.append(P <= config.P_max)
        rows.append((value, float(np.mean(powers)), float(np.mean(feasible))))
        logger.info(f"{name}={value}: mean P* = {rows[-1][1]:.4g} W over {len(seeds)} layouts")
    return pd.DataFrame(rows, columns=[name, "mean_P_star", "feasible_rate"])


def sweep_nodes(values: Sequence[int], settings: LpdSettings, channel: ChannelParams,
                seeds: Sequence[int] = range(20)) -> pd.DataFrame:
    """Mean connectivity-optimal power against N over random layouts."""
    def make(N, seed):
        return settings.model_copy(update={"N": N, "layout_seed": seed}).build(channel)
    return _sweep(values, "N", make, seeds)


def sweep_links(values: Sequence[int], settings: LpdSettings, channel: ChannelParams,
                seeds: Sequence[int] = range(20)) -> pd.DataFrame:
    def make(C, seed):
        return settings.model_copy(update={"C_tilde": C, "layout_seed": seed}).build(channel)
    return _sweep(values, "C_tilde", make, seeds)


def sweep_snr(values: Sequence[float], settings: LpdSettings, channel: ChannelParams,
              seeds: Sequence[int] = range(20)) -> pd.DataFrame:
    def make(gamma_db, seed):
        swept = channel.model_copy(update={"gamma_tilde_db": gamma_db})
        return settings.model_copy(update={"layout_seed": seed}).build(swept)
    return _sweep(values, "gamma_tilde_db", make, seeds)
