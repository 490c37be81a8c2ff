import logging
import os
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..lpd.planner import LpdSettings
from ..radio.channel import ChannelParams
from ..swarm.dynamics import SwarmParams
from ..gkae.train import TrainConfig
from ..utils.errors import ConfigError
from ..utils.storage import read_json

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "output"


class ScenarioConfig(BaseModel):
    """One scenario: UAV flock, channel, planner, training and output location."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    swarm: SwarmParams = Field(default_factory=SwarmParams)
    channel: ChannelParams = Field(default_factory=ChannelParams)
    lpd: LpdSettings = Field(default_factory=LpdSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    horizons: List[int] = Field(default_factory=lambda: [40, 80])
    predict_horizon: int = 80
    eps_pred_gate: float = 0.01
    output_dir: str = DEFAULT_OUTPUT_DIR

    @field_validator("horizons")
    @classmethod
    def _check_horizons(cls, value):
        if not value or min(value) < 2:
            raise ValueError(f"horizons must be a non-empty list of p >= 2, got {value}")
        return sorted(set(value))

    @field_validator("predict_horizon")
    @classmethod
    def _check_predict_horizon(cls, value):
        if value < 2:
            raise ValueError(f"predict_horizon must be >= 2, got {value}")
        return value

    @model_validator(mode="after")
    def _check_consistency(self):
        # sections that must agree before any command runs
        self.train.hyper(self.swarm.L)
        if not 0 <= self.lpd.C_tilde <= self.lpd.N - 1:
            raise ConfigError(f"lpd.C_tilde={self.lpd.C_tilde} needs 0 <= C_tilde <= N-1 (N={self.lpd.N})")
        return self

    def path(self, name):
        return os.path.join(self.output_dir, name)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return self.model_copy(update={
            "swarm": self.swarm.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
        })


def load_scenario(path: Optional[str] = None, seed: Optional[int] = None,
                  output_dir: Optional[str] = None) -> ScenarioConfig:
    """
    Build a validated ScenarioConfig.

    Precedence: explicit arguments (CLI flags) > GKAE_* environment variables
    (a .env file is honored) > the JSON config file > built-in defaults.
    """
    load_dotenv()
    data = read_json(path, kind="config") if path else {}
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario config {path or '<defaults>'}: {e}") from e

    env_seed = os.getenv("GKAE_SEED")
    if seed is None and env_seed:
        try:
            seed = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"GKAE_SEED must be an integer, got {env_seed!r}") from e
    if seed is not None:
        config = config.with_seed(seed)

    output_dir = output_dir or os.getenv("GKAE_OUTPUT_DIR")
    if output_dir:
        config = config.model_copy(update={"output_dir": output_dir})
    logger.debug(f"Scenario config: {config.model_dump_json()}")
    return config
