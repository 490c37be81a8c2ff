import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from tqdm import tqdm

from .model import GkaeHyper, GkaeModel, as_tensor, rollout
from ..swarm.swarm_graph import GraphSnapshot, TrajectoryDataset
from ..utils.errors import ConfigError, HorizonError, TrainingDivergedError
from ..utils.storage import write_csv

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["epoch", "total", "rec", "pred"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = 500
    learning_rate: float = 1e-3
    beta1_loss: float = 1.0
    beta2_loss: float = 1.0
    S_p: int = 20
    b: int = 10
    batch: int = 32
    seed: int = 0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    trajectory_steps: int = 2000
    train_fraction: float = 0.8
    sage_widths: Tuple[int, ...] = (3, 32, 32, 8)
    latent_hidden: Tuple[int, ...] = (64, 64)
    progress: bool = True

    @field_validator("S_p")
    @classmethod
    def _check_window(cls, value):
        if value < 2:
            raise ValueError(f"S_p must be >= 2, got {value}")
        return value

    @field_validator("epochs", "batch", "b", "trajectory_steps")
    @classmethod
    def _check_positive(cls, value, info):
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {value}")
        return value

    @field_validator("train_fraction")
    @classmethod
    def _check_fraction(cls, value):
        if not 0 < value < 1:
            raise ValueError(f"train_fraction must be in (0, 1), got {value}")
        return value

    def hyper(self, L: int) -> GkaeHyper:
        return GkaeHyper.from_dict(
            {"L": L, "b": self.b, "sage_widths": self.sage_widths, "latent_hidden": self.latent_hidden}
        )

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid training config: {e}") from e


@dataclass
class TrainReport:
    total: List[float] = field(default_factory=list)
    rec: List[float] = field(default_factory=list)
    pred: List[float] = field(default_factory=list)
    eps_pred: Dict[int, float] = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(1, len(self.total) + 1),
            "total": self.total,
            "rec": self.rec,
            "pred": self.pred,
        }, columns=REPORT_COLUMNS)

    def to_dict(self):
        return {
            "epochs": len(self.total),
            "final_total": self.total[-1] if self.total else None,
            "eps_pred": {str(p): v for p, v in sorted(self.eps_pred.items())},
            "wall_clock_seconds": self.wall_clock_seconds,
        }


@dataclass
class Window:
    """Stacked features (..., T_w, L, 3) and adjacency (..., T_w, L, L) as float64 tensors."""
    features: torch.Tensor
    adjacency: torch.Tensor

    @property
    def length(self):
        return self.features.shape[-3]

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[GraphSnapshot]):
        return cls(
            features=as_tensor(np.stack([s.features for s in snapshots])),
            adjacency=as_tensor(np.stack([s.adjacency for s in snapshots])),
        )


WindowLike = Union[Window, Sequence[GraphSnapshot]]


def _as_window(window: WindowLike) -> Window:
    if isinstance(window, Window):
        return window
    if len(window) < 1:
        raise ConfigError("a loss window needs at least one snapshot")
    return Window.from_snapshots(window)


def _loss_terms(window: Window, model: GkaeModel, S_p: int = None):
    """Per-window L_rec and (when S_p is given) L_pred, shape (...)."""
    z = model.graph_encode(window.features, window.adjacency)   # (..., T, L*8)
    g = model.kae_encode(z)                                      # (..., T, b)
    z_hat = model.kae_decode(g)
    x_hat = model.graph_decode(z)

    rec = ((window.features - x_hat) ** 2).sum(dim=(-3, -2, -1)) + ((z - z_hat) ** 2).sum(dim=(-2, -1))
    if S_p is None:
        return rec, None

    g_roll = g[..., 0, :]
    pred = torch.zeros_like(rec)
    for t in range(1, S_p):
        g_roll = g_roll @ model.K.T
        pred = pred + ((z_hat[..., t, :] - model.kae_decode(g_roll)) ** 2).sum(dim=-1)
    return rec, pred


def loss_rec(window: WindowLike, model: GkaeModel) -> torch.Tensor:
    """Sum over the window of ||x - x_hat||^2 + ||z - z_hat||^2 (mean over any batch axis)."""
    rec, _ = _loss_terms(_as_window(window), model)
    return rec.mean()


def loss_pred(window: WindowLike, model: GkaeModel, S_p: int) -> torch.Tensor:
    """Sum for t = 2..S_p of ||psi^-1(g(t)) - psi^-1(K^(t-1) g(1))||^2."""
    window = _as_window(window)
    if window.length < S_p:
        raise HorizonError(f"window of {window.length} snapshots is shorter than S_p={S_p}")
    _, pred = _loss_terms(window, model, S_p)
    return pred.mean()


def total_loss(window: WindowLike, model: GkaeModel, config: TrainConfig, parts=False):
    window = _as_window(window)
    if window.length < config.S_p:
        raise HorizonError(f"window of {window.length} snapshots is shorter than S_p={config.S_p}")
    rec, pred = _loss_terms(window, model, config.S_p)
    rec, pred = rec.mean(), pred.mean()
    total = config.beta1_loss * rec + config.beta2_loss * pred
    return (total, rec, pred) if parts else total


def gradients(window: WindowLike, model: GkaeModel, config: TrainConfig) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradient of total_loss for every named parameter."""
    names, params = zip(*model.named_parameters())
    loss = total_loss(window, model, config)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        name: torch.zeros_like(p) if grad is None else grad
        for name, p, grad in zip(names, params, grads)
    }


def split_dataset(dataset: TrajectoryDataset, fraction: float = 0.8):
    """Contiguous train/validation blocks."""
    cut = int(len(dataset) * fraction)
    if cut < 1 or cut >= len(dataset):
        raise ConfigError(f"split fraction {fraction} leaves an empty block of {len(dataset)} snapshots")
    return dataset.subset(0, cut), dataset.subset(cut)


def _window_batches(features, adjacency, starts, S_p):
    offsets = torch.arange(S_p)
    index = starts[:, None] + offsets[None, :]
    return Window(features=features[index], adjacency=adjacency[index])


def train(dataset: TrajectoryDataset, config: TrainConfig, validation: TrajectoryDataset = None,
          horizons: Sequence[int] = ()) -> Tuple[GkaeModel, TrainReport]:
    """
    Fit a GKAE on stride-1 windows of length S_p with Adam.

    :param dataset: Training snapshots, at least S_p + 1 of them.
    :param config: Training hyperparameters; the seed fixes both init and shuffling.
    :param validation: Optional held-out block used for the epsilon_pred report.
    :param horizons: Horizons p at which epsilon_pred is reported on validation.
    :return: Trained model and its per-epoch report.
    """
    if len(dataset) < config.S_p + 1:
        raise HorizonError(f"dataset has {len(dataset)} snapshots, training needs at least S_p + 1 = {config.S_p + 1}")

    started = time.perf_counter()
    model = GkaeModel(config.hyper(dataset.L), seed=config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    gen = torch.Generator().manual_seed(config.seed)

    features = as_tensor(dataset.features())
    adjacency = as_tensor(dataset.adjacency())
    n_windows = len(dataset) - config.S_p + 1
    report = TrainReport()
    logger.info(f"Training GKAE (L={dataset.L}, b={config.b}) on {n_windows} windows for {config.epochs} epochs")

    epochs = tqdm(range(1, config.epochs + 1), desc=f"b={config.b}", disable=not config.progress)
    for epoch in epochs:
        order = torch.randperm(n_windows, generator=gen)
        sums = np.zeros(3)
        for start in range(0, n_windows, config.batch):
            starts = order[start:start + config.batch]
            window = _window_batches(features, adjacency, starts, config.S_p)

            optimizer.zero_grad()
            total, rec, pred = total_loss(window, model, config, parts=True)
            total.backward()
            optimizer.step()
            sums += len(starts) * np.array([total.item(), rec.item(), pred.item()])

        epoch_total, epoch_rec, epoch_pred = sums / n_windows
        if not np.isfinite(epoch_total):
            logger.error(f"Loss diverged at epoch {epoch}: {epoch_total}")
            raise TrainingDivergedError(f"non-finite loss {epoch_total} at epoch {epoch}")
        report.total.append(float(epoch_total))
        report.rec.append(float(epoch_rec))
        report.pred.append(float(epoch_pred))
        epochs.set_postfix(loss=f"{epoch_total:.4g}")

    report.wall_clock_seconds = time.perf_counter() - started
    if validation is not None:
        for p in horizons:
            report.eps_pred[p] = epsilon_pred(model, validation, p)
            logger.info(f"b={config.b}: eps_pred(p={p}) = {report.eps_pred[p]:.6g}")
    logger.info(f"Training finished in {report.wall_clock_seconds:.1f}s, final loss {report.total[-1]:.6g}")
    return model, report


def epsilon_pred(model: GkaeModel, dataset: TrajectoryDataset, p: int, start: int = 0) -> float:
    """
    Per-coordinate MSE of the latent rollout against the data over t = 2..p.

    The snapshot at index `start` plays t = 1; the sum is divided by (p-1) * L * 3.
    """
    if p < 2:
        raise HorizonError(f"horizon p must be >= 2, got {p}")
    if len(dataset) - start < p:
        raise HorizonError(f"horizon p={p} exceeds the {len(dataset) - start} snapshots available")
    predicted = rollout(dataset.snapshots[start], model, p)
    truth = dataset.features()[start + 1:start + p]
    return float(((truth - predicted) ** 2).sum() / truth.size)


def save_report(report: TrainReport, path):
    return write_csv(path, report.to_frame())
