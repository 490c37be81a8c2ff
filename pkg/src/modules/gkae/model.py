"""
Graph Koopman autoencoder.

    features (L x 3) --SAGE x3--> per-node embeddings --stack--> z (L*8)
    z --FC x3--> g (b) --K^k--> g' --FC x3--> z_hat --per-node linear--> x_hat (L x 3)

The graph decoder is a single linear map shared by every node, so the pipeline
stays permutation equivariant in the node blocks. Every tensor is float64.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from torch import nn
from torch_geometric.nn import SAGEConv
from torch_geometric.utils import dense_to_sparse

from ..swarm.swarm_graph import GraphSnapshot
from ..utils.errors import ConfigError, DatasetFormatError, HorizonError, VersionMismatchError
from ..utils.storage import read_json, write_json

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
K_INIT_STD = 0.01

ACTIVATIONS = {
    "elu": nn.functional.elu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


class GkaeHyper(BaseModel):
    """
    Layer sizes and activations. fc_activation is applied after the hidden
    fully-connected layers only: the last encoder layer (g) and the last decoder
    layer (z_hat) are linear, so K acts on an unbounded latent space.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    L: int = 4
    b: int = 10
    sage_widths: Tuple[int, ...] = (3, 32, 32, 8)
    latent_hidden: Tuple[int, ...] = (64, 64)
    sage_activation: str = "elu"
    fc_activation: str = "tanh"

    @field_validator("L", "b")
    @classmethod
    def _check_positive(cls, value, info):
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {value}")
        return value

    @field_validator("sage_activation", "fc_activation")
    @classmethod
    def _check_activation(cls, value):
        if value not in ACTIVATIONS:
            raise ValueError(f"unknown activation {value!r}, choose from {sorted(ACTIVATIONS)}")
        return value

    @model_validator(mode="after")
    def _check_depths(self):
        if len(self.sage_widths) != 4:
            raise ValueError(f"sage_widths must describe 3 SAGE layers, got {self.sage_widths}")
        if len(self.latent_hidden) != 2:
            raise ValueError(f"latent_hidden must describe 3 FC layers, got {self.latent_hidden}")
        return self

    @property
    def node_dim(self):
        return self.sage_widths[-1]

    @property
    def z_dim(self):
        return self.L * self.node_dim

    @property
    def latent_widths(self):
        """Encoder widths from z to g; the decoder runs them in reverse."""
        return [self.z_dim, *self.latent_hidden, self.b]

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid GKAE hyperparameters: {e}") from e


@dataclass
class LatentState:
    z: torch.Tensor
    g: torch.Tensor


class SageLayer(nn.Module):
    """
    out_k = act(W [x_k || mean_{l in alpha_k} x_l]) on top of a mean-aggregating SAGEConv.

    W is split as [lin_r | lin_l]: lin_r acts on the node itself, lin_l on the neighbor
    mean. An empty neighborhood aggregates to 0. Leading batch dimensions are folded
    into one disjoint graph so each snapshot keeps its own adjacency.
    """

    def __init__(self, in_dim, out_dim, activation="elu"):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.conv = SAGEConv(in_dim, out_dim, aggr="mean", bias=False).to(DTYPE)

    @property
    def weight(self) -> torch.Tensor:
        """The combined (out, 2 * in) matrix W."""
        return torch.cat([self.conv.lin_r.weight, self.conv.lin_l.weight], dim=1)

    def load_weight(self, weight):
        weight = torch.as_tensor(weight, dtype=DTYPE)
        if weight.shape != (self.out_dim, 2 * self.in_dim):
            raise ConfigError(f"SAGE weight must be {(self.out_dim, 2 * self.in_dim)}, got {tuple(weight.shape)}")
        with torch.no_grad():
            self.conv.lin_r.weight.copy_(weight[:, :self.in_dim])
            self.conv.lin_l.weight.copy_(weight[:, self.in_dim:])

    def forward(self, x, adjacency):
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"SAGE layer expects {self.in_dim} features, got {x.shape[-1]}")
        nodes = x.shape[-2]
        if adjacency.shape[-1] != nodes or adjacency.shape[-2] != nodes:
            raise ConfigError(f"adjacency {tuple(adjacency.shape)} does not match {nodes} nodes")
        lead = x.shape[:-2]
        adjacency = adjacency.expand(*lead, nodes, nodes).reshape(-1, nodes, nodes) != 0
        edge_index, _ = dense_to_sparse(adjacency)
        out = self.conv(x.reshape(-1, self.in_dim), edge_index)
        return ACTIVATIONS[self.activation](out.reshape(*lead, nodes, self.out_dim))


class GkaeModel(nn.Module):
    """All trainable weights: SAGE stack, graph decoder, KAE encoder/decoder and K."""

    def __init__(self, hyper: GkaeHyper, seed: int = 0):
        super().__init__()
        self.hyper = hyper
        self.seed = seed

        widths = hyper.sage_widths
        self.sage = nn.ModuleList(
            SageLayer(widths[i], widths[i + 1], hyper.sage_activation) for i in range(len(widths) - 1)
        )
        self.graph_decoder = nn.Linear(hyper.node_dim, widths[0], dtype=DTYPE)

        latent = hyper.latent_widths
        self.kae_encoder = nn.ModuleList(
            nn.Linear(latent[i], latent[i + 1], dtype=DTYPE) for i in range(len(latent) - 1)
        )
        reverse = latent[::-1]
        self.kae_decoder = nn.ModuleList(
            nn.Linear(reverse[i], reverse[i + 1], dtype=DTYPE) for i in range(len(reverse) - 1)
        )
        self.K = nn.Parameter(torch.empty(hyper.b, hyper.b, dtype=DTYPE))
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name == "K":
                    param.copy_(torch.eye(self.hyper.b, dtype=DTYPE))
                    param.add_(K_INIT_STD * torch.randn(param.shape, generator=gen, dtype=DTYPE))
                    continue
                # uniform fan-in: biases share their layer's fan-in
                owner = self.get_submodule(name.rsplit(".", 1)[0])
                fan_in = owner.weight.shape[1]
                bound = 1.0 / np.sqrt(fan_in)
                param.uniform_(-bound, bound, generator=gen)

    def _fc_stack(self, layers, x):
        act = ACTIVATIONS[self.hyper.fc_activation]
        for i, layer in enumerate(layers):
            x = layer(x)
            # hidden layers only; g and z_hat stay linear
            if i < len(layers) - 1:
                x = act(x)
        return x

    def graph_encode(self, features, adjacency):
        if features.shape[-2:] != (self.hyper.L, self.hyper.sage_widths[0]):
            raise ConfigError(
                f"features must be (L={self.hyper.L}, {self.hyper.sage_widths[0]}), got {tuple(features.shape)}"
            )
        x = features
        for layer in self.sage:
            x = layer(x, adjacency)
        return x.reshape(*x.shape[:-2], self.hyper.z_dim)

    def kae_encode(self, z):
        if z.shape[-1] != self.hyper.z_dim:
            raise ConfigError(f"z must have length {self.hyper.z_dim}, got {z.shape[-1]}")
        return self._fc_stack(self.kae_encoder, z)

    def kae_decode(self, g):
        if g.shape[-1] != self.hyper.b:
            raise ConfigError(f"g must have length {self.hyper.b}, got {g.shape[-1]}")
        return self._fc_stack(self.kae_decoder, g)

    def graph_decode(self, z):
        if z.shape[-1] != self.hyper.z_dim:
            raise ConfigError(f"z must have length {self.hyper.z_dim}, got {z.shape[-1]}")
        blocks = z.reshape(*z.shape[:-1], self.hyper.L, self.hyper.node_dim)
        return self.graph_decoder(blocks)

    def encode(self, features, adjacency) -> LatentState:
        z = self.graph_encode(features, adjacency)
        return LatentState(z=z, g=self.kae_encode(z))

    def decode_latent(self, g):
        return self.graph_decode(self.kae_decode(g))

    def rollout_tensor(self, features, adjacency, p):
        """Predicted features for t = 2..p, shape (p-1, L, 3), from the snapshot at t = 1."""
        if p < 2:
            raise HorizonError(f"rollout horizon p must be >= 2, got {p}")
        g = self.encode(features, adjacency).g
        predictions = []
        for _ in range(p - 1):
            g = g @ self.K.T
            predictions.append(self.decode_latent(g))
        return torch.stack(predictions)

    def koopman_eigenvalues(self) -> np.ndarray:
        with torch.no_grad():
            return torch.linalg.eigvals(self.K).numpy()

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "hyper": self.hyper.model_dump(mode="json"),
            "seed": self.seed,
            "weights": {
                name: {"shape": list(t.shape), "values": t.detach().flatten().tolist()}
                for name, t in self.state_dict().items()
            },
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or "version" not in data:
            raise DatasetFormatError("checkpoint has no version field")
        if data["version"] != CHECKPOINT_VERSION:
            raise VersionMismatchError("checkpoint", data["version"], CHECKPOINT_VERSION)
        try:
            model = cls(GkaeHyper.from_dict(data["hyper"]), seed=int(data["seed"]))
            state = {
                name: torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
                for name, entry in data["weights"].items()
            }
            model.load_state_dict(state, strict=True)
        except (KeyError, RuntimeError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"Malformed checkpoint: {e}") from e
        if not all(torch.isfinite(p).all() for p in model.parameters()):
            raise DatasetFormatError("checkpoint holds non-finite weights")
        return model


def as_tensor(array):
    if isinstance(array, torch.Tensor):
        return array.to(DTYPE)
    return torch.as_tensor(np.asarray(array, dtype=float), dtype=DTYPE)


def sage_forward(layer: SageLayer, features, adjacency):
    return layer(as_tensor(features), as_tensor(adjacency))


def graph_encode(features, adjacency, model: GkaeModel):
    return model.graph_encode(as_tensor(features), as_tensor(adjacency))


def kae_encode(z, model: GkaeModel):
    return model.kae_encode(as_tensor(z))


def kae_decode(g, model: GkaeModel):
    return model.kae_decode(as_tensor(g))


def graph_decode(z, model: GkaeModel):
    return model.graph_decode(as_tensor(z))


def koopman_advance(g, K, k: int):
    """K^k g by repeated multiplication; g may carry leading batch dimensions."""
    if k < 0:
        raise ConfigError(f"koopman_advance needs k >= 0, got {k}")
    for _ in range(k):
        g = g @ K.T
    return g


def rollout(snapshot: GraphSnapshot, model: GkaeModel, p: int) -> np.ndarray:
    """Encode once at t = 1 and decode K^(t-1) g(1) for t = 2..p; returns (p-1, L, 3)."""
    with torch.no_grad():
        predicted = model.rollout_tensor(as_tensor(snapshot.features), as_tensor(snapshot.adjacency), p)
    return predicted.numpy()


def save_checkpoint(model: GkaeModel, path):
    return write_json(path, model.to_dict())


def load_checkpoint(path) -> GkaeModel:
    return GkaeModel.from_dict(read_json(path, kind="checkpoint"))
