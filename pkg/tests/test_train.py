import numpy as np
import pytest
import torch

from src.modules.gkae.model import GkaeModel
from src.modules.gkae.train import (
    REPORT_COLUMNS,
    TrainConfig,
    Window,
    epsilon_pred,
    gradients,
    loss_pred,
    loss_rec,
    save_report,
    split_dataset,
    total_loss,
    train,
)
from src.modules.swarm.dynamics import SwarmParams, simulate
from src.modules.swarm.swarm_graph import GraphSnapshot, make_dataset
from src.modules.utils.errors import ConfigError, HorizonError
from src.modules.utils.storage import read_csv

SMALL = dict(b=2, sage_widths=(3, 4, 4, 2), latent_hidden=(4, 4), progress=False)


def _random_window(L=2, length=3, seed=0):
    rng = np.random.default_rng(seed)
    adjacency = ~np.eye(L, dtype=bool)
    return [GraphSnapshot(t=t, features=rng.uniform(size=(L, 3)), adjacency=adjacency) for t in range(length)]


def test_perfect_model_has_zero_loss(perfect_model, constant_dataset):
    window = constant_dataset.snapshots[:4]
    config = TrainConfig(S_p=4)
    assert loss_rec(window, perfect_model).item() == pytest.approx(0.0, abs=1e-24)
    assert total_loss(window, perfect_model, config).item() == pytest.approx(0.0, abs=1e-24)


def test_single_snapshot_rec_by_hand(perfect_model, constant_dataset):
    with torch.no_grad():
        perfect_model.graph_decoder.bias.fill_(0.1)
    # x_hat = x + 0.1 on all 6 coordinates, z_hat = z
    assert loss_rec(constant_dataset.snapshots[:1], perfect_model).item() == pytest.approx(0.06)


def test_pred_loss_vanishes_on_constant_trajectory(constant_dataset):
    config = TrainConfig(S_p=5, **SMALL)
    model = GkaeModel(config.hyper(2), seed=3)
    with torch.no_grad():
        model.K.copy_(torch.eye(2, dtype=torch.float64))
    assert loss_pred(constant_dataset.snapshots[:5], model, 5).item() == pytest.approx(0.0, abs=1e-24)


def test_pred_loss_needs_full_window(perfect_model, constant_dataset):
    with pytest.raises(HorizonError):
        loss_pred(constant_dataset.snapshots[:3], perfect_model, 5)


def test_total_loss_weights():
    window = _random_window(length=4)
    config = TrainConfig(S_p=4, beta2_loss=0.0, **SMALL)
    model = GkaeModel(config.hyper(2), seed=0)
    assert total_loss(window, model, config).item() == pytest.approx(loss_rec(window, model).item())

    weighted = config.model_copy(update={"beta1_loss": 2.0, "beta2_loss": 3.0})
    expected = 2.0 * loss_rec(window, model) + 3.0 * loss_pred(window, model, 4)
    assert total_loss(window, model, weighted).item() == pytest.approx(expected.item())


def test_gradients_vanish_at_perfect_fixture(perfect_model, constant_dataset):
    grads = gradients(constant_dataset.snapshots[:3], perfect_model, TrainConfig(S_p=3))
    assert max(g.abs().max().item() for g in grads.values()) <= 1e-8


def test_gradients_match_finite_differences():
    config = TrainConfig(S_p=3, **SMALL)
    model = GkaeModel(config.hyper(2), seed=1)
    window = Window.from_snapshots(_random_window(length=3, seed=4))
    grads = gradients(window, model, config)
    h = 1e-5

    checked = []
    for name, param in model.named_parameters():
        flat = param.data.view(-1)
        for index in range(flat.numel()):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + h
                up = total_loss(window, model, config).item()
                flat[index] = original - h
                down = total_loss(window, model, config).item()
                flat[index] = original
            numeric = (up - down) / (2 * h)
            analytic = grads[name].view(-1)[index].item()
            assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(analytic)), f"{name}[{index}]"
        checked.append(name)
    assert sorted(checked) == sorted(grads)
    assert len(checked) == len(list(model.parameters()))


def test_koopman_gradient_sees_every_rollout_step():
    # with the reconstruction term off, S_p=3 adds exactly the K^2 term to S_p=2
    window = Window.from_snapshots(_random_window(length=3, seed=6))
    short = TrainConfig(S_p=2, beta1_loss=0.0, **SMALL)
    model = GkaeModel(short.hyper(2), seed=2)
    long = short.model_copy(update={"S_p": 3})
    two_steps = gradients(window, model, short)["K"]
    three_steps = gradients(window, model, long)["K"]
    assert (three_steps - two_steps).abs().max().item() > 1e-8

    g = model.kae_encode(model.graph_encode(window.features, window.adjacency))
    z_hat = model.kae_decode(g)
    K = model.K
    last = ((z_hat[2] - model.kae_decode(g[0] @ K.T @ K.T)) ** 2).sum()
    [expected] = torch.autograd.grad(last, K)
    assert torch.allclose(three_steps - two_steps, expected, rtol=1e-9, atol=1e-12)


def _tied_model(config, L, seed=0):
    """Random weights, except the KAE treats every node block alike."""
    model = GkaeModel(config.hyper(L), seed=seed)
    gen = torch.Generator().manual_seed(seed + 1)
    first, last = model.kae_encoder[0], model.kae_decoder[-1]
    node_dim = model.hyper.node_dim
    with torch.no_grad():
        block = torch.randn(first.weight.shape[0], node_dim, generator=gen, dtype=torch.float64)
        first.weight.copy_(block.repeat(1, L))
        rows = torch.randn(node_dim, last.weight.shape[1], generator=gen, dtype=torch.float64)
        last.weight.copy_(rows.repeat(L, 1))
        last.bias.copy_(torch.randn(node_dim, generator=gen, dtype=torch.float64).repeat(L))
        model.K.copy_(torch.randn(model.hyper.b, model.hyper.b, generator=gen, dtype=torch.float64) / 2)
    return model


def test_total_loss_ignores_node_order():
    config = TrainConfig(S_p=4, **SMALL)
    model = _tied_model(config, L=3)
    rng = np.random.default_rng(8)
    adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
    features = rng.uniform(size=(4, 3, 3))
    perm = [2, 0, 1]
    window = [GraphSnapshot(t=t, features=features[t], adjacency=adjacency) for t in range(4)]
    permuted = [
        GraphSnapshot(t=t, features=features[t][perm], adjacency=adjacency[np.ix_(perm, perm)])
        for t in range(4)
    ]
    original = total_loss(window, model, config).item()
    assert original > 0
    assert total_loss(permuted, model, config).item() == pytest.approx(original, rel=1e-12)



def test_split_dataset(constant_dataset):
    training, validation = split_dataset(constant_dataset, 0.8)
    assert (len(training), len(validation)) == (8, 2)
    assert validation.snapshots[0].t == 8
    with pytest.raises(ConfigError):
        split_dataset(constant_dataset, 0.05)


def test_epsilon_pred_perfect(perfect_model, constant_dataset):
    assert epsilon_pred(perfect_model, constant_dataset, 8) == pytest.approx(0.0, abs=1e-24)
    with pytest.raises(HorizonError):
        epsilon_pred(perfect_model, constant_dataset, 11)


def test_training_is_deterministic():
    dataset = make_dataset(simulate(SwarmParams(L=2, seed=1), T=30))
    config = TrainConfig(epochs=3, S_p=4, batch=8, seed=7, **SMALL)
    first, report = train(dataset, config)
    second, _ = train(dataset, config)
    a, b = first.state_dict(), second.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert len(report.total) == 3
    assert np.all(np.isfinite(report.total))


def test_training_lowers_the_loss(constant_dataset):
    config = TrainConfig(epochs=20, S_p=4, batch=32, **SMALL)
    _, report = train(constant_dataset, config)
    assert report.total[-1] < report.total[0]


def test_training_reports_held_out_error(constant_dataset, tmp_path):
    training, validation = split_dataset(constant_dataset.subset(0, 10), 0.6)
    config = TrainConfig(epochs=2, S_p=3, **SMALL)
    _, report = train(training, config, validation=validation, horizons=[2, 4])
    assert sorted(report.eps_pred) == [2, 4]
    assert all(v >= 0 for v in report.eps_pred.values())

    path = tmp_path / "train_report.csv"
    save_report(report, path)
    frame = read_csv(path, required_columns=REPORT_COLUMNS)
    assert frame["epoch"].tolist() == [1, 2]


def test_training_needs_enough_snapshots(constant_dataset):
    with pytest.raises(HorizonError):
        train(constant_dataset.subset(0, 4), TrainConfig(S_p=4, **SMALL))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"S_p": 1})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"train_fraction": 1.0})
