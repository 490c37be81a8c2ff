import numpy as np
import pytest

from src.modules.radio.channel import (
    ChannelParams,
    Fading,
    GroundLayout,
    db_to_linear,
    draw_fading,
    linear_to_db,
    link_sets,
    noise_power_from_density,
    random_layout,
    sample_fading,
    snr,
    uav_received_power,
)
from src.modules.utils.errors import CoLocatedNodesError, ConfigError

LINE = GroundLayout(positions=[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)])


@pytest.fixture
def channel():
    return ChannelParams(noise_power=1e-13)


def test_snr_hand_example(channel):
    assert snr(0.1, 100.0, 1.0, channel) == pytest.approx(100.0)


def test_snr_zero_power(channel):
    assert snr(0.0, 100.0, 1.0, channel) == 0.0


def test_snr_rejects_co_located(channel):
    with pytest.raises(CoLocatedNodesError):
        snr(0.1, 0.0, 1.0, channel)


def test_threshold_is_ten_db(channel):
    assert channel.gamma_tilde == pytest.approx(10.0)
    assert db_to_linear(20.0) == pytest.approx(100.0)


def test_link_sets_line(channel):
    assert link_sets(LINE, 0.01, channel) == [{1}, {0, 2}, {1}]


def test_link_sets_zero_power(channel):
    assert link_sets(LINE, 0.0, channel) == [set(), set(), set()]


def test_link_sets_saturate(channel):
    assert [len(c) for c in link_sets(LINE, 1e6, channel)] == [2, 2, 2]


def test_link_sets_never_contain_self(channel):
    layout = random_layout(12, seed=3)
    for i, group in enumerate(link_sets(layout, 0.05, channel)):
        assert i not in group


def test_rayleigh_fading_is_seeded():
    channel = ChannelParams(fading=Fading.rayleigh_power, fading_seed=9, noise_power=1e-13)
    layout = random_layout(10, seed=1)
    assert link_sets(layout, 0.05, channel) == link_sets(layout, 0.05, channel)


def test_draw_fading_shape():
    draws = draw_fading(6, seed=2)
    assert np.array_equal(draws, draws.T)
    assert np.all(np.diag(draws) == 1.0)
    assert np.all(draws > 0)


def test_uav_received_power():
    assert uav_received_power(0.01, 200.0, 2.0) == pytest.approx(2.5e-7)
    assert uav_received_power(0.0, 200.0, 2.0) == 0.0


def test_noise_from_density():
    assert noise_power_from_density(-174.0, 250e3) == pytest.approx(9.95e-16, rel=1e-2)
    with pytest.raises(ConfigError):
        noise_power_from_density(-174.0, 0.0)


def test_channel_derives_noise_from_density():
    channel = ChannelParams(noise_density_dbm_hz=-174.0, bandwidth_hz=1e6)
    assert channel.noise_power == pytest.approx(noise_power_from_density(-174.0, 1e6))


def test_channel_validation():
    with pytest.raises(ConfigError):
        ChannelParams.from_dict({"eta": 0.0})
    with pytest.raises(ConfigError):
        ChannelParams.from_dict({"fading": "nakagami"})


def test_layout_validation():
    with pytest.raises(CoLocatedNodesError):
        GroundLayout(positions=[(0.0, 0.0), (0.0, 0.0)])
    with pytest.raises(ConfigError):
        GroundLayout(positions=[(0.0, 0.0, 5.0)])


def test_random_layout_is_seeded():
    a = random_layout(25, seed=0)
    b = random_layout(25, seed=0)
    assert np.array_equal(a.positions, b.positions)
    assert a.positions[:, :2].max() <= 500.0


@pytest.mark.parametrize("db, linear", [(0.0, 1.0), (10.0, 10.0), (20.0, 100.0), (-10.0, 0.1)])
def test_db_conversions(db, linear):
    assert db_to_linear(db) == pytest.approx(linear)
    assert linear_to_db(linear) == pytest.approx(db)


def test_rayleigh_power_has_unit_mean():
    samples = sample_fading(100_000, seed=5)
    assert samples.mean() == pytest.approx(1.0, abs=0.02)
    assert np.all(samples > 0)


def test_link_sets_grow_with_power():
    channel = ChannelParams(fading=Fading.rayleigh_power, fading_seed=3, noise_power=1e-13)
    layout = random_layout(15, seed=8)
    draws = draw_fading(15, seed=3)
    powers = np.geomspace(1e-4, 1.0, 25)
    previous = link_sets(layout, powers[0], channel, fading_draws=draws)
    for P in powers[1:]:
        current = link_sets(layout, P, channel, fading_draws=draws)
        assert all(a <= b for a, b in zip(previous, current))
        previous = current


def test_snr_and_received_power_are_strictly_monotone(channel):
    powers = np.geomspace(1e-5, 1.0, 30)
    distances = np.linspace(10.0, 1000.0, 30)
    assert np.all(np.diff([snr(P, 100.0, 1.0, channel) for P in powers]) > 0)
    assert np.all(np.diff([snr(0.1, d, 1.0, channel) for d in distances]) < 0)
    assert np.all(np.diff([uav_received_power(P, 200.0, 2.0) for P in powers]) > 0)
    assert np.all(np.diff([uav_received_power(0.01, d, 2.0) for d in distances]) < 0)


def test_default_noise_is_thermal_floor_over_250_khz():
    assert ChannelParams().noise_power == pytest.approx(noise_power_from_density(-174.0, 250e3))
