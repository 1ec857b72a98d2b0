import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from securemimo.channel import (
    ChannelSet,
    ErrorModel,
    NetworkLayout,
    SystemDims,
    draw_channel_set,
    draw_error,
    draw_rayleigh_channel,
    generate_system_scenario,
    okumura_hata_gain,
    okumura_hata_loss_db,
    perturb_channels,
)
from securemimo.numerics import make_rng


def test_system_dims_rejects_invalid():
    with pytest.raises(ValueError):
        SystemDims(K_T=1, K_R=1, K_E=1, N_T=2, N_R=1, N_E=1, N_s=2)
    with pytest.raises(ValueError):
        SystemDims(K_T=1, K_R=1, K_E=1, N_T=2, N_R=2, N_E=1, N_s=2, Gamma=2.5)
    with pytest.raises(ValueError):
        SystemDims(K_T=0, K_R=1, K_E=1, N_T=2, N_R=2, N_E=1, N_s=1)
    d = SystemDims(K_T=3, K_R=2, K_E=0, N_T=4, N_R=2, N_E=2, N_s=1, sigma_nl=[0.1, 0.2])
    np.testing.assert_allclose(d.noise_var_legit, [0.01, 0.04])
    np.testing.assert_allclose(d.an_var, [0.09] * 3)


def test_rayleigh_unit_gain_second_moment():
    h = draw_rayleigh_channel(100, 1000, 1.0, make_rng(1))
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.02


def test_rayleigh_gain_scaling():
    h = draw_rayleigh_channel(100, 1000, 4.0, make_rng(2))
    assert abs(np.mean(np.abs(h) ** 2) - 4.0) < 0.08


def test_rayleigh_deterministic_and_rejects_zero_gain():
    a = draw_rayleigh_channel(3, 4, 1.0, make_rng(5))
    b = draw_rayleigh_channel(3, 4, 1.0, make_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        draw_rayleigh_channel(3, 4, 0.0, make_rng(5))


def test_error_perfect_is_zero():
    assert not np.any(draw_error(ErrorModel.perfect(), 3, 4, make_rng(0)))


def test_error_stochastic_covariance():
    rng = make_rng(3)
    trials = 10_000
    acc = np.zeros((8, 8), complex)
    for _ in range(trials):
        D = draw_error(ErrorModel.stochastic(0.04), 8, 16, rng)
        acc += D @ D.conj().T
    acc /= trials
    np.testing.assert_allclose(np.diag(acc).real, 0.04, atol=3 * 0.04 / math.sqrt(trials) * 4)
    off = acc - np.diag(np.diag(acc))
    assert np.max(np.abs(off)) < 0.003


def test_error_norm_bounded_ball_support():
    rng = make_rng(4)
    norms = np.array([np.linalg.norm(draw_error(ErrorModel.norm_bounded(0.09), 4, 16, rng)) ** 2
                      for _ in range(10_000)])
    assert np.all(norms <= 0.09)
    assert norms.max() > 0.085


def test_error_model_rejects_negative():
    with pytest.raises(ValueError):
        ErrorModel.stochastic(-1.0)
    with pytest.raises(ValueError):
        ErrorModel("gaussian", 1.0)


def test_per_entry_variance():
    assert ErrorModel.stochastic(0.04).per_entry_variance(2, 3, 16)[1, 2] == pytest.approx(0.04 / 16)
    assert ErrorModel.norm_bounded(0.09).per_entry_variance(2, 3, 16)[0, 0] == pytest.approx(0.09)
    assert not np.any(ErrorModel.perfect().per_entry_variance(2, 3, 16))


def test_channel_set_shapes_and_perturbation():
    dims = SystemDims(K_T=2, K_R=3, K_E=1, N_T=4, N_R=2, N_E=3, N_s=1)
    ch = draw_channel_set(dims, make_rng(1), ErrorModel.norm_bounded(0.04), ErrorModel.norm_bounded(0.09))
    ch.check(dims)
    C, G = perturb_channels(ch, make_rng(2))
    assert np.all(np.linalg.norm(C - ch.C_hat, axis=(-2, -1)) ** 2 <= 0.04 + 1e-12)
    assert np.all(np.linalg.norm(G - ch.G_hat, axis=(-2, -1)) ** 2 <= 0.09 + 1e-12)
    with pytest.raises(ValueError):
        ChannelSet(ch.C_hat[:1], ch.G_hat).check(dims)


def test_hata_reference_value():
    # independent evaluation of the closed formula at d = 1 km, 700 MHz, 30 m / 1.5 m
    lf = math.log10(700.0)
    a = (1.1 * lf - 0.7) * 1.5 - (1.56 * lf - 0.8)
    expected = 69.55 + 26.16 * lf - 13.82 * math.log10(30.0) - a
    assert expected == pytest.approx(123.5579, abs=1e-4)
    assert okumura_hata_loss_db(1000.0, 700e6, 30.0, 1.5) == pytest.approx(expected, abs=1e-9)


def test_hata_monotone_and_slope():
    assert okumura_hata_gain(2000.0, 700e6) < okumura_hata_gain(500.0, 700e6)
    slope = (44.9 - 6.55 * math.log10(30.0)) * math.log10(2.0)
    diff = okumura_hata_loss_db(4000.0, 700e6) - okumura_hata_loss_db(2000.0, 700e6)
    assert diff == pytest.approx(slope, abs=1e-9)
    with pytest.raises(ValueError):
        okumura_hata_gain(0.5, 700e6)


@settings(max_examples=50, deadline=None)
@given(d=st.floats(1000.0, 20000.0), f1=st.floats(150e6, 1.5e9), f2=st.floats(150e6, 1.5e9))
def test_hata_decreasing_in_distance_and_frequency(d, f1, f2):
    assert okumura_hata_gain(d * 1.01, 700e6) < okumura_hata_gain(d, 700e6)
    if f2 > f1 * (1 + 1e-9):
        assert okumura_hata_gain(d, f2) < okumura_hata_gain(d, f1)


def test_scenario_constraints_and_determinism():
    a = generate_system_scenario(make_rng(11))
    b = generate_system_scenario(make_rng(11))
    np.testing.assert_array_equal(a.bs_positions, b.bs_positions)
    np.testing.assert_array_equal(a.user_positions, b.user_positions)
    leader = a.user_positions[0]
    assert np.all(np.hypot(*(a.user_positions - leader).T) <= 500.0 + 1e-9)
    assert np.all(np.hypot(*(a.eve_positions - leader).T) <= 500.0 + 1e-9)
    assert len(a.sync_area) == 20 and len(a.user_positions) == 10 and len(a.eve_positions) == 2
    # the synchronization area holds the BSs nearest the centre
    centre = np.array([a.side_m / 2] * 2)
    dist = np.hypot(*(a.bs_positions - centre).T)
    assert dist[a.sync_area].max() <= np.delete(dist, a.sync_area).min()
    # the leader's nearest BS is in the synchronization area
    assert int(np.argmin(np.hypot(*(a.bs_positions - leader).T))) in set(a.sync_area.tolist())


def test_scenario_bs_density():
    # count BSs inside a central 1 km^2 square over 100 layouts
    counts = []
    for s in range(100):
        lay = generate_system_scenario(make_rng(s, 99))
        c = lay.side_m / 2
        inside = np.all(np.abs(lay.bs_positions - c) <= 500.0, axis=1)
        counts.append(inside.sum())
    assert abs(np.mean(counts) - 10.0) <= 1.0


def test_layout_text_round_trip():
    lay = generate_system_scenario(make_rng(5), n_bs=30, sync_size=5, n_members=3, n_eves=1)
    back = NetworkLayout.from_text(lay.to_text())
    np.testing.assert_allclose(back.bs_positions, lay.bs_positions, atol=1e-3)
    np.testing.assert_array_equal(back.sync_area, lay.sync_area)
    np.testing.assert_allclose(back.user_positions, lay.user_positions, atol=1e-3)
    np.testing.assert_allclose(back.eve_positions, lay.eve_positions, atol=1e-3)
    assert back.carrier_freq == lay.carrier_freq
    for line in lay.to_text().splitlines()[1:]:
        assert len(line.split()) == 4
