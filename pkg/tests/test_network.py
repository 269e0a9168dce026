import numpy as np
import pytest

from noma_ee.network import (NetworkConfig, ZeroDistance, dbm_to_watt, desk_config,
                             dump_config, generate_channels, generate_topology,
                             load_config, sample_error, table2_config, Topology)


def test_table2_defaults():
    cfg = table2_config()
    assert cfg.shape == (8, 5, 3, 4)
    assert cfg.power_budget[0] == pytest.approx(10.0, rel=1e-6)        # 40 dBm
    assert cfg.power_budget[1] == pytest.approx(1.0, rel=1e-6)         # 30 dBm
    assert cfg.circuit_power == pytest.approx(1.0, rel=1e-6)           # 30 dBm
    assert cfg.drain_efficiency == 0.25
    assert np.all(cfg.uncertainty_radius == 1e-3)
    # -174 dBm/Hz over 180 kHz
    assert cfg.noise_power[0, 0, 0] == pytest.approx(dbm_to_watt(-174.0) * 180e3, rel=1e-9)


def test_config_invariants_rejected():
    from dataclasses import replace
    with pytest.raises(ValueError):
        replace(desk_config(), drain_efficiency=1.5)
    with pytest.raises(ValueError):
        replace(desk_config(), uncertainty_radius=-1.0)


def test_topology_single_cell_degenerate():
    cfg = desk_config(num_users=1, num_aaus=1)
    topo = generate_topology(cfg, 3)
    assert np.allclose(topo.aau_xy[0], 0.0)
    assert np.linalg.norm(topo.user_xy[0]) <= cfg.macro_radius


def test_topology_determinism_and_counts():
    cfg = table2_config()
    t1 = generate_topology(cfg, 11)
    t2 = generate_topology(cfg, 11)
    assert np.array_equal(t1.aau_xy, t2.aau_xy)
    assert np.array_equal(t1.user_xy, t2.user_xy)
    assert t1.aau_xy.shape == (4, 2)       # 1 macro + 3 small
    assert t1.user_xy.shape == (8, 2)
    # small AAUs respect the separation rule
    for f in range(1, 4):
        for g in range(f + 1, 4):
            assert np.linalg.norm(t1.aau_xy[f] - t1.aau_xy[g]) >= 40.0


def test_channels_zero_uncertainty_and_determinism():
    cfg = desk_config().with_uncertainty(0.0)
    topo = generate_topology(cfg, 1)
    ch1 = generate_channels(cfg, topo, 1)
    ch2 = generate_channels(cfg, topo, 1)
    assert np.array_equal(ch1.h_est, ch2.h_est)
    assert np.all(ch1.e == 0.0)
    assert np.all(np.isfinite(ch1.h_est.view(float)))
    assert np.all(np.linalg.norm(ch1.h_est, axis=-1) > 0)


def test_channel_unit_distance_variance():
    # d = 1 m and alpha = 3 gives unit path loss; per-antenna variance 1
    cfg = desk_config(num_users=1, num_aaus=1, num_antennas=3, num_subcarriers=2)
    topo = Topology(aau_xy=np.zeros((1, 2)), user_xy=np.array([[1.0, 0.0]]),
                    distances=np.array([[1.0]]))
    rng_draws = []
    for seed in range(2000):
        ch = generate_channels(cfg, topo, seed)
        rng_draws.append(np.abs(ch.h_est[0, :, 0, :]) ** 2)
    var = np.mean(rng_draws)
    assert var == pytest.approx(1.0, rel=0.05)


def test_channel_montecarlo_norm_oracle():
    # E ||h||^2 = M * d^-3 over many fading draws at fixed distance
    d = 7.0
    M = 3
    cfg = desk_config(num_users=1, num_aaus=1, num_antennas=M, num_subcarriers=5)
    topo = Topology(aau_xy=np.zeros((1, 2)), user_xy=np.array([[d, 0.0]]),
                    distances=np.array([[d]]))
    acc = []
    for seed in range(2000):
        ch = generate_channels(cfg, topo, seed)
        acc.append(np.linalg.norm(ch.h_est[0, :, 0, :], axis=-1) ** 2)
    assert np.mean(acc) == pytest.approx(M * d ** -3, rel=0.05)


def test_channels_zero_distance_rejected():
    cfg = desk_config(num_users=1, num_aaus=1)
    topo = Topology(aau_xy=np.zeros((1, 2)), user_xy=np.zeros((1, 2)),
                    distances=np.array([[0.0]]))
    with pytest.raises(ZeroDistance):
        generate_channels(cfg, topo, 0)


def test_effective_radius_monotone_in_delta():
    cfg = desk_config()
    topo = generate_topology(cfg, 5)
    lo = generate_channels(cfg.with_uncertainty(1e-4), topo, 5)
    hi = generate_channels(cfg.with_uncertainty(1e-3), topo, 5)
    assert np.all(hi.e >= lo.e)


def test_sample_error_ball():
    rng = np.random.default_rng(0)
    assert np.all(sample_error(0.0, 4, rng) == 0.0)
    delta = 0.37
    draws = np.array([np.linalg.norm(sample_error(delta, 3, rng)) for _ in range(10_000)])
    assert np.all(draws <= delta + 1e-12)
    assert np.all(draws ** 2 <= delta + 1e-12)   # uncertainty-set membership (delta <= 1)
    # boundary of the ball is reachable
    assert (draws.max() ** 2) >= 0.9 * delta ** 2


def test_config_file_roundtrip(tmp_path):
    cfg = desk_config(rng_seed=9)
    path = tmp_path / "scenario.cfg"
    dump_config(cfg, path)
    loaded = load_config(path)
    assert loaded.shape == cfg.shape
    assert np.allclose(loaded.power_budget, cfg.power_budget)
    assert np.allclose(loaded.noise_power, cfg.noise_power)
    assert np.allclose(loaded.uncertainty_radius, cfg.uncertainty_radius)


def test_config_file_dbm_keys(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text(
        "num_users = 2\nnum_subcarriers = 2\nnum_antennas = 2\nnum_aaus = 2\n"
        "power_budget_dbm = 40, 30\ncircuit_power_dbm = 30\n"
        "noise_power_dbm_per_hz = -174\nuncertainty_radius = 0.001\n"
    )
    cfg = load_config(path)
    assert cfg.power_budget[0] == pytest.approx(10.0, rel=1e-9)
    assert cfg.power_budget[1] == pytest.approx(1.0, rel=1e-9)
    assert cfg.circuit_power == pytest.approx(1.0, rel=1e-9)
    assert cfg.noise_power[0, 0, 0] == pytest.approx(dbm_to_watt(-174) * 180e3, rel=1e-9)
