import numpy as np
import pytest

from dualris.config import SystemConfig
from dualris.scenario import (angles_to_uv, make_scenario, path_loss, steering_upa,
                              synth_channels, uv_to_angles)


def test_steering_trivial_cases():
    assert np.allclose(steering_upa(0.7, -1.2, 1, 1), [1.0])
    assert np.allclose(steering_upa(0.0, 0.0, 2, 3), np.ones(6))


def test_steering_kronecker_entry():
    a = steering_upa(np.pi / 3, np.pi / 5, 2, 2)
    assert a[1 * 2 + 1] == pytest.approx(np.exp(1j * (np.pi / 3 + np.pi / 5)))


@pytest.mark.parametrize("u,v,ny,nz", [(0.3, -2.0, 4, 4), (3.1, 0.2, 8, 8), (-1.0, 1.0, 3, 5)])
def test_steering_unit_modulus_and_norm(u, v, ny, nz):
    a = steering_upa(u, v, ny, nz)
    assert np.allclose(np.abs(a), 1.0)
    assert np.vdot(a, a).real == pytest.approx(ny * nz, abs=1e-12)


def test_angles_to_uv_examples():
    assert angles_to_uv(0.0, 0.0, 0.01, 0.02) == pytest.approx((0.0, 0.0))
    assert angles_to_uv(0.0, np.pi / 2, 0.01, 0.02) == pytest.approx((np.pi, np.pi))
    u, v = angles_to_uv(np.pi / 3, np.pi / 6, 0.01, 0.02)
    assert (u, v) == pytest.approx((np.pi / 4, np.pi / 2))


@pytest.mark.parametrize("elev,azim", [(0.3, 0.4), (1.2, -0.9), (0.7, 1.4)])
def test_uv_angle_roundtrip(elev, azim):
    u, v = angles_to_uv(elev, azim, 0.01, 0.02)
    assert uv_to_angles(u, v, 0.01, 0.02) == pytest.approx((elev, azim))


def test_path_loss_oracle():
    assert path_loss(10.0, 2.0, 1e-3) == pytest.approx(1e-5)
    with pytest.raises(ValueError):
        path_loss(0.0, 2.0, 1.0)


def test_scenario_is_deterministic(config):
    a, b = make_scenario(config, 11), make_scenario(config, 11)
    for name in a.__dataclass_fields__:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.user_positions, make_scenario(config, 12).user_positions)


def test_user_distances_in_range(config):
    for seed in range(10):
        sc = make_scenario(config, seed)
        d = np.linalg.norm(sc.user_positions[:, None] - sc.ris_positions[None], axis=2)
        assert sc.user_positions.shape == (4, 3)
        assert np.all((d >= 40) & (d <= 70))
        assert np.all(sc.user_positions[:, 0] > 0)


def test_gain_magnitudes_follow_path_loss(config, scenario):
    d_br = np.linalg.norm(scenario.ris_positions - scenario.bs_position, axis=1)
    d_ru = np.linalg.norm(scenario.ris_positions[:, None] - scenario.user_positions[None], axis=2)
    rel = lambda a, b: np.max(np.abs(a - b) / b)
    assert rel(np.abs(scenario.alpha_bs_ris) ** 2, path_loss(d_br, config.kappa_bs_ris, config.c0)) < 1e-12
    assert rel(np.abs(scenario.alpha_ris_user) ** 2, path_loss(d_ru, config.kappa_ris_user, config.c0)) < 1e-12
    assert rel(np.abs(scenario.alpha_echo) ** 2, path_loss(d_ru, config.kappa_echo, config.c0)) < 1e-12
    assert np.array_equal(scenario.uv_echo, scenario.uv_ris_user)


def test_bs_ris_channel_is_rank_one(config, scenario, channels):
    for i, H in enumerate(channels.H_BR):
        s = np.linalg.svd(H, compute_uv=False)
        expected = abs(scenario.alpha_bs_ris[i]) * np.sqrt(config.n_ris_elements * config.n_tx_antennas)
        assert s[0] == pytest.approx(expected, rel=1e-12)
        assert np.all(s[1:] < 1e-12 * s[0])
        assert H[0, 0] == pytest.approx(scenario.alpha_bs_ris[i])


def test_scalar_channel_case():
    cfg = SystemConfig(n_ris_elements_y=1, n_ris_elements_z=1, n_tx_antennas=2, n_users=1)
    sc = make_scenario(cfg, 0)
    ch = synth_channels(sc, cfg)
    assert ch.H_BR[0].shape == (1, 2)
    assert ch.H_BR[0][0, 0] == pytest.approx(sc.alpha_bs_ris[0])


def test_single_topology_builds_one_ris(config):
    cfg = config.single_ris()
    ch = synth_channels(make_scenario(cfg, 0), cfg)
    assert ch.n_ris == 1 and ch.H_BR[0].shape == (32, 6) and ch.h[0].shape == (4, 32)
