import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from dualris.config import SystemConfig
from dualris.scenario import make_scenario, steering_upa, synth_channels
from dualris.sensing import (FeasibleSetTable, MusicDOAEstimator, circular_distance, covariance,
                             estimate_angles, music_spectrum, narrow_feasible_set,
                             optimal_phase, pick_peaks, quantize_index, quantize_phase, sense,
                             shortest_arc, simulate_echo, subspace_split, user_optimal_phases,
                             uv_grid)

GRID = uv_grid(181)
STEP = GRID[1] - GRID[0]


def synthetic_snapshots(uv, T=400, noise=0.0, my=8, mz=8, seed=0):
    """Independent unit-power sources at the given (u, v) points."""
    rng = np.random.default_rng(seed)
    A = np.stack([steering_upa(u, v, my, mz) for u, v in uv], axis=1)
    S = np.exp(1j * rng.uniform(0, 2 * np.pi, (len(uv), T)))
    N = np.sqrt(noise / 2) * (rng.standard_normal((my * mz, T)) + 1j * rng.standard_normal((my * mz, T)))
    return A @ S + N


# -- echo simulation ---------------------------------------------------------

def test_noiseless_single_user_echo_is_collinear_with_steering():
    cfg = SystemConfig(n_users=1, noise_power_sensor=1e-30)
    sc = make_scenario(cfg, 2)
    y = simulate_echo(sc, cfg, 0, snapshots=1).samples[:, 0]
    a = steering_upa(*sc.uv_echo[0, 0], cfg.n_sense_elements_y, cfg.n_sense_elements_z)
    cos = abs(np.vdot(a, y)) / (np.linalg.norm(a) * np.linalg.norm(y))
    assert cos == pytest.approx(1.0, abs=1e-9)


def test_zero_beam_gives_pure_noise(config, scenario):
    Y = simulate_echo(scenario, config, 0, sensing_beam=np.zeros(config.n_tx_antennas), snapshots=2000)
    power = np.mean(np.abs(Y.samples) ** 2)
    assert power == pytest.approx(config.noise_power_sensor, rel=0.05)


def test_random_reflections_decorrelate_users():
    cfg = SystemConfig(n_users=2, noise_power_sensor=1e-30)
    Y = simulate_echo(make_scenario(cfg, 5), cfg, 1)
    vals = np.linalg.eigvalsh(covariance(Y))[::-1]
    assert vals[1] > 1e6 * max(vals[2], 1e-300)


def test_echo_rejects_bad_inputs(config, scenario):
    with pytest.raises(ValueError, match="power budget"):
        simulate_echo(scenario, config, 0, sensing_beam=np.ones(config.n_tx_antennas))
    with pytest.raises(ValueError):
        simulate_echo(scenario, config, 2)
    with pytest.raises(ValueError):
        simulate_echo(scenario, config.single_ris(), 1)


def test_echo_is_reproducible(config, scenario):
    a = simulate_echo(scenario, config, 0).samples
    b = simulate_echo(scenario, config, 0).samples
    assert np.array_equal(a, b)


# -- covariance and subspaces -----------------------------------------------

def test_covariance_examples():
    y = np.array([[1 + 1j], [2.0], [-1j]])
    assert np.allclose(covariance(y), y @ y.conj().T)
    assert np.allclose(covariance(np.zeros((3, 5))), 0)
    Y = np.random.default_rng(0).standard_normal((4, 9)) + 0j
    assert np.trace(covariance(Y)).real == pytest.approx(np.mean(np.sum(np.abs(Y) ** 2, axis=0)))


def test_subspace_split_examples():
    sub = subspace_split(np.eye(5), 1)
    assert np.allclose(sub.eigenvalues, 1)
    assert np.linalg.norm(sub.signal.conj().T @ sub.noise) < 1e-10
    sub = subspace_split(np.diag([5.0, 1, 1, 1]), 1)
    assert abs(sub.signal[0, 0]) == pytest.approx(1.0)
    for k in (0, 4):
        with pytest.raises(ValueError):
            subspace_split(np.eye(4), k)


def test_noiseless_sources_have_null_noise_eigenvalues():
    Y = synthetic_snapshots([(GRID[40], GRID[70]), (GRID[120], GRID[30]), (GRID[90], GRID[150])])
    sub = subspace_split(covariance(Y), 3)
    assert np.all(sub.eigenvalues[3:] <= 1e-8 * sub.eigenvalues[0])
    assert np.linalg.norm(sub.signal.conj().T @ sub.noise) <= 1e-10


# -- spectrum and peaks ------------------------------------------------------

def test_spectrum_positive_and_peaks_on_grid_aligned_source():
    u0, v0 = GRID[37], GRID[128]
    sub = subspace_split(covariance(synthetic_snapshots([(u0, v0)], T=50)), 1)
    P = music_spectrum(sub.noise, 8, 8, GRID, GRID)
    assert np.all(P > 0)
    iu, iv = np.unravel_index(np.argmax(P), P.shape)
    assert (GRID[iu], GRID[iv]) == (u0, v0)


@pytest.mark.parametrize("truth", [
    [(0.4, -1.1)],
    [(-2.0, 0.5), (1.3, 2.2)],
])
def test_peaks_within_one_grid_cell(truth):
    sub = subspace_split(covariance(synthetic_snapshots(truth)), len(truth))
    est = pick_peaks(music_spectrum(sub.noise, 8, 8, GRID, GRID), GRID, GRID, len(truth), 0.01, 0.02)
    assert not est.degraded
    cost = np.abs(est.uv[:, None, :] - np.array(truth)[None]).max(axis=2)
    r, c = linear_sum_assignment(cost)
    assert np.all(cost[r, c] <= STEP)


def test_sources_at_seam_not_double_counted():
    # v = -pi and v = +pi are the same direction on the periodic grid
    truth = [(GRID[60], -np.pi), (GRID[130], GRID[50])]
    sub = subspace_split(covariance(synthetic_snapshots(truth)), 2)
    est = pick_peaks(music_spectrum(sub.noise, 8, 8, GRID, GRID), GRID, GRID, 2, 0.01, 0.02)
    assert len({tuple(np.round(p, 9)) for p in est.uv}) == 2
    assert any(abs(abs(v) - np.pi) < 1e-12 and u == GRID[60] for u, v in est.uv)


def test_estimate_angles_on_default_scenario(config, scenario):
    est, P, sub = estimate_angles(simulate_echo(scenario, config, 0), config)
    assert len(est) == config.n_users and P.shape == (181, 181)
    d = np.abs(np.angle(np.exp(1j * (est.uv[:, None] - scenario.uv_echo[0][None])))).max(axis=2)
    r, c = linear_sum_assignment(d)
    assert np.all(d[r, c] <= 2 * STEP)


def test_music_estimator_api():
    truth = [(0.9, -0.3), (-1.7, 2.4)]
    X = synthetic_snapshots(truth).T
    est = MusicDOAEstimator(n_sources=2).fit(X)
    uv = est.predict()
    assert uv.shape == (2, 2)
    before = est.spectrum_.copy()
    est.predict(synthetic_snapshots([(0.0, 0.0), (1.0, 1.0)]).T)
    assert np.array_equal(est.spectrum_, before)  # predict leaves the fit alone
    with pytest.raises(ValueError):
        MusicDOAEstimator(n_sources=1).fit(np.ones((10, 5)))
    with pytest.raises(AttributeError):
        MusicDOAEstimator().predict()


# -- optimal phases ------------------------------------------------------------

def test_optimal_phase_examples():
    lam, d = 0.02, 0.01
    assert optimal_phase(3, 2, (0.0, 0.0), (0.0, 0.0), d, d, lam) == pytest.approx(0.0)
    assert optimal_phase(1, 1, (0.0, 0.0), (np.pi / 2, 0.0), d, d, lam) == pytest.approx(np.pi / 2)
    vals = optimal_phase(np.arange(1, 9), np.arange(1, 9), (0.4, 2.0), (1.1, -0.7), d, d, lam)
    assert np.all((vals >= 0) & (vals < 2 * np.pi))


def test_user_optimal_phases_combine_coherently(config, scenario, channels):
    phases = user_optimal_phases(scenario.uv_bs_ris[0], scenario.uv_ris_user[0],
                                 config.n_ris_elements_y, config.n_ris_elements_z)
    a_in = channels.H_BR[0][:, 0] / scenario.alpha_bs_ris[0]
    for k in range(config.n_users):
        terms = channels.h[0][k].conj() * np.exp(1j * phases[:, k]) * a_in
        assert abs(terms.sum()) == pytest.approx(np.abs(terms).sum(), rel=1e-12)


# -- quantization and arcs -----------------------------------------------------

@pytest.mark.parametrize("phase,bits,expected", [
    (1.7, 2, np.pi / 2), (6.2, 2, 0.0), (np.pi, 1, np.pi), (0.0, 3, 0.0),
])
def test_quantize_examples(phase, bits, expected):
    assert quantize_phase(phase, bits) == pytest.approx(expected)


def test_quantization_error_bound():
    x = np.random.default_rng(0).uniform(-10, 10, 1000)
    for b in (1, 2, 3, 4):
        assert np.all(circular_distance(quantize_phase(x, b), x) <= np.pi / 2 ** b + 1e-12)


def test_narrow_example_from_hand_quantization():
    table = narrow_feasible_set([[0.3, 1.4]], 3)
    assert list(table.arc(0) * np.pi / 4) == pytest.approx([0, np.pi / 4, np.pi / 2])


def test_identical_or_single_user_gives_singletons():
    t = narrow_feasible_set(np.full((5, 3), 2.0), 2)
    assert np.all(t.length == 1) and np.all(t.start == quantize_index(2.0, 2))
    t = narrow_feasible_set(np.random.default_rng(1).uniform(0, 7, (9, 1)), 3)
    assert np.all(t.length == 1) and t.cardinality() == 1


def test_arc_wraps_across_seam_and_ties_pick_smaller_start():
    assert shortest_arc([7, 0, 1], 8) == (7, 3)
    assert shortest_arc([0, 4], 8) == (0, 5)  # two arcs of length 5: starts 0 and 4
    assert shortest_arc([2], 4) == (2, 1)


def test_every_user_optimum_inside_its_arc(config):
    sc = make_scenario(config, 8)
    phases = user_optimal_phases(sc.uv_bs_ris[1], sc.uv_ris_user[1], 4, 4)
    for b in (1, 2, 3):
        t = narrow_feasible_set(phases, b)
        q = quantize_index(phases, b)
        assert np.all(t.length <= 2 ** b)
        for n in range(t.n_elements):
            assert set(q[n]) <= set(t.arc(n))
        if b == 1:
            assert set(t.length) <= {1, 2}


def test_representative_in_arc_and_full_table():
    t = narrow_feasible_set(np.random.default_rng(3).uniform(0, 7, (6, 4)), 2)
    rep = t.representative()
    assert all(rep[n] in t.arc(n) for n in range(6))
    full = FeasibleSetTable.full(3, 2)
    assert full.cardinality() == 64


def test_sense_runs_per_active_ris(config, scenario):
    assert len(sense(scenario, config)) == 2
    assert len(sense(make_scenario(config.single_ris(), 0), config.single_ris())) == 1
