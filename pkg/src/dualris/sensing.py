"""Sensing phase: RIS echo snapshots, 2D-MUSIC, optimal phases and feasible arcs.

The BS sends a sensing beam, the active RIS reflects it with a fresh random
configuration every snapshot, users scatter it back and the semi-passive
sensor array (``M_y x M_z``) records the echoes. Re-randomising the RIS at
each snapshot decorrelates the user echoes, which otherwise share one
waveform and would collapse the covariance to rank one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone

from .config import SystemConfig
from .scenario import SENSING_STREAM, Scenario, steering_ula, synth_channels, uv_to_angles

SPECTRUM_CAP = 1e12  # MUSIC pseudo-spectrum clamp where the noise projection vanishes


@dataclass(frozen=True)
class SnapshotMatrix:
    samples: np.ndarray  # (M, T)
    ris_index: int
    phases: np.ndarray  # (T, N) reflection phases used per snapshot

    @property
    def n_snapshots(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class SubspacePair:
    signal: np.ndarray  # (M, K)
    noise: np.ndarray  # (M, M-K)
    eigenvalues: np.ndarray  # (M,), descending


@dataclass(frozen=True)
class AngleEstimate:
    uv: np.ndarray  # (k, 2) grid points
    elevation: np.ndarray
    azimuth: np.ndarray
    peaks: np.ndarray
    degraded: bool = False

    def __len__(self):
        return self.uv.shape[0]


def sensing_rng(seed, ris_index) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), SENSING_STREAM, int(ris_index)]))


def default_sensing_beam(scenario: Scenario, config: SystemConfig, ris_index: int) -> np.ndarray:
    """Full-power beam matched to the BS departure response toward the RIS."""
    b = steering_ula(scenario.bs_aod[ris_index], config.n_tx_antennas)
    return b * math.sqrt(config.p_max / config.n_tx_antennas)


def simulate_echo(scenario: Scenario, config: SystemConfig, ris_index: int, sensing_beam=None,
                  snapshots=None, rng=None) -> SnapshotMatrix:
    """Echo snapshots ``y(t) = H_RUS Theta(t) H_BR w_s x(t) + n(t)`` at one RIS."""
    if not 0 <= ris_index < config.n_active_ris:
        raise ValueError(f"ris_index {ris_index} outside the {config.n_active_ris} active RISs")
    T = config.snapshots if snapshots is None else int(snapshots)
    if T < 1:
        raise ValueError("snapshots must be >= 1")
    w = default_sensing_beam(scenario, config, ris_index) if sensing_beam is None \
        else np.asarray(sensing_beam, dtype=complex)
    if w.shape != (config.n_tx_antennas,):
        raise ValueError(f"sensing beam must have length {config.n_tx_antennas}")
    if np.vdot(w, w).real > config.p_max * (1 + 1e-9):
        raise ValueError("sensing beam violates the power budget")
    if rng is None:
        rng = sensing_rng(scenario.seed, ris_index)

    ch = synth_channels(scenario, config)
    H_BR, H_RUS = ch.H_BR[ris_index], ch.H_RUS[ris_index]
    n, m = H_BR.shape[0], H_RUS.shape[0]
    incident = H_BR @ w  # (N,)
    phases = rng.uniform(0.0, 2 * np.pi, (T, n))
    symbols = np.exp(1j * rng.uniform(0.0, 2 * np.pi, T))
    reflected = (np.exp(1j * phases) * incident).T * symbols  # (N, T)
    noise = math.sqrt(config.noise_power_sensor / 2) * (
        rng.standard_normal((m, T)) + 1j * rng.standard_normal((m, T)))
    return SnapshotMatrix(H_RUS @ reflected + noise, ris_index, phases)


def covariance(Y) -> np.ndarray:
    Y = Y.samples if isinstance(Y, SnapshotMatrix) else np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("need an (M, T) snapshot matrix with T >= 1")
    return Y @ Y.conj().T / Y.shape[1]


def subspace_split(R, k_sources: int) -> SubspacePair:
    R = np.asarray(R)
    m = R.shape[0]
    if not 1 <= k_sources < m:
        raise ValueError(f"need 1 <= k_sources < M (k_sources={k_sources}, M={m})")
    vals, vecs = np.linalg.eigh(0.5 * (R + R.conj().T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    return SubspacePair(vecs[:, :k_sources], vecs[:, k_sources:], vals)


def uv_grid(size: int) -> np.ndarray:
    return np.linspace(-np.pi, np.pi, int(size))


def music_spectrum(noise_basis, my: int, mz: int, u_grid, v_grid, cap=SPECTRUM_CAP) -> np.ndarray:
    """``P(u, v) = 1 / ||(a(u) kron a(v))^H E_o||^2`` on the grid, shape ``(len(u), len(v))``.

    The Kronecker structure splits the projection into two small matrix
    products, so no ``M x |grid|`` manifold is ever formed. Values are
    clamped to ``cap``.
    """
    E = np.asarray(noise_basis)
    if E.ndim != 2 or E.shape[1] == 0:
        raise ValueError("noise subspace is empty (need fewer sources than sensors)")
    if E.shape[0] != my * mz:
        raise ValueError("noise basis does not match the sensor array size")
    u_grid, v_grid = np.asarray(u_grid, float), np.asarray(v_grid, float)
    if u_grid.size == 0 or v_grid.size == 0:
        raise ValueError("empty search grid")
    Au = np.exp(-1j * np.outer(np.arange(my), u_grid))  # conj(a(u)), (My, Gu)
    Av = np.exp(-1j * np.outer(np.arange(mz), v_grid))  # (Mz, Gv)
    Ec = E.reshape(my, mz, -1)  # index y*mz + z
    tmp = np.einsum("yu,yzc->ucz", Au, Ec)  # (Gu, C, Mz)
    proj = tmp @ Av  # (Gu, C, Gv): a^H e_c
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / denom, cap)


def _is_periodic(grid) -> bool:
    grid = np.asarray(grid, dtype=float)
    return grid.size > 2 and math.isclose(grid[-1] - grid[0], 2 * np.pi, rel_tol=1e-12)


def pick_peaks(spectrum, u_grid, v_grid, k_sources: int, d: float, wavelength: float) -> AngleEstimate:
    """The ``k`` largest strict 8-neighbour local maxima, descending by height.

    A grid spanning exactly ``2 pi`` is treated as periodic (the spectrum is
    ``2 pi``-periodic in both phase rates): its last row/column duplicates the
    first and is dropped, and neighbourhoods wrap around the seam.
    """
    P = np.asarray(spectrum, dtype=float)
    u_grid, v_grid = np.asarray(u_grid, dtype=float), np.asarray(v_grid, dtype=float)
    wrap_u, wrap_v = _is_periodic(u_grid), _is_periodic(v_grid)
    if wrap_u:
        P, u_grid = P[:-1], u_grid[:-1]
    if wrap_v:
        P, v_grid = P[:, :-1], v_grid[:-1]
    padded = np.pad(P, 1, constant_values=-np.inf)
    if wrap_u:
        padded[0, 1:-1], padded[-1, 1:-1] = P[-1], P[0]
    if wrap_v:
        padded[1:-1, 0], padded[1:-1, -1] = P[:, -1], P[:, 0]
    if wrap_u and wrap_v:
        padded[0, 0], padded[0, -1], padded[-1, 0], padded[-1, -1] = P[-1, -1], P[-1, 0], P[0, -1], P[0, 0]
    is_max = np.ones(P.shape, dtype=bool)
    rows, cols = P.shape
    for du in (-1, 0, 1):
        for dv in (-1, 0, 1):
            if du or dv:
                is_max &= P > padded[1 + du:1 + du + rows, 1 + dv:1 + dv + cols]
    iu, iv = np.nonzero(is_max)
    heights = P[iu, iv]
    order = np.lexsort((iv, iu, -heights))[:k_sources]  # ties resolved by grid order
    uv = np.column_stack([u_grid[iu[order]], v_grid[iv[order]]])
    elev, azim = uv_to_angles(uv[:, 0], uv[:, 1], d, wavelength)
    return AngleEstimate(uv, np.atleast_1d(elev), np.atleast_1d(azim), heights[order],
                         degraded=len(order) < k_sources)


def estimate_angles(Y, config: SystemConfig):
    """Covariance -> subspaces -> spectrum -> peaks for one snapshot matrix."""
    sub = subspace_split(covariance(Y), config.n_users)
    grid = uv_grid(config.music_grid_size)
    P = music_spectrum(sub.noise, config.n_sense_elements_y, config.n_sense_elements_z, grid, grid)
    est = pick_peaks(P, grid, grid, config.n_users, config.element_spacing, config.wavelength)
    return est, P, sub


# -- optimal phases and feasible arcs ----------------------------------------

def optimal_phase(y, z, bs_angles, user_angles, d_y, d_z, wavelength):
    """Coherent reflection phase of element ``(y, z)`` (1-based) toward a user.

    ``bs_angles = (phi_t, varphi_t)`` and ``user_angles = (phi_des, varphi_des)``
    are (polar, azimuth) pairs whose direction cosines along y and z are
    ``sin(phi) cos(varphi)`` and ``sin(phi) sin(varphi)``.
    """
    phi_t, vphi_t = bs_angles
    phi_d, vphi_d = user_angles
    k = 2 * np.pi / wavelength
    py = (np.sin(phi_t) * np.cos(vphi_t) + np.sin(phi_d) * np.cos(vphi_d)) * (np.asarray(y) - 0.5) * d_y
    pz = (np.sin(phi_t) * np.sin(vphi_t) + np.sin(phi_d) * np.sin(vphi_d)) * (np.asarray(z) - 0.5) * d_z
    return np.mod(k * (py + pz), 2 * np.pi)


def optimal_phase_uv(y, z, uv_in, uv_out):
    """Same phase law written with array phase rates.

    ``uv_in``/``uv_out`` are the phase-rate pairs ``(2 pi d / lambda) x``
    (direction cosines) of the two legs; element indices are 1-based.
    """
    return np.mod((np.asarray(y) - 0.5) * (uv_in[0] + uv_out[0])
                  + (np.asarray(z) - 0.5) * (uv_in[1] + uv_out[1]), 2 * np.pi)


def element_indices(ny: int, nz: int):
    """1-based (y, z) per flat element index ``y * nz + z``."""
    yy, zz = np.meshgrid(np.arange(1, ny + 1), np.arange(1, nz + 1), indexing="ij")
    return yy.ravel(), zz.ravel()


def user_optimal_phases(uv_bs, uv_users, ny: int, nz: int) -> np.ndarray:
    """Per-element, per-user coherent phases, shape ``(N, K)``.

    The incident leg enters with the sign flipped (``-u_BR, -v_BR``) because
    the RIS must undo the arrival progression before imposing the departure.
    """
    y, z = element_indices(ny, nz)
    uv_in = (-uv_bs[0], -uv_bs[1])
    return np.stack([optimal_phase_uv(y, z, uv_in, (u, v)) for u, v in np.asarray(uv_users)], axis=1)


def quantize_index(phase, bits: int):
    """Nearest grid index under circular distance (half-way ties round up)."""
    L = 2 ** bits
    return np.mod(np.floor(np.mod(phase, 2 * np.pi) / (2 * np.pi / L) + 0.5), L).astype(int)


def quantize_phase(phase, bits: int):
    return quantize_index(phase, bits) * (2 * np.pi / 2 ** bits)


def circular_distance(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), 2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def shortest_arc(indices, n_levels: int):
    """(start, length) of the shortest circular arc covering ``indices``.

    Equal-length candidates resolve to the smaller start index.
    """
    pts = np.unique(np.mod(np.asarray(indices, dtype=int), n_levels))
    if pts.size == 1:
        return int(pts[0]), 1
    gaps = np.diff(np.append(pts, pts[0] + n_levels))  # gap after pts[i]
    length = n_levels - int(gaps.max()) + 1
    starts = pts[(np.flatnonzero(gaps == gaps.max()) + 1) % pts.size]
    return int(starts.min()), length


@dataclass(frozen=True)
class FeasibleSetTable:
    start: np.ndarray  # (N,) arc start index on the 2^b grid
    length: np.ndarray  # (N,) arc length
    bits: int
    raw_phases: np.ndarray  # (N, K) per-user optimal phases

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits

    @property
    def n_elements(self) -> int:
        return self.start.size

    def arc(self, n: int) -> np.ndarray:
        return np.mod(self.start[n] + np.arange(self.length[n]), self.n_levels)

    def arcs(self) -> list:
        return [self.arc(n) for n in range(self.n_elements)]

    def cardinality(self) -> int:
        return math.prod(int(x) for x in self.length)

    def representative(self) -> np.ndarray:
        """Per element, the arc index closest to the circular mean of the user optima."""
        step = 2 * np.pi / self.n_levels
        mean = np.angle(np.exp(1j * self.raw_phases).sum(axis=1))
        out = np.empty(self.n_elements, dtype=int)
        for n in range(self.n_elements):
            arc = self.arc(n)
            out[n] = arc[int(np.argmin(circular_distance(arc * step, mean[n])))]
        return out

    @classmethod
    def full(cls, n_elements: int, bits: int, raw_phases=None):
        """Unrestricted arcs (the whole grid) for every element."""
        raw = np.zeros((n_elements, 1)) if raw_phases is None else raw_phases
        return cls(np.zeros(n_elements, dtype=int), np.full(n_elements, 2 ** bits), bits, raw)


def narrow_feasible_set(per_user_phases, bits: int) -> FeasibleSetTable:
    """Quantize each user's optimum per element and keep the shortest covering arc."""
    phases = np.atleast_2d(np.asarray(per_user_phases, dtype=float))
    q = quantize_index(phases, bits)
    arcs = [shortest_arc(row, 2 ** bits) for row in q]
    start = np.array([a[0] for a in arcs], dtype=int)
    length = np.array([a[1] for a in arcs], dtype=int)
    return FeasibleSetTable(start, length, bits, phases)


@dataclass(frozen=True)
class SensingResult:
    ris_index: int
    estimate: AngleEstimate
    table: FeasibleSetTable


def sense(scenario: Scenario, config: SystemConfig) -> list:
    """Run the sensing phase on every active RIS (one after the other)."""
    out = []
    for i in range(config.n_active_ris):
        Y = simulate_echo(scenario, config, i)
        est, _, _ = estimate_angles(Y, config)
        phases = user_optimal_phases(scenario.uv_bs_ris[i], est.uv, config.n_ris_elements_y,
                                     config.n_ris_elements_z)
        out.append(SensingResult(i, est, narrow_feasible_set(phases, config.bits)))
    return out


# -- exports -----------------------------------------------------------------

SPECTRUM_COLUMNS = ("u", "v", "power")
ESTIMATE_COLUMNS = ("user", "u", "v", "elevation", "azimuth", "peak")


def spectrum_rows(spectrum, u_grid, v_grid):
    uu, vv = np.meshgrid(u_grid, v_grid, indexing="ij")
    return [dict(zip(SPECTRUM_COLUMNS, r)) for r in zip(uu.ravel(), vv.ravel(), np.ravel(spectrum))]


def estimate_rows(est: AngleEstimate):
    return [dict(zip(ESTIMATE_COLUMNS, (k, *est.uv[k], est.elevation[k], est.azimuth[k], est.peaks[k])))
            for k in range(len(est))]


class MusicDOAEstimator(BaseEstimator):
    """Scikit-learn style wrapper: ``fit`` on snapshots (rows = snapshots), ``predict`` the angles.

    ``predict`` returns the ``(n_sources, 2)`` array of ``(u, v)`` grid points.
    """

    def __init__(self, n_sources=1, n_sensors_y=8, n_sensors_z=8, grid_size=181):
        self.n_sources = n_sources
        self.n_sensors_y = n_sensors_y
        self.n_sensors_z = n_sensors_z
        self.grid_size = grid_size

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.n_sensors_y * self.n_sensors_z:
            raise ValueError("X must have shape (n_snapshots, n_sensors_y * n_sensors_z)")
        self.covariance_ = covariance(X.T)
        self.subspaces_ = subspace_split(self.covariance_, self.n_sources)
        self.grid_ = uv_grid(self.grid_size)
        self.spectrum_ = music_spectrum(self.subspaces_.noise, self.n_sensors_y, self.n_sensors_z,
                                        self.grid_, self.grid_)
        # d = lambda / 2 is a config invariant; angles only need the ratio
        self.estimate_ = pick_peaks(self.spectrum_, self.grid_, self.grid_, self.n_sources, 0.5, 1.0)
        return self

    def predict(self, X=None):
        if not hasattr(self, "estimate_"):
            raise AttributeError("MusicDOAEstimator is not fitted")
        if X is None:
            return self.estimate_.uv
        # score new snapshots with the fitted settings, leaving the fit untouched
        return clone(self).fit(X).estimate_.uv
