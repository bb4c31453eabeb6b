"""Deployment geometry, array responses and line-of-sight channel synthesis.

Frames
------
Both RISs lie in the ``x = 0`` plane with their normal along ``+x``; the
reflecting array spans ``y`` (``N_y`` rows, phase rate ``u``) and ``z``
(``N_z`` columns, phase rate ``v``). For a unit direction ``e`` leaving a RIS
the elevation is ``asin(e_z)`` and the azimuth ``atan2(e_y, e_x)``; phase rates
follow :func:`angles_to_uv`. The BS carries a uniform linear array along
``y``, so its departure phase rate toward RIS ``i`` is ``2*pi*d/lambda * e_y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

# Stream tags for seed derivation; keep stable, results depend on them.
_POSITIONS, _PHASES, SENSING_STREAM, RUN_STREAM = 0, 1, 2, 3


def path_loss(distance, kappa, c0, reference_distance=1.0):
    """Power gain ``c0 * (distance / reference_distance) ** -kappa``."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    out = c0 * (distance / reference_distance) ** (-kappa)
    return float(out) if out.ndim == 0 else out


def steering_ula(v, n):
    if n < 1:
        raise ValueError("array size must be >= 1")
    return np.exp(1j * v * np.arange(n))


def steering_upa(u, v, ny, nz):
    """Planar-array response ``a(u) kron a(v)``; index ``y * nz + z``."""
    if ny < 1 or nz < 1:
        raise ValueError("array sizes must be >= 1")
    return np.kron(steering_ula(u, ny), steering_ula(v, nz))


def angles_to_uv(elevation, azimuth, d, wavelength):
    scale = 2.0 * np.pi * d / wavelength
    return scale * np.cos(elevation) * np.sin(azimuth), scale * np.sin(azimuth)


def uv_to_angles(u, v, d, wavelength):
    """Invert :func:`angles_to_uv`.

    The elevation only enters through its cosine, so it is returned in the
    principal range ``[0, pi/2]``; a zero azimuth leaves it undetermined and
    it is reported as 0.
    """
    scale = 2.0 * np.pi * d / wavelength
    azimuth = np.arcsin(np.clip(np.asarray(v, dtype=float) / scale, -1.0, 1.0))
    s = np.sin(azimuth)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(s) > 1e-12, np.asarray(u, dtype=float) / (scale * s), 1.0)
    elevation = np.arccos(np.clip(ratio, -1.0, 1.0))
    if np.ndim(elevation) == 0:
        return float(elevation), float(azimuth)
    return elevation, azimuth


def direction_angles(origin, target):
    """(elevation, azimuth) of ``target`` seen from ``origin`` in the RIS frame."""
    e = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    e = e / np.linalg.norm(e)
    return float(np.arcsin(np.clip(e[2], -1, 1))), float(np.arctan2(e[1], e[0]))


@dataclass(frozen=True)
class Scenario:
    """Ground truth of one random deployment (independent of array sizes)."""

    seed: int
    bs_position: np.ndarray  # (3,)
    ris_positions: np.ndarray  # (2, 3)
    user_positions: np.ndarray  # (K, 3)
    bs_angles: np.ndarray  # (2, 2): RIS-frame (elevation, azimuth) toward the BS
    uv_bs_ris: np.ndarray  # (2, 2): RIS arrival phase rates (u_BR, v_BR)
    bs_aod: np.ndarray  # (2,): BS departure phase rate toward each RIS
    user_angles: np.ndarray  # (2, K, 2): RIS-frame (elevation, azimuth) toward users
    uv_ris_user: np.ndarray  # (2, K, 2): (u_ik, v_ik)
    uv_echo: np.ndarray  # (2, K, 2): echo arrival, equal to uv_ris_user
    alpha_bs_ris: np.ndarray  # (2,) complex
    alpha_ris_user: np.ndarray  # (2, K) complex
    alpha_echo: np.ndarray  # (2, K) complex

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]


@dataclass(frozen=True)
class ChannelSet:
    """Channels of the active RISs; index ``i`` runs over active RISs only."""

    H_BR: list  # N x N_t per RIS
    h: list  # (K, N) per RIS; row k holds h_{i,k} (column vector, stored flat)
    H_RUS: list  # M x N per RIS

    @property
    def n_ris(self) -> int:
        return len(self.H_BR)


def _place_ris(config: SystemConfig) -> np.ndarray:
    bs = np.asarray(config.bs_position, dtype=float)
    out = []
    for dist, bearing in zip(config.ris_distances, np.deg2rad(config.ris_bearings_deg)):
        # point on x=0 at the requested range, seen from the BS foot on that plane
        r = np.sqrt(dist**2 - bs[0] ** 2)
        out.append([0.0, bs[1] + r * np.cos(bearing), bs[2] + r * np.sin(bearing)])
    return np.array(out)


def _place_users(rng, ris, k, dist_range, height):
    lo, hi = dist_range
    y_lo, y_hi = ris[:, 1].min() - hi, ris[:, 1].max() + hi
    users = []
    while len(users) < k:
        cand = np.column_stack([
            rng.uniform(0.0, hi, 256),
            rng.uniform(y_lo, y_hi, 256),
            np.full(256, height),
        ])
        dist = np.linalg.norm(cand[:, None, :] - ris[None, :, :], axis=2)
        ok = np.all((dist >= lo) & (dist <= hi), axis=1) & (cand[:, 0] > 0)
        users.extend(cand[ok][: k - len(users)])
    return np.array(users)


def make_scenario(config: SystemConfig, seed: int) -> Scenario:
    """Random deployment for ``seed``; a pure function of ``(config, seed)``."""
    rng_pos = np.random.default_rng(np.random.SeedSequence([int(seed), _POSITIONS]))
    rng_phase = np.random.default_rng(np.random.SeedSequence([int(seed), _PHASES]))

    bs = np.asarray(config.bs_position, dtype=float)
    ris = _place_ris(config)
    users = _place_users(rng_pos, ris, config.n_users, config.user_distance_range,
                         config.user_height)
    d, lam = config.element_spacing, config.wavelength
    k = config.n_users

    bs_angles = np.array([direction_angles(r, bs) for r in ris])
    uv_bs = np.array([angles_to_uv(e, a, d, lam) for e, a in bs_angles])
    to_ris = (ris - bs) / np.linalg.norm(ris - bs, axis=1, keepdims=True)
    bs_aod = 2 * np.pi * d / lam * to_ris[:, 1]

    user_angles = np.array([[direction_angles(r, p) for p in users] for r in ris])
    uv_user = np.stack([
        np.column_stack(angles_to_uv(user_angles[i, :, 0], user_angles[i, :, 1], d, lam))
        for i in range(2)
    ])

    d_br = np.linalg.norm(ris - bs, axis=1)
    d_ru = np.linalg.norm(ris[:, None, :] - users[None, :, :], axis=2)
    q = config.reference_distance

    def gain(dist, kappa):
        mag = np.sqrt(path_loss(dist, kappa, config.c0, q))
        return mag * np.exp(1j * rng_phase.uniform(0, 2 * np.pi, np.shape(dist)))

    return Scenario(
        seed=int(seed),
        bs_position=bs,
        ris_positions=ris,
        user_positions=users,
        bs_angles=bs_angles,
        uv_bs_ris=uv_bs,
        bs_aod=bs_aod,
        user_angles=user_angles,
        uv_ris_user=uv_user,
        uv_echo=uv_user.copy(),
        alpha_bs_ris=gain(d_br, config.kappa_bs_ris),
        alpha_ris_user=gain(d_ru, config.kappa_ris_user),
        alpha_echo=gain(d_ru, config.kappa_echo),
    )


def synth_channels(scenario: Scenario, config: SystemConfig) -> ChannelSet:
    ny, nz = config.n_ris_elements_y, config.n_ris_elements_z
    my, mz = config.n_sense_elements_y, config.n_sense_elements_z
    nt, k = config.n_tx_antennas, config.n_users
    if scenario.n_users != k:
        raise ValueError(f"scenario has {scenario.n_users} users, config expects {k}")
    H_BR, h, H_RUS = [], [], []
    for i in range(config.n_active_ris):
        u, v = scenario.uv_bs_ris[i]
        a_r = steering_upa(u, v, ny, nz)
        H_BR.append(scenario.alpha_bs_ris[i] * np.outer(a_r, steering_ula(scenario.bs_aod[i], nt).conj()))
        rows, echo = [], np.zeros((my * mz, ny * nz), dtype=complex)
        for kk in range(k):
            uk, vk = scenario.uv_ris_user[i, kk]
            a_k = steering_upa(uk, vk, ny, nz)
            # h_{i,k}^H = alpha * a_R^H  =>  h_{i,k} = conj(alpha) * a_R
            rows.append(np.conj(scenario.alpha_ris_user[i, kk]) * a_k)
            ue, ve = scenario.uv_echo[i, kk]
            echo += scenario.alpha_echo[i, kk] * np.outer(steering_upa(ue, ve, my, mz), a_k.conj())
        h.append(np.array(rows))
        H_RUS.append(echo)
    return ChannelSet(H_BR=H_BR, h=h, H_RUS=H_RUS)
