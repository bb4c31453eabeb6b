"""System configuration and the flat key-value text format used on disk.

A config file is a list of ``key = value`` lines. Keys mirror the
:class:`SystemConfig` field names and values are SI units. Keys carrying a
``_dbm`` suffix are read as dBm and converted to watts; keys carrying ``_db``
are read as dB and converted to linear ratios. ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Physical, algorithmic and numerical parameters of one deployment.

    Defaults follow the reference simulation setup, except ``c0`` which is
    calibrated so that the max-min SINR lands in the interference-limited
    regime (see README, "Link budget").
    """

    n_tx_antennas: int = 6
    n_ris_elements_y: int = 4
    n_ris_elements_z: int = 4
    n_sense_elements_y: int = 8
    n_sense_elements_z: int = 8
    n_users: int = 4
    bits: int = 2
    p_max: float = 1.0  # 30 dBm
    noise_power_user: float = 1e-7  # -40 dBm
    noise_power_sensor: float = 1e-7  # -40 dBm
    wavelength: float = 0.02
    element_spacing: float = 0.01
    kappa_bs_ris: float = 2.2
    kappa_ris_user: float = 2.5
    kappa_echo: float = 2.5
    c0: float = 1.0
    reference_distance: float = 1.0
    snapshots: int = 1000
    tolerance: float = 1e-3
    tau_min: float = 0.0
    tau_max: float = 10.0
    size_threshold: int = 0  # N_th; 0 means "use the enumeration budget"
    enumeration_budget: int = 1_000_000
    max_outer_iters: int = 100
    max_od_iters: int = 1000
    n_draws: int = 100
    music_grid_size: int = 181
    sdp_tol: float = 1e-7
    sdp_max_iters: int = 200
    topology: str = "dual"
    # deployment geometry
    bs_position: tuple[float, float, float] = (10.0, 0.0, 10.0)
    ris_distances: tuple[float, float] = (45.0, 50.0)
    ris_bearings_deg: tuple[float, float] = (70.0, 110.0)
    user_distance_range: tuple[float, float] = (40.0, 70.0)
    user_height: float = 1.5

    def __post_init__(self):
        self.validate()

    # derived quantities
    @property
    def n_ris_elements(self) -> int:
        return self.n_ris_elements_y * self.n_ris_elements_z

    @property
    def n_sense_elements(self) -> int:
        return self.n_sense_elements_y * self.n_sense_elements_z

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits

    @property
    def phase_step(self) -> float:
        return 2.0 * math.pi / self.n_levels

    @property
    def n_active_ris(self) -> int:
        return 2 if self.topology == "dual" else 1

    def validate(self) -> None:
        counts = (
            "n_tx_antennas", "n_ris_elements_y", "n_ris_elements_z",
            "n_sense_elements_y", "n_sense_elements_z", "n_users", "bits",
            "snapshots", "max_outer_iters", "max_od_iters", "n_draws",
            "music_grid_size", "sdp_max_iters", "enumeration_budget",
        )
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_tx_antennas <= self.n_users:
            raise ConfigError(
                f"n_tx_antennas > n_users violated: n_tx_antennas={self.n_tx_antennas}, "
                f"n_users={self.n_users}"
            )
        if self.n_users >= self.n_sense_elements:
            raise ConfigError("n_users must be smaller than the number of sensing elements")
        positive = (
            "p_max", "noise_power_user", "noise_power_sensor", "wavelength",
            "element_spacing", "c0", "reference_distance", "tolerance", "sdp_tol",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not math.isclose(self.element_spacing, self.wavelength / 2, rel_tol=1e-9):
            raise ConfigError(
                "element_spacing must equal wavelength / 2 "
                f"(got d={self.element_spacing}, wavelength={self.wavelength})"
            )
        if not self.tau_min < self.tau_max:
            raise ConfigError(f"tau_min < tau_max violated: {self.tau_min} >= {self.tau_max}")
        if self.tau_min < 0:
            raise ConfigError("tau_min must be >= 0")
        if self.size_threshold < 0:
            raise ConfigError("size_threshold must be >= 0")
        if self.topology not in ("dual", "single"):
            raise ConfigError(f"topology must be 'dual' or 'single', got {self.topology!r}")
        lo, hi = self.user_distance_range
        if not 0 < lo < hi:
            raise ConfigError("user_distance_range must satisfy 0 < low < high")
        for kappa in ("kappa_bs_ris", "kappa_ris_user", "kappa_echo"):
            if getattr(self, kappa) < 0:
                raise ConfigError(f"{kappa} must be >= 0")

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def single_ris(self) -> "SystemConfig":
        """The single-RIS equivalent: RIS 2 disabled, RIS 1 with twice the rows."""
        if self.topology == "single":
            return self
        return self.replace(topology="single", n_ris_elements_y=2 * self.n_ris_elements_y)


_FIELDS = {f.name: f for f in fields(SystemConfig)}


def _coerce(name: str, text: str):
    f = _FIELDS[name]
    default = f.default
    if isinstance(default, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        value = float(text)
        if value != int(value):
            raise ConfigError(f"{name} must be an integer, got {text!r}")
        return int(value)
    if isinstance(default, float):
        return float(text)
    return text


def parse_pairs(text: str) -> list[tuple[str, str]]:
    """Split key-value text into ordered ``(key, value)`` pairs (repeats kept)."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def config_overrides(pairs) -> dict:
    """Convert raw pairs into typed :class:`SystemConfig` keyword arguments."""
    out = {}
    for key, value in pairs:
        try:
            if key.endswith("_dbm") and key[:-4] in _FIELDS:
                out[key[:-4]] = dbm_to_watts(float(value))
            elif key.endswith("_db") and key[:-3] in _FIELDS:
                out[key[:-3]] = db_to_linear(float(value))
            elif key in _FIELDS:
                out[key] = _coerce(key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return out


def loads_config(text: str, base: SystemConfig | None = None) -> SystemConfig:
    overrides = config_overrides(parse_pairs(text))
    if base is None:
        return SystemConfig(**overrides)
    return base.replace(**overrides)


def load_config(path) -> SystemConfig:
    return loads_config(Path(path).read_text())


def dumps_config(config: SystemConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
