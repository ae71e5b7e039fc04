"""Scenario and learning configuration.

A single flat :class:`ScenarioConfig` carries the physical layer, protocol and
learning parameters.  On disk it is a flat TOML file, one key per field, with
units documented in comments (see :data:`FIELD_DOCS`).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for a malformed, incomplete or inconsistent configuration."""


def thermal_noise_dbm(bandwidth_hz: float, noise_figure_db: float = 9.0) -> float:
    """Noise power over ``bandwidth_hz`` at -174 dBm/Hz plus a receiver noise figure."""
    return -174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


PATHLOSS_MODELS = ("free_space", "winner_b1_los")
LANE_SCHEMES = ("alternate", "blocked")
RATE_RECEIVERS = ("min", "tail")
TARGET_MODES = ("standard", "literal")


@dataclass(frozen=True)
class ScenarioConfig:
    # geometry
    n_platoons: int = 4
    platoon_len: int = 5
    head_to_tail_m: float = 75.0
    lane_width_m: float = 4.0
    lane_spacing_scheme: str = "alternate"
    road_length_m: float = 600.0
    head_jitter_m: float = 5.0
    # radio
    n_subchannels: int = 2
    subchannel_bw_hz: float = 180e3
    carrier_hz: float = 5.9e9
    power_levels_dbm: tuple[float, ...] = (23.0, 15.0, 10.0, -114.0)
    noise_dbm: float = round(thermal_noise_dbm(180e3), 4)
    antenna_gain_db: float = 3.0
    shadow_std_db: float = 3.0
    pathloss_model: str = "free_space"
    rate_receiver: str = "min"
    # protocol
    slot_ms: float = 1.0
    period_ms: float = 100.0
    payload_bytes: int = 2400
    interference_range_dbm: tuple[float, float] = (-114.0, -30.0)
    # reward and learning
    tau: float = 0.5
    reward_scale: float = 0.1
    discount: float = 0.99
    learning_rate: float = 1e-3
    hidden_size: int = 64
    eps_delta: float = 1e-3
    eps_min: float = 0.03
    batch_episodes: int = 32
    replay_capacity: int = 2000
    target_sync_updates: int = 100
    grad_clip_norm: float = 10.0
    n_episodes: int = 3000
    target_mode: str = "standard"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        # normalize list-valued fields coming from TOML
        object.__setattr__(self, "power_levels_dbm", tuple(float(p) for p in self.power_levels_dbm))
        object.__setattr__(
            self, "interference_range_dbm", tuple(float(p) for p in self.interference_range_dbm)
        )
        self.validate()

    @property
    def n_followers(self) -> int:
        return self.platoon_len - 1

    @property
    def n_power_levels(self) -> int:
        return len(self.power_levels_dbm)

    @property
    def n_actions(self) -> int:
        return self.n_subchannels * self.n_power_levels

    @property
    def n_slots(self) -> int:
        return int(round(self.period_ms / self.slot_ms))

    @property
    def payload_bits(self) -> float:
        return 8.0 * self.payload_bytes

    @property
    def obs_dim(self) -> int:
        return self.n_subchannels + 2

    def validate(self) -> None:
        if self.n_platoons < 1:
            raise ConfigError("n_platoons must be >= 1")
        if self.platoon_len < 2:
            raise ConfigError("platoon_len must be >= 2 (leader plus at least one follower)")
        if not self.head_to_tail_m > 0:
            raise ConfigError("head_to_tail_m must be > 0")
        if self.lane_width_m < 0 or self.road_length_m <= 0 or self.head_jitter_m < 0:
            raise ConfigError("lane_width_m, head_jitter_m must be >= 0 and road_length_m > 0")
        if self.n_subchannels < 1:
            raise ConfigError("n_subchannels must be >= 1")
        if self.subchannel_bw_hz <= 0 or self.carrier_hz <= 0:
            raise ConfigError("subchannel_bw_hz and carrier_hz must be > 0")
        p = self.power_levels_dbm
        if not p:
            raise ConfigError("power_levels_dbm must be non-empty")
        if any(a <= b for a, b in zip(p, p[1:])):
            raise ConfigError("power_levels_dbm must be strictly decreasing")
        if self.shadow_std_db < 0:
            raise ConfigError("shadow_std_db must be >= 0")
        if self.slot_ms <= 0 or self.period_ms <= 0:
            raise ConfigError("slot_ms and period_ms must be > 0")
        ratio = self.period_ms / self.slot_ms
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("period_ms must be an integer multiple of slot_ms")
        if self.payload_bytes < 0:
            raise ConfigError("payload_bytes must be >= 0")
        lo, hi = self.interference_range_dbm if len(self.interference_range_dbm) == 2 else (0, 0)
        if not hi > lo:
            raise ConfigError("interference_range_dbm must be [low, high] with high > low")
        for name, allowed in (
            ("pathloss_model", PATHLOSS_MODELS),
            ("lane_spacing_scheme", LANE_SCHEMES),
            ("rate_receiver", RATE_RECEIVERS),
            ("target_mode", TARGET_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not self.reward_scale > 0:
            raise ConfigError("reward_scale must be > 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must lie in [0, 1]")
        if not 0.0 <= self.eps_min <= 1.0 or self.eps_delta < 0:
            raise ConfigError("eps_min must lie in [0, 1] and eps_delta >= 0")
        for name in ("hidden_size", "batch_episodes", "replay_capacity", "target_sync_updates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip_norm <= 0 or self.n_episodes < 0:
            raise ConfigError("learning_rate and grad_clip_norm must be > 0, n_episodes >= 0")

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["power_levels_dbm"] = list(self.power_levels_dbm)
        d["interference_range_dbm"] = list(self.interference_range_dbm)
        return d

    def scenario_hash(self) -> str:
        """Hash of the fields a trained network depends on.

        Payload size, seed and learning hyperparameters are excluded so that a
        checkpoint can be evaluated on payload sweeps and fresh seeds.
        """
        keys = sorted(_SCENARIO_KEYS)
        blob = json.dumps({k: self.to_dict()[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SCENARIO_KEYS = (
    "n_platoons", "platoon_len", "head_to_tail_m", "lane_width_m", "lane_spacing_scheme",
    "road_length_m", "head_jitter_m", "n_subchannels", "subchannel_bw_hz", "carrier_hz",
    "power_levels_dbm", "noise_dbm", "antenna_gain_db", "shadow_std_db", "pathloss_model",
    "rate_receiver", "slot_ms", "period_ms", "interference_range_dbm", "hidden_size",
)

FIELD_DOCS = {
    "n_platoons": "count of platoons N",
    "platoon_len": "vehicles per platoon (1 leader + followers)",
    "head_to_tail_m": "meters between leader and tail vehicle",
    "lane_width_m": "meters between the two adjacent lanes",
    "lane_spacing_scheme": "alternate | blocked: how platoons are assigned to the two lanes",
    "road_length_m": "meters of road the platoon heads are spread over",
    "head_jitter_m": "meters, half-width of the uniform per-episode jitter of platoon heads",
    "n_subchannels": "count of subchannels K",
    "subchannel_bw_hz": "Hz per subchannel W",
    "carrier_hz": "Hz carrier frequency",
    "power_levels_dbm": "dBm, strictly decreasing transmit power levels",
    "noise_dbm": "dBm noise power per subchannel",
    "antenna_gain_db": "dB combined antenna gain G",
    "shadow_std_db": "dB shadowing standard deviation",
    "pathloss_model": "free_space | winner_b1_los",
    "rate_receiver": "min (worst follower) | tail (tail vehicle only)",
    "slot_ms": "milliseconds per slot",
    "period_ms": "milliseconds payload generation period (latency budget)",
    "payload_bytes": "bytes per platoon payload",
    "interference_range_dbm": "dBm [low, high] mapped affinely to [0, 1] in observations",
    "tau": "reward coefficient on remaining slots at completion",
    "reward_scale": "positive factor applied to rewards inside the TD loss only",
    "discount": "TD discount",
    "learning_rate": "Adam step size",
    "hidden_size": "width of the dense and GRU layers",
    "eps_delta": "per-episode epsilon decrement",
    "eps_min": "epsilon floor",
    "batch_episodes": "episodes per gradient update",
    "replay_capacity": "episodes held by the replay memory",
    "target_sync_updates": "gradient updates between target network syncs",
    "grad_clip_norm": "global gradient norm clip",
    "n_episodes": "training episodes",
    "target_mode": "standard | literal TD target",
    "rng_seed": "integer seed",
}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(cfg: ScenarioConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        lines.append(f"# {FIELD_DOCS[key]}")
        lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def save(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg))


def from_mapping(data: dict, *, strict: bool = True) -> ScenarioConfig:
    names = [f.name for f in dataclasses.fields(ScenarioConfig)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if strict:
        missing = [n for n in names if n not in data]
        if missing:
            raise ConfigError(f"missing config key(s): {', '.join(missing)}")
    try:
        return ScenarioConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | Path, *, strict: bool = True) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_mapping(data, strict=strict)


def desk_config(**overrides) -> ScenarioConfig:
    """The desk-scale scenario: N=4, K=2, 2 x 1200 B payload, tau=0.5."""
    return ScenarioConfig(**overrides)


__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "desk_config",
    "dumps",
    "from_mapping",
    "load",
    "save",
    "thermal_noise_dbm",
]
