"""Run configuration: scenario, learning and federation parameters.

Configs are read from a line-oriented ``key = value`` text file. Keys are the
dataclass field names below; a handful of short aliases are accepted. Every
key has a default, so an empty file yields a complete, valid configuration.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

SCHEMES = ("centralized", "distributed", "federated")
ACTION_NAMES = ("C-R", "C-SC", "C-SA")


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration. ``key`` names the culprit."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    carrier_freq_hz: float = 3.5e9
    bandwidth_hz: float = 50e6
    tx_power_dbm: float = 23.0
    num_vehicles: int = 1
    max_delay_s: float = 0.05
    max_cd: float = 45.0
    perception_rate_hz: float = 10.0
    payload_bytes_cr: int = 200_000
    payload_bytes_csc: int = 104_000
    payload_bytes_csa: int = 17_000
    cd_cr: float = 4.4e-5
    cd_csc: float = 5.4769
    cd_csa: float = 35.635
    cell_radius_m: float = 200.0
    pathloss_exponent: float = 3.0
    pathloss_ref_db: float = 43.3
    noise_figure_db: float = 5.0
    se_max_bits_per_hz: float = 7.4
    se_attenuation: float = 0.75
    se_floor_bits_per_hz: float = 0.01
    step_duration_s: float = 0.1
    mobility_speed_mps: float = 10.0
    shadowing_std_db: float = 4.0
    burst_noise_std: float = 0.0
    pdu_max_bytes: int = 1500
    queue_delay_cap_s: float = 1.0
    max_queue_bytes: int = 0  # 0 disables drops
    # min-max bounds used to normalise the state vector
    state_sinr_min_db: float = 0.0
    state_sinr_max_db: float = 40.0
    state_delay_max_s: float = 0.2
    state_count_max: float = 300.0

    @property
    def payload_bytes(self) -> tuple[int, int, int]:
        return (self.payload_bytes_cr, self.payload_bytes_csc, self.payload_bytes_csa)

    @property
    def cd(self) -> tuple[float, float, float]:
        return (self.cd_cr, self.cd_csc, self.cd_csa)

    @property
    def perceptions_per_step(self) -> int:
        return int(round(self.step_duration_s * self.perception_rate_hz))

    @property
    def noise_floor_dbm(self) -> float:
        return -174.0 + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db


@dataclass(frozen=True)
class LearningConfig:
    hidden_dims: tuple[int, ...] = (16, 64)
    discount: float = 0.95
    replay_capacity_transitions: int = 80_000
    batch_size: int = 32
    learning_rate: float = 1e-5
    target_sync_interval_steps: int = 8_000
    epsilon_start: float = 0.99
    epsilon_end: float = 0.01
    epsilon_decay_fraction: float = 0.8
    alpha: float = 0.5
    penalty: float = 30.0
    train_episodes: int = 3000
    train_steps_per_episode: int = 80
    test_episodes: int = 100
    test_steps_per_episode: int = 800
    checkpoint_every_episodes: int = 0  # 0: final checkpoint only


@dataclass(frozen=True)
class FederationConfig:
    scheme: str = "federated"
    fed_sync_interval_s: float = 0.1
    weight_mode: str = "steps"

    @property
    def constant_action(self) -> int | None:
        """Action index for ``constant:<name>`` schemes, else None."""
        if not self.scheme.startswith("constant"):
            return None
        return ACTION_NAMES.index(self.scheme.split(":", 1)[1])


_ALIASES = {
    "n": "num_vehicles",
    "replay_capacity": "replay_capacity_transitions",
    "target_sync_interval": "target_sync_interval_steps",
    "rho": "penalty",
    "gamma": "discount",
}

_SECTIONS = (ScenarioConfig, LearningConfig, FederationConfig)


def _owner(key: str):
    for cls in _SECTIONS:
        if key in {f.name for f in fields(cls)}:
            return cls
    return None


def _parse_value(cls, key: str, raw: str) -> Any:
    ftype = {f.name: f.type for f in fields(cls)}[key]
    try:
        if ftype == "int":
            val = float(raw)
            if not val.is_integer():
                raise ValueError(raw)
            return int(val)
        if ftype == "float":
            return float(raw)
        if ftype.startswith("tuple"):
            parts = [p for p in raw.replace("x", ",").split(",") if p.strip()]
            return tuple(int(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {raw!r}", key) from None


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {message}", key)


def validate(sc: ScenarioConfig, lc: LearningConfig, fc: FederationConfig) -> None:
    """Raise ConfigError naming the first violated invariant."""
    _check(sc.bandwidth_hz > 0, "bandwidth_hz", "must be > 0")
    _check(sc.num_vehicles >= 1, "num_vehicles", "must be >= 1")
    _check(sc.max_delay_s > 0, "max_delay_s", "must be > 0")
    _check(sc.max_cd > 0, "max_cd", "must be > 0")
    _check(sc.step_duration_s > 0, "step_duration_s", "must be > 0")
    p = sc.payload_bytes
    _check(min(p) > 0, "payload_bytes_csa", "payload sizes must be > 0")
    _check(p[0] > p[1], "payload_bytes_csc", "requires payload_bytes_cr > payload_bytes_csc")
    _check(p[1] > p[2], "payload_bytes_csa", "requires payload_bytes_csc > payload_bytes_csa")
    cd = sc.cd
    _check(cd[0] >= 0, "cd_cr", "must be >= 0")
    _check(cd[0] < cd[1], "cd_csc", "requires cd_cr < cd_csc")
    _check(cd[1] < cd[2], "cd_csa", "requires cd_csc < cd_csa")
    per_step = sc.step_duration_s * sc.perception_rate_hz
    _check(
        sc.perception_rate_hz > 0 and abs(per_step - round(per_step)) < 1e-9 and round(per_step) >= 1,
        "perception_rate_hz",
        "step_duration_s * perception_rate_hz must be a positive integer",
    )
    _check(sc.cell_radius_m >= 1, "cell_radius_m", "must be >= 1")
    _check(sc.se_max_bits_per_hz > sc.se_floor_bits_per_hz > 0, "se_max_bits_per_hz",
           "requires se_max > se_floor > 0")
    _check(sc.pdu_max_bytes >= 1, "pdu_max_bytes", "must be >= 1")
    _check(sc.queue_delay_cap_s > 0, "queue_delay_cap_s", "must be > 0")
    _check(sc.shadowing_std_db >= 0, "shadowing_std_db", "must be >= 0")
    _check(sc.burst_noise_std >= 0, "burst_noise_std", "must be >= 0")
    _check(sc.max_queue_bytes >= 0, "max_queue_bytes", "must be >= 0")
    _check(sc.state_sinr_max_db > sc.state_sinr_min_db, "state_sinr_max_db", "must exceed state_sinr_min_db")
    _check(sc.state_delay_max_s > 0, "state_delay_max_s", "must be > 0")
    _check(sc.state_count_max > 0, "state_count_max", "must be > 0")

    _check(len(lc.hidden_dims) >= 1 and min(lc.hidden_dims) >= 1, "hidden_dims", "need positive layer widths")
    _check(0 <= lc.discount < 1, "discount", "must be in [0, 1)")
    _check(0 <= lc.alpha <= 1, "alpha", "must be in [0, 1]")
    _check(lc.penalty >= 0, "penalty", "must be >= 0")
    _check(sc.max_cd + lc.penalty > 0, "penalty", "max_cd + penalty must be > 0")
    _check(0 <= lc.epsilon_start <= 1, "epsilon_start", "must be in [0, 1]")
    _check(0 <= lc.epsilon_end <= lc.epsilon_start, "epsilon_end", "must be in [0, epsilon_start]")
    _check(0 <= lc.epsilon_decay_fraction <= 1, "epsilon_decay_fraction", "must be in [0, 1]")
    _check(lc.replay_capacity_transitions >= 1, "replay_capacity_transitions", "must be >= 1")
    _check(lc.batch_size >= 1, "batch_size", "must be >= 1")
    _check(lc.batch_size <= lc.replay_capacity_transitions, "batch_size",
           "must not exceed replay_capacity_transitions")
    _check(lc.learning_rate >= 0, "learning_rate", "must be >= 0")
    _check(lc.target_sync_interval_steps >= 1, "target_sync_interval_steps", "must be >= 1")
    for key in ("train_episodes", "test_episodes", "checkpoint_every_episodes"):
        _check(getattr(lc, key) >= 0, key, "must be >= 0")
    for key in ("train_steps_per_episode", "test_steps_per_episode"):
        _check(getattr(lc, key) >= 1, key, "must be >= 1")

    valid = SCHEMES + tuple(f"constant:{a}" for a in ACTION_NAMES)
    _check(fc.scheme in valid, "scheme", f"must be one of {', '.join(valid)}")
    _check(fc.weight_mode == "steps", "weight_mode", "only 'steps' is supported")
    ratio = fc.fed_sync_interval_s / sc.step_duration_s
    _check(
        fc.fed_sync_interval_s > 0 and abs(ratio - round(ratio)) < 1e-9,
        "fed_sync_interval_s",
        "must be a positive multiple of step_duration_s",
    )


def from_mapping(values: dict[str, str], base=None):
    """Build configs from raw string values layered over ``base`` (or defaults)."""
    sc, lc, fc = base if base is not None else (ScenarioConfig(), LearningConfig(), FederationConfig())
    updates: dict[type, dict[str, Any]] = {ScenarioConfig: {}, LearningConfig: {}, FederationConfig: {}}
    for raw_key, raw in values.items():
        key = _ALIASES.get(raw_key, raw_key)
        cls = _owner(key)
        if cls is None:
            log.warning("unknown config key %r ignored", raw_key)
            continue
        updates[cls][key] = _parse_value(cls, key, raw.strip())
    sc = dataclasses.replace(sc, **updates[ScenarioConfig])
    lc = dataclasses.replace(lc, **updates[LearningConfig])
    fc = dataclasses.replace(fc, **updates[FederationConfig])
    validate(sc, lc, fc)
    return sc, lc, fc


def parse_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key or not value.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}", key or None)
        values[key] = value.strip()
    return values


def load_config(path, overrides: dict[str, str] | None = None):
    """Read ``path`` and return ``(ScenarioConfig, LearningConfig, FederationConfig)``.

    ``overrides`` are applied after the file and the result is re-validated.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    values = parse_text(text)
    values.update(overrides or {})
    return from_mapping(values)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(sc: ScenarioConfig, lc: LearningConfig, fc: FederationConfig) -> str:
    """Serialise configs to the same ``key = value`` format ``load_config`` reads."""
    lines = []
    for title, obj in (("scenario", sc), ("learning", lc), ("federation", fc)):
        lines.append(f"# {title}")
        for f in fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def as_dict(sc: ScenarioConfig, lc: LearningConfig, fc: FederationConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for obj in (sc, lc, fc):
        out.update(dataclasses.asdict(obj))
    return out
