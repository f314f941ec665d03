"""Single-cell uplink: distance -> path loss -> SNR -> spectral efficiency -> bytes.

Single gNB, no inter-cell interference, so SINR equals SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ScenarioConfig

MAX_MCS = 28
# subcarriers per resource block x OFDM symbols per slot
_RE_PER_SYMBOL_BLOCK = 12 * 14


@dataclass(frozen=True)
class LinkBudget:
    distance_m: float
    pathloss_db: float
    snr_db: float
    mcs_index: int
    spectral_eff_bits_per_hz: float


def pathloss_db(d: float, cfg: ScenarioConfig) -> float:
    """Log-distance path loss; distances under 1 m are clamped to 1 m."""
    d = max(float(d), 1.0)
    return cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * math.log10(d)


def snr_db(pathloss: float, cfg: ScenarioConfig) -> float:
    return cfg.tx_power_dbm - pathloss - cfg.noise_floor_dbm


def spectral_efficiency(snr: float, cfg: ScenarioConfig) -> tuple[float, int]:
    """Attenuated Shannon efficiency, capped at se_max and floored; returns (se, mcs)."""
    if snr == -math.inf:
        shannon = 0.0
    else:
        shannon = math.log2(1.0 + 10.0 ** (snr / 10.0)) if snr < 3000 else math.inf
    se = min(cfg.se_attenuation * shannon, cfg.se_max_bits_per_hz)
    se = max(se, cfg.se_floor_bits_per_hz)
    if se <= cfg.se_floor_bits_per_hz:
        return se, 0
    return se, int(round(MAX_MCS * se / cfg.se_max_bits_per_hz))


def link_budget(distance_m: float, cfg: ScenarioConfig, shadowing_db: float = 0.0) -> LinkBudget:
    pl = pathloss_db(distance_m, cfg) + shadowing_db
    snr = snr_db(pl, cfg)
    se, mcs = spectral_efficiency(snr, cfg)
    return LinkBudget(max(float(distance_m), 1.0), pl, snr, mcs, se)


def byte_rate(se: float, active_count: int, cfg: ScenarioConfig) -> float:
    """Bytes per second for one of ``active_count`` vehicles sharing the band equally."""
    return cfg.bandwidth_hz / active_count * se / 8.0


def step_capacity_bytes(budget: LinkBudget, active_count: int, cfg: ScenarioConfig,
                        duration_s: float | None = None) -> int:
    if active_count < 1:
        raise ValueError("active_count must be >= 1")
    dt = cfg.step_duration_s if duration_s is None else duration_s
    return int(math.floor(byte_rate(budget.spectral_eff_bits_per_hz, active_count, cfg) * dt))


def ofdm_symbols_used(bytes_sent: int, se: float) -> int:
    """Deterministic stand-in for the count of OFDM symbols carrying ``bytes_sent``."""
    if bytes_sent <= 0:
        return 0
    return math.ceil(bytes_sent * 8 / (se * _RE_PER_SYMBOL_BLOCK))
