"""Discrete-step uplink simulator.

Each step every vehicle enqueues its perception bursts, the band is shared
equally among vehicles with backlog (processor sharing, re-evaluated whenever
a queue empties or a burst arrives), bursts are fragmented into PDUs and the
per-vehicle measurement window is aggregated.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import radio
from .config import ScenarioConfig
from .perception import CompressionAction, profile_for_action

STATE_SIZE = 15
STATE_FEATURES = (
    "mcs", "ofdm_symbols", "avg_sinr_db",
    "pdu_delay_min", "pdu_delay_max", "pdu_delay_mean", "pdu_delay_std",
    "pdu_size_min", "pdu_size_max", "pdu_size_mean", "pdu_size_std",
    "tx_pdu_count", "rx_pdu_count", "rx_pkt_size_min", "rx_pkt_size_max",
)

_EPS_T = 1e-12


@dataclass
class Burst:
    vehicle_id: int
    created_at_s: float
    size_bytes: int
    action: CompressionAction
    remaining_bytes: int
    start_offset: int = 0  # position of the first byte in the vehicle's byte stream


@dataclass(frozen=True)
class PduRecord:
    vehicle_id: int
    size_bytes: int
    delay_s: float


@dataclass(frozen=True)
class KpiWindow:
    imsi: int
    mcs: int = 0
    ofdm_symbols: int = 0
    avg_sinr_db: float = 0.0
    pdu_delay_min: float = 0.0
    pdu_delay_max: float = 0.0
    pdu_delay_mean: float = 0.0
    pdu_delay_std: float = 0.0
    pdu_size_min: float = 0.0
    pdu_size_max: float = 0.0
    pdu_size_mean: float = 0.0
    pdu_size_std: float = 0.0
    tx_pdu_count: int = 0
    rx_pdu_count: int = 0
    rx_pkt_size_min: int = 0
    rx_pkt_size_max: int = 0
    app_delay_s: float = 0.0


@dataclass
class VehicleState:
    vehicle_id: int
    position: np.ndarray
    waypoint: np.ndarray
    queue: deque = field(default_factory=deque)
    action: CompressionAction = CompressionAction.CR
    enqueued_bytes: int = 0
    delivered_bytes: int = 0
    dropped_bytes: int = 0
    app_delay_s: float = 0.0

    @property
    def queued_bytes(self) -> int:
        return sum(b.remaining_bytes for b in self.queue)


def _uniform_in_disk(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return np.array([r * math.cos(theta), r * math.sin(theta)])


def _stats(values: np.ndarray) -> tuple[float, float, float, float]:
    """min, max, mean, population std."""
    n = values.size
    if n == 0:
        return 0.0, 0.0, 0.0, 0.0
    if n == 1:
        v = float(values[0])
        return v, v, v, 0.0
    mean = float(values.sum()) / n
    dev = values - mean
    return float(values.min()), float(values.max()), mean, math.sqrt(float(dev @ dev) / n)


class World:
    """Mutable simulation state for ``cfg.num_vehicles`` vehicles around one gNB at the origin."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.n = cfg.num_vehicles
        self.time_s = 0.0
        self.step_index = 0
        self.vehicles: list[VehicleState] = []
        self._last_pdus: list[tuple[int, np.ndarray, np.ndarray]] = []
        self.last_budgets: list[radio.LinkBudget] = []

    def reset(self, rng: np.random.Generator, positions=None) -> None:
        """Fresh episode: new positions (random in the cell unless given), empty queues."""
        cfg = self.cfg
        self.time_s = 0.0
        self.step_index = 0
        self.vehicles = []
        for i in range(self.n):
            if positions is None:
                pos = _uniform_in_disk(rng, cfg.cell_radius_m)
            else:
                pos = np.asarray(positions[i], dtype=float).copy()
            way = _uniform_in_disk(rng, cfg.cell_radius_m)
            self.vehicles.append(VehicleState(i, pos, way))
        self._last_pdus = []

    @property
    def last_pdus(self) -> list[PduRecord]:
        """PDUs delivered during the most recent step."""
        return [PduRecord(vid, int(s), float(d))
                for vid, sizes, delays in self._last_pdus for s, d in zip(sizes, delays)]

    # -- one step -------------------------------------------------------

    def advance_step(self, actions, rng: np.random.Generator, shadowing_db=None) -> list[KpiWindow]:
        """Advance one step with one action per vehicle and return every vehicle's window.

        An action of None leaves that vehicle without a new perception this step.

        ``shadowing_db`` overrides the random shadowing draw (one value per vehicle).
        """
        cfg = self.cfg
        if len(actions) != self.n:
            raise ValueError(f"expected {self.n} actions, got {len(actions)}")
        t0 = self.time_s
        dt = cfg.step_duration_s
        t1 = t0 + dt
        m = cfg.perceptions_per_step

        # fixed number of draws per step, independent of the actions
        if cfg.shadowing_std_db > 0:
            shadow = rng.normal(0.0, cfg.shadowing_std_db, self.n)
        else:
            shadow = np.zeros(self.n)
        if shadowing_db is not None:
            shadow = np.asarray(shadowing_db, dtype=float)
        noise = rng.normal(0.0, 1.0, (self.n, m)) if cfg.burst_noise_std > 0 else None

        arrivals: list[list[Burst]] = []
        tx_counts = []
        for i, veh in enumerate(self.vehicles):
            new = []
            tx = 0
            if actions[i] is None:  # idle vehicle, no new perception
                arrivals.append(new)
                tx_counts.append(tx)
                continue
            veh.action = CompressionAction(actions[i])
            prof = profile_for_action(veh.action, cfg)
            for j in range(m):
                size = prof.burst_bytes
                if noise is not None:
                    size = max(1, int(round(size * (1.0 + cfg.burst_noise_std * noise[i, j]))))
                new.append(Burst(i, t0 + j * dt / m, size, veh.action, size))
                tx += math.ceil(size / cfg.pdu_max_bytes)
            arrivals.append(new)
            tx_counts.append(tx)

        budgets = [radio.link_budget(float(np.hypot(*v.position)), cfg, float(shadow[i]))
                   for i, v in enumerate(self.vehicles)]
        self.last_budgets = budgets
        sent_before = [v.delivered_bytes for v in self.vehicles]
        segments = self._drain(arrivals, budgets, t0, t1)

        windows = []
        self._last_pdus = []
        for i, veh in enumerate(self.vehicles):
            windows.append(self._measure(veh, budgets[i], segments[i], sent_before[i], tx_counts[i], t1))
        for veh in self.vehicles:
            self._move(veh, rng)
        self.time_s = t1
        self.step_index += 1
        return windows

    def _enqueue(self, veh: VehicleState, burst: Burst) -> None:
        cap = self.cfg.max_queue_bytes
        if cap and veh.enqueued_bytes - veh.delivered_bytes + burst.size_bytes > cap:
            veh.dropped_bytes += burst.size_bytes
            return
        burst.start_offset = veh.enqueued_bytes
        veh.enqueued_bytes += burst.size_bytes
        veh.queue.append(burst)

    def _drain(self, arrivals, budgets, t0: float, t1: float):
        """Processor-sharing service over [t0, t1).

        Returns per vehicle a list of segments ``(t_start, t_end, offset_start, bytes)``
        describing when each slice of its byte stream left the queue.
        """
        cfg = self.cfg
        n = self.n
        pending = [deque(a) for a in arrivals]
        backlog = [v.enqueued_bytes - v.delivered_bytes for v in self.vehicles]
        segments: list[list[tuple[float, float, int, int]]] = [[] for _ in range(n)]
        t = t0
        while t < t1 - _EPS_T:
            for i in range(n):
                while pending[i] and pending[i][0].created_at_s <= t + _EPS_T:
                    veh = self.vehicles[i]
                    before = veh.enqueued_bytes
                    self._enqueue(veh, pending[i].popleft())
                    backlog[i] += veh.enqueued_bytes - before
            next_arrival = min((p[0].created_at_s for p in pending if p), default=t1)
            t_next = min(next_arrival, t1)
            active = [i for i in range(n) if backlog[i] > 0]
            if not active:
                t = t_next
                continue
            rates = {i: radio.byte_rate(budgets[i].spectral_eff_bits_per_hz, len(active), cfg) for i in active}
            t_empty = min(t + backlog[i] / rates[i] for i in active)
            t_next = min(t_next, t_empty)
            span = t_next - t
            for i in active:
                if t + backlog[i] / rates[i] <= t_next + _EPS_T:
                    served = backlog[i]
                else:
                    served = min(backlog[i], int(math.floor(rates[i] * span)))
                if served > 0:
                    veh = self.vehicles[i]
                    segments[i].append((t, t_next, veh.delivered_bytes, served))
                    veh.delivered_bytes += served
                    backlog[i] -= served
            t = t_next
        return segments

    def _measure(self, veh: VehicleState, budget: radio.LinkBudget, segs, sent_before: int,
                 tx_count: int, t_end: float) -> KpiWindow:
        cfg = self.cfg
        pdu_size = cfg.pdu_max_bytes
        sent_after = veh.delivered_bytes
        ends_l, created_l, sizes_l = [], [], []
        completed: list[tuple[Burst, float]] = []
        for b in veh.queue:
            b_end = b.start_offset + b.size_bytes
            if b.start_offset >= sent_after:
                break
            if b_end <= sent_before:
                continue
            k = np.arange(1, math.ceil(b.size_bytes / pdu_size) + 1)
            ends = b.start_offset + np.minimum(k * pdu_size, b.size_bytes)
            sizes = ends - (b.start_offset + (k - 1) * pdu_size)
            sel = (ends > sent_before) & (ends <= sent_after)
            ends_l.append(ends[sel])
            sizes_l.append(sizes[sel])
            created_l.append(np.full(int(sel.sum()), b.created_at_s))
        if ends_l:
            ends = np.concatenate(ends_l)
            sizes = np.concatenate(sizes_l)
            created = np.concatenate(created_l)
        else:
            ends = sizes = created = np.zeros(0)
        delivered_at = np.zeros(ends.size)
        for ta, tb, o_a, served in segs:
            lo = np.searchsorted(ends, o_a, side="right")
            hi = np.searchsorted(ends, o_a + served, side="right")
            if hi > lo:
                delivered_at[lo:hi] = ta + (ends[lo:hi] - o_a) / served * (tb - ta)
        delays = np.maximum(delivered_at - created, 0.0)

        # retire fully delivered bursts
        while veh.queue and veh.queue[0].start_offset + veh.queue[0].size_bytes <= sent_after:
            b = veh.queue.popleft()
            b.remaining_bytes = 0
            idx = np.searchsorted(ends, b.start_offset + b.size_bytes, side="left")
            completed.append((b, float(delivered_at[idx])))
        if veh.queue:
            head = veh.queue[0]
            head.remaining_bytes = head.start_offset + head.size_bytes - max(sent_after, head.start_offset)

        if completed:
            b, done_at = completed[-1]
            veh.app_delay_s = max(done_at - b.created_at_s, 0.0)
        elif veh.queue and t_end - veh.queue[0].created_at_s > cfg.queue_delay_cap_s:
            veh.app_delay_s = t_end - veh.queue[0].created_at_s

        self._last_pdus.append((veh.vehicle_id, sizes, delays))

        d_min, d_max, d_mean, d_std = _stats(delays)
        s_min, s_max, s_mean, s_std = _stats(sizes.astype(float))
        pkt = [b.size_bytes for b, _ in completed]
        return KpiWindow(
            imsi=veh.vehicle_id,
            mcs=budget.mcs_index,
            ofdm_symbols=radio.ofdm_symbols_used(sent_after - sent_before, budget.spectral_eff_bits_per_hz),
            avg_sinr_db=budget.snr_db,
            pdu_delay_min=d_min, pdu_delay_max=d_max, pdu_delay_mean=d_mean, pdu_delay_std=d_std,
            pdu_size_min=s_min, pdu_size_max=s_max, pdu_size_mean=s_mean, pdu_size_std=s_std,
            tx_pdu_count=tx_count,
            rx_pdu_count=int(ends.size),
            rx_pkt_size_min=min(pkt) if pkt else 0,
            rx_pkt_size_max=max(pkt) if pkt else 0,
            app_delay_s=veh.app_delay_s,
        )

    def _move(self, veh: VehicleState, rng: np.random.Generator) -> None:
        """Random waypoint at constant speed; arriving at a waypoint draws the next one."""
        step = self.cfg.mobility_speed_mps * self.cfg.step_duration_s
        delta = veh.waypoint - veh.position
        dist = float(np.hypot(*delta))
        if dist <= step:
            veh.position = veh.waypoint
            veh.waypoint = _uniform_in_disk(rng, self.cfg.cell_radius_m)
        else:
            veh.position = veh.position + delta * (step / dist)


def build_state_vector(k: KpiWindow, cfg: ScenarioConfig) -> np.ndarray:
    """Min-max normalised features in ``STATE_FEATURES`` order, clamped to [0, 1]."""
    ofdm_max = cfg.bandwidth_hz * cfg.step_duration_s / (12 * 14)
    dmax = cfg.state_delay_max_s
    smax = cfg.pdu_max_bytes
    cmax = cfg.state_count_max
    pmax = cfg.payload_bytes_cr
    sinr_span = cfg.state_sinr_max_db - cfg.state_sinr_min_db
    raw = np.array([
        k.mcs / radio.MAX_MCS,
        k.ofdm_symbols / ofdm_max,
        (k.avg_sinr_db - cfg.state_sinr_min_db) / sinr_span,
        k.pdu_delay_min / dmax, k.pdu_delay_max / dmax, k.pdu_delay_mean / dmax, k.pdu_delay_std / dmax,
        k.pdu_size_min / smax, k.pdu_size_max / smax, k.pdu_size_mean / smax, k.pdu_size_std / smax,
        k.tx_pdu_count / cmax, k.rx_pdu_count / cmax,
        k.rx_pkt_size_min / pmax, k.rx_pkt_size_max / pmax,
    ])
    return np.clip(raw, 0.0, 1.0)
