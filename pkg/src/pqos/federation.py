"""Step-weighted federated averaging and the global-model sync schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FederationConfig
from .rl import DdqnAgent, ModelParams, ShapeError, load_snapshot, snapshot

__all__ = ["ClientUpdate", "ModelParams", "apply_global", "client_update", "fed_aggregate", "should_sync"]


@dataclass(frozen=True)
class ClientUpdate:
    vehicle_id: int
    params: ModelParams
    local_learn_steps: int

    def __post_init__(self):
        if self.local_learn_steps < 0:
            raise ValueError("local_learn_steps must be >= 0")

    def to_bytes(self) -> bytes:
        """Checkpoint bytes preceded by one header line with the routing fields."""
        head = f"PQOSUPDATE vehicle={self.vehicle_id} steps={self.local_learn_steps}\n".encode()
        return head + self.params.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClientUpdate":
        head, _, body = data.partition(b"\n")
        parts = head.decode().split()
        if not parts or parts[0] != "PQOSUPDATE":
            raise ValueError("not a client update")
        fields = dict(p.split("=", 1) for p in parts[1:])
        return cls(int(fields["vehicle"]), ModelParams.from_bytes(body), int(fields["steps"]))


def fed_aggregate(updates: list[ClientUpdate]) -> ModelParams:
    """Average client parameters weighted by their learning steps since the last round.

    If no client has trained since the last round, every client weighs the same.
    """
    if not updates:
        raise ValueError("no client updates to aggregate")
    sizes = updates[0].params.sizes
    for u in updates:
        if u.params.sizes != sizes:
            raise ShapeError(f"client {u.vehicle_id} has sizes {u.params.sizes}, expected {sizes}")
    if len(updates) == 1:
        return updates[0].params
    # canonical order makes the floating-point sum independent of list order
    ordered = sorted(updates, key=lambda u: (u.vehicle_id, u.local_learn_steps, u.params.values.tobytes()))
    steps = np.array([u.local_learn_steps for u in ordered], dtype=np.float64)
    total = steps.sum()
    weights = steps / total if total > 0 else np.full(len(ordered), 1.0 / len(ordered))
    acc = weights[0] * ordered[0].params.values
    for w, u in zip(weights[1:], ordered[1:]):
        acc = acc + w * u.params.values
    # rounding must not push the mean outside the clients' envelope
    stacked = np.stack([u.params.values for u in ordered])
    acc = np.clip(acc, stacked.min(axis=0), stacked.max(axis=0))
    return ModelParams(sizes, acc)


def should_sync(sim_time_s: float, fc: FederationConfig) -> bool:
    """True when ``sim_time_s`` is a positive multiple of the federation interval."""
    ratio = sim_time_s / fc.fed_sync_interval_s
    k = round(ratio)
    return k >= 1 and abs(ratio - k) < 1e-6


def client_update(agent: DdqnAgent, vehicle_id: int) -> ClientUpdate:
    return ClientUpdate(vehicle_id, snapshot(agent), agent.steps_since_sync)


def apply_global(agent: DdqnAgent, g: ModelParams) -> DdqnAgent:
    """Install the global model as primary (and target) and reset the local step count.

    The target is left alone when the global equals the agent's current primary
    bitwise: nothing was replaced, so the existing target is still consistent.
    """
    if tuple(g.sizes) != tuple(agent.sizes):
        raise ShapeError(f"global sizes {g.sizes} do not match agent {agent.sizes}")
    unchanged = agent.primary.params.tobytes() == g.values.tobytes()
    load_snapshot(agent, g, include_target=not unchanged)
    agent.steps_since_sync = 0
    return agent
