"""Application payload model: compression actions, payload profiles, Chamfer distance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .config import ScenarioConfig


class CompressionAction(IntEnum):
    """Compression levels, ordered by aggressiveness."""

    CR = 0  # raw cloud, compressed
    CSC = 1  # road points removed before compression
    CSA = 2  # only dynamic objects kept

    @property
    def label(self) -> str:
        return ("C-R", "C-SC", "C-SA")[self.value]

    @classmethod
    def parse(cls, text: str) -> "CompressionAction":
        key = text.strip().upper().replace("-", "")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown compression action {text!r}") from None


NUM_ACTIONS = len(CompressionAction)


@dataclass(frozen=True)
class PayloadProfile:
    action: CompressionAction
    burst_bytes: int
    cd: float


def profile_for_action(action, cfg: ScenarioConfig) -> PayloadProfile:
    a = CompressionAction(action)
    return PayloadProfile(a, cfg.payload_bytes[a], cfg.cd[a])


def _as_cloud(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud has non-finite coordinates")
    return arr


def chamfer_distance(p, q) -> float:
    """Symmetric point-to-point Chamfer distance with squared L2 norms.

    Sum over ``p`` of the squared distance to the nearest point of ``q``, plus
    the same with roles swapped. Dense pairwise evaluation; clouds in this
    package are small (tests and fixtures only).
    """
    p = _as_cloud(p)
    q = _as_cloud(q)
    diff = p[:, None, :] - q[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return float(d2.min(axis=1).sum() + d2.min(axis=0).sum())


def synth_cloud(seed: int, count: int) -> np.ndarray:
    """Deterministic pseudo-random cloud of ``count`` points in the unit cube."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return np.random.default_rng(seed).random((count, 3))


def read_cloud(path) -> np.ndarray:
    """Read a fixture file with one ``x y z`` triple per line."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([float(v) for v in line.split()])
    return _as_cloud(rows)


def write_cloud(points, path) -> None:
    arr = _as_cloud(points)
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in arr.tolist()), encoding="utf-8")
