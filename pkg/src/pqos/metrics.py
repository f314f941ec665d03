"""Scores, reward, per-episode aggregation and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

STEP_COLUMNS = ("run_id", "scheme", "seed", "n", "episode", "step", "vehicle", "action",
                "sigma_s", "sigma_e", "reward", "q_mean")
EPISODE_COLUMNS = ("run_id", "scheme", "seed", "n", "mode", "episode", "epsilon", "mean_reward",
                   "mean_reward_norm", "qos", "qoe", "kpi_match", "mean_q", "mean_loss")


def qos_score(delay_s: float, max_delay_s: float) -> float:
    """Delay normalised by the tolerated maximum; not clamped, > 1 means a KPI miss."""
    if max_delay_s <= 0:
        raise ValueError("max_delay_s must be > 0")
    return delay_s / max_delay_s


def qoe_score(cd: float, max_cd: float, penalty: float) -> float:
    denom = max_cd + penalty
    if denom <= 0:
        raise ValueError("max_cd + penalty must be > 0")
    return cd / denom


def reward(sigma_s: float, sigma_e: float, alpha: float) -> float:
    if sigma_s > 1.0:
        return -1.0
    sigma_e = min(max(sigma_e, 0.0), 1.0)
    return 1.0 - 2.0 * alpha * sigma_e - 2.0 * (1.0 - alpha) * sigma_s


def normalize_reward(r: float) -> float:
    return (r + 1.0) / 2.0


@dataclass(frozen=True)
class StepScore:
    sigma_s: float
    sigma_e: float
    reward: float
    action: int
    vehicle_id: int
    step: int
    episode: int
    q_mean: float = math.nan


@dataclass(frozen=True)
class EpisodeSummary:
    mean_reward: float
    qos: float  # 1 - E[min(sigma_s, 1)], 1 is best
    qoe: float  # 1 - E[min(sigma_e, 1)], 1 is best
    kpi_match: float  # fraction of steps with sigma_s <= 1
    mean_q: float  # nan when no Q-network was queried
    steps: int = 0

    @property
    def mean_reward_norm(self) -> float:
        return normalize_reward(self.mean_reward)


class SummaryAccumulator:
    """One-pass accumulation of StepScores into an EpisodeSummary."""

    def __init__(self):
        self.count = 0
        self._reward = 0.0
        self._qos = 0.0
        self._qoe = 0.0
        self._match = 0
        self._q = 0.0
        self._q_count = 0

    def add(self, sc: StepScore) -> None:
        self.count += 1
        self._reward += sc.reward
        self._qos += min(sc.sigma_s, 1.0)
        self._qoe += min(sc.sigma_e, 1.0)
        self._match += sc.sigma_s <= 1.0
        if not math.isnan(sc.q_mean):
            self._q += sc.q_mean
            self._q_count += 1

    def result(self) -> EpisodeSummary:
        if self.count == 0:
            raise ValueError("cannot summarize an empty stream")
        c = self.count
        return EpisodeSummary(
            mean_reward=self._reward / c,
            qos=1.0 - self._qos / c,
            qoe=1.0 - self._qoe / c,
            kpi_match=self._match / c,
            mean_q=self._q / self._q_count if self._q_count else math.nan,
            steps=c,
        )


def summarize(scores: Iterable[StepScore]) -> EpisodeSummary:
    acc = SummaryAccumulator()
    for sc in scores:
        acc.add(sc)
    return acc.result()


def merge_summaries(items: list[EpisodeSummary]) -> EpisodeSummary:
    """Step-weighted mean of several summaries."""
    total = sum(s.steps for s in items)
    if total == 0:
        raise ValueError("nothing to merge")

    def wmean(attr):
        return sum(getattr(s, attr) * s.steps for s in items) / total

    with_q = [s for s in items if not math.isnan(s.mean_q)]
    q_total = sum(s.steps for s in with_q)
    return EpisodeSummary(
        mean_reward=wmean("mean_reward"),
        qos=wmean("qos"),
        qoe=wmean("qoe"),
        kpi_match=wmean("kpi_match"),
        mean_q=sum(s.mean_q * s.steps for s in with_q) / q_total if q_total else math.nan,
        steps=total,
    )


def fmt(value) -> str:
    """Reals with 9 significant digits; everything else via str."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.9g}"
    return str(value)


def write_csv(records: Iterable, path, columns=STEP_COLUMNS) -> Path:
    """Write dict-like or dataclass records with a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            if not isinstance(rec, dict):
                rec = {f.name: getattr(rec, f.name) for f in fields(rec)}
            w.writerow([fmt(rec[c]) for c in columns])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
