"""Training and evaluation under the centralized, distributed, federated and constant schemes."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import rl
from .config import FederationConfig, LearningConfig, ScenarioConfig, from_mapping
from .federation import apply_global, client_update, fed_aggregate, should_sync
from .metrics import (EPISODE_COLUMNS, STEP_COLUMNS, EpisodeSummary, StepScore, SummaryAccumulator,
                      merge_summaries, qoe_score, qos_score, reward, write_csv)
from .rl import DdqnAgent, ModelParams
from .simcore import STATE_SIZE, KpiWindow, World, build_state_vector

log = logging.getLogger(__name__)

SWEEP_AXES = {"n": "num_vehicles", "fed_sync_interval_s": "fed_sync_interval_s",
              "penalty": "penalty", "scheme": "scheme"}
SWEEP_COLUMNS = ("axis", "value", "seed", "scheme", "n", "mean_reward", "mean_reward_norm",
                 "qos", "qoe", "kpi_match", "mean_q")


@dataclass(frozen=True)
class RunPlan:
    scenario: ScenarioConfig
    learning: LearningConfig
    federation: FederationConfig
    seed: int = 0
    run_id: str | None = None
    out_dir: Path | None = None
    trace_train_steps: bool = False
    trace_eval_steps: bool = True

    @property
    def scheme(self) -> str:
        return self.federation.scheme

    @property
    def n(self) -> int:
        return self.scenario.num_vehicles

    @property
    def name(self) -> str:
        if self.run_id:
            return self.run_id
        return f"{self.scheme.replace(':', '-')}_n{self.n}_seed{self.seed}"

    @property
    def run_dir(self) -> Path | None:
        return None if self.out_dir is None else Path(self.out_dir) / "runs" / self.name

    def streams(self):
        """Independent seed streams: training world, evaluation world, agents."""
        train_env, eval_env, agents = np.random.SeedSequence(self.seed).spawn(3)
        return train_env, eval_env, agents


class SchemeTopology:
    """Who decides for which vehicle, who learns from which transition."""

    def __init__(self, plan: RunPlan, agent_seeds: np.random.SeedSequence | None = None):
        self.plan = plan
        lc = plan.learning
        n = plan.n
        self.scheme = plan.scheme
        self.constant_action = plan.federation.constant_action
        self.step_duration_s = plan.scenario.step_duration_s
        self.clock_steps = 0  # environment steps taken in training mode
        self.syncs = 0
        if agent_seeds is None:
            agent_seeds = plan.streams()[2]
        if self.constant_action is not None:
            count = 0
            self.owner = [None] * n
        elif self.scheme == "centralized":
            count = 1
            self.owner = [0] * n
        else:
            count = n
            self.owner = list(range(n))
        children = agent_seeds.spawn(max(count, 1))
        self.agents: list[DdqnAgent] = []
        self.act_rngs: list[np.random.Generator] = []
        self.learn_rngs: list[np.random.Generator] = []
        for child in children[:count]:
            init_ss, act_ss, learn_ss = child.spawn(3)
            self.agents.append(DdqnAgent(lc, np.random.default_rng(init_ss), STATE_SIZE))
            self.act_rngs.append(np.random.default_rng(act_ss))
            self.learn_rngs.append(np.random.default_rng(learn_ss))
        if self.scheme == "federated" and self.agents:
            start = rl.snapshot(self.agents[0])
            for a in self.agents[1:]:
                rl.load_snapshot(a, start)

    @property
    def learns(self) -> bool:
        return bool(self.agents)

    def select(self, states: np.ndarray, epsilon: float):
        """Actions and per-vehicle mean Q-value (nan for constant schemes)."""
        n = len(self.owner)
        if self.constant_action is not None:
            return [self.constant_action] * n, [math.nan] * n
        if len(self.agents) == 1:
            q_all = rl.forward(self.agents[0].primary, states)
        else:
            q_all = [rl.forward(self.agents[k].primary, states[v]) for v, k in enumerate(self.owner)]
        actions, q_means = [], []
        for v, k in enumerate(self.owner):
            q = q_all[v]
            actions.append(rl.act_from_q(q, epsilon, self.act_rngs[k]))
            q_means.append(float(np.mean(q)))
        return actions, q_means

    def learn(self, states, actions, rewards, next_states, terminal: bool) -> list[float]:
        for v, k in enumerate(self.owner):
            self.agents[k].buffer.add(states[v], actions[v], rewards[v], next_states[v], terminal)
        losses = []
        if self.scheme == "centralized":
            for _ in self.owner:
                loss = rl.train_step(self.agents[0], self.learn_rngs[0])
                if loss is not None:
                    losses.append(loss)
        else:
            for k, agent in enumerate(self.agents):
                loss = rl.train_step(agent, self.learn_rngs[k])
                if loss is not None:
                    losses.append(loss)
        self.clock_steps += 1
        if self.scheme == "federated" and should_sync(self.clock_steps * self.step_duration_s, self.plan.federation):
            self.sync()
        return losses

    def sync(self) -> ModelParams:
        """Barrier round: collect every client, aggregate, redistribute."""
        updates = [client_update(a, k) for k, a in enumerate(self.agents)]
        g = fed_aggregate(updates)
        for a in self.agents:
            apply_global(a, g)
        self.syncs += 1
        return g

    def snapshots(self) -> list[ModelParams]:
        return [rl.snapshot(a) for a in self.agents]

    def load(self, params: list[ModelParams]) -> None:
        if len(params) != len(self.agents):
            raise rl.ShapeError(f"{len(params)} parameter sets for {len(self.agents)} agents")
        for a, p in zip(self.agents, params):
            rl.load_snapshot(a, p)


def run_episode(world: World, topo: SchemeTopology, mode: str, episode: int, rng: np.random.Generator,
                steps: int | None = None, step_rows: list | None = None,
                callback: Callable[[int, SchemeTopology], None] | None = None):
    """Play one fresh episode; returns ``(EpisodeSummary, mean_loss)``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    plan = topo.plan
    sc, lc = plan.scenario, plan.learning
    train = mode == "train" and topo.learns
    if steps is None:
        steps = lc.train_steps_per_episode if mode == "train" else lc.test_steps_per_episode
    epsilon = rl.epsilon_at(episode, lc) if mode == "train" else 0.0
    sigma_e = [qoe_score(cd, sc.max_cd, lc.penalty) for cd in sc.cd]

    world.reset(rng)
    states = np.tile(build_state_vector_zero(sc), (world.n, 1))
    acc = SummaryAccumulator()
    losses: list[float] = []
    for step in range(steps):
        actions, q_means = topo.select(states, epsilon)
        windows = world.advance_step(actions, rng)
        next_states = np.array([build_state_vector(k, sc) for k in windows])
        rewards = []
        for v, k in enumerate(windows):
            s_s = qos_score(k.app_delay_s, sc.max_delay_s)
            s_e = sigma_e[actions[v]]
            r = reward(s_s, s_e, lc.alpha)
            rewards.append(r)
            score = StepScore(s_s, s_e, r, actions[v], v, step, episode, q_means[v])
            acc.add(score)
            if step_rows is not None:
                step_rows.append(score)
        if train:
            losses.extend(topo.learn(states, actions, rewards, next_states, step == steps - 1))
        states = next_states
        if callback is not None:
            callback(step, topo)
    mean_loss = float(np.mean(losses)) if losses else math.nan
    return acc.result(), mean_loss


def build_state_vector_zero(sc: ScenarioConfig) -> np.ndarray:
    """State observed before the first step of an episode: an all-zero window."""
    return build_state_vector(KpiWindow(imsi=0), sc)


@dataclass
class TrainResult:
    params: list[ModelParams]
    episodes: list[dict] = field(default_factory=list)
    run_dir: Path | None = None


@dataclass
class EvalResult:
    summary: EpisodeSummary
    episodes: list[dict] = field(default_factory=list)
    run_dir: Path | None = None


def _step_row(plan: RunPlan, sc: StepScore) -> dict:
    return {"run_id": plan.name, "scheme": plan.scheme, "seed": plan.seed, "n": plan.n,
            "episode": sc.episode, "step": sc.step, "vehicle": sc.vehicle_id, "action": sc.action,
            "sigma_s": sc.sigma_s, "sigma_e": sc.sigma_e, "reward": sc.reward, "q_mean": sc.q_mean}


def _episode_row(plan: RunPlan, mode: str, episode: int, epsilon: float, s: EpisodeSummary, loss: float) -> dict:
    return {"run_id": plan.name, "scheme": plan.scheme, "seed": plan.seed, "n": plan.n, "mode": mode,
            "episode": episode, "epsilon": epsilon, "mean_reward": s.mean_reward,
            "mean_reward_norm": s.mean_reward_norm, "qos": s.qos, "qoe": s.qoe, "kpi_match": s.kpi_match,
            "mean_q": s.mean_q, "mean_loss": loss}


def _write_checkpoints(run_dir: Path, params: list[ModelParams], episode: int) -> None:
    for k, p in enumerate(params):
        d = run_dir / f"agent_{k}"
        d.mkdir(parents=True, exist_ok=True)
        p.save(d / f"ep{episode}.ckpt")


def train(plan: RunPlan, callback=None, stop_after: int | None = None) -> TrainResult:
    """Run the training episodes; writes per-episode log and checkpoints when ``out_dir`` is set.

    ``stop_after`` ends the run early at that episode count while keeping the
    exploration schedule of the full ``train_episodes`` run.
    """
    lc = plan.learning
    total = lc.train_episodes if stop_after is None else min(stop_after, lc.train_episodes)
    train_ss, _, agent_ss = plan.streams()
    rng = np.random.default_rng(train_ss)
    topo = SchemeTopology(plan, agent_ss)
    world = World(plan.scenario)
    run_dir = plan.run_dir
    step_rows: list | None = [] if (plan.trace_train_steps and run_dir is not None) else None
    rows = []
    for ep in range(total):
        summary, loss = run_episode(world, topo, "train", ep, rng, step_rows=step_rows, callback=callback)
        rows.append(_episode_row(plan, "train", ep, rl.epsilon_at(ep, lc), summary, loss))
        if run_dir is not None and topo.learns and lc.checkpoint_every_episodes \
                and (ep + 1) % lc.checkpoint_every_episodes == 0:
            _write_checkpoints(run_dir, topo.snapshots(), ep + 1)
        if (ep + 1) % 100 == 0:
            log.info("%s episode %d reward %.3f q %.3f", plan.name, ep + 1, summary.mean_reward, summary.mean_q)
    params = topo.snapshots()
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        write_csv(rows, run_dir / "train_episodes.csv", EPISODE_COLUMNS)
        if step_rows is not None:
            write_csv((_step_row(plan, s) for s in step_rows), run_dir / "train_steps.csv", STEP_COLUMNS)
        if topo.learns:
            _write_checkpoints(run_dir, params, total)
    return TrainResult(params, rows, run_dir)


def evaluate(params: list[ModelParams] | None, plan: RunPlan) -> EvalResult:
    """Greedy policy, no learning, on the evaluation world stream of the plan's seed."""
    lc = plan.learning
    _, eval_ss, agent_ss = plan.streams()
    rng = np.random.default_rng(eval_ss)
    topo = SchemeTopology(plan, agent_ss)
    if topo.learns:
        if params is None:
            raise ValueError(f"scheme {plan.scheme} needs trained parameters")
        topo.load(params)
    world = World(plan.scenario)
    run_dir = plan.run_dir
    step_rows: list | None = [] if (plan.trace_eval_steps and run_dir is not None) else None
    rows, summaries = [], []
    for ep in range(lc.test_episodes):
        summary, _ = run_episode(world, topo, "eval", ep, rng, step_rows=step_rows)
        summaries.append(summary)
        rows.append(_episode_row(plan, "eval", ep, 0.0, summary, math.nan))
    if not summaries:
        raise ValueError("test_episodes must be >= 1 to evaluate")
    total = merge_summaries(summaries)
    if run_dir is not None:
        write_csv(rows, run_dir / "eval_episodes.csv", EPISODE_COLUMNS)
        if step_rows is not None:
            write_csv((_step_row(plan, s) for s in step_rows), run_dir / "eval_steps.csv", STEP_COLUMNS)
    return EvalResult(total, rows, run_dir)


def load_params(run_dir, episode: int | None = None) -> list[ModelParams]:
    """Read ``agent_<k>/ep<episode>.ckpt`` for every agent (latest episode if not given)."""
    run_dir = Path(run_dir)
    agent_dirs = sorted(run_dir.glob("agent_*"), key=lambda p: int(p.name.split("_")[1]))
    out = []
    for d in agent_dirs:
        if episode is None:
            ck = max(d.glob("ep*.ckpt"), key=lambda p: int(p.stem[2:]))
        else:
            ck = d / f"ep{episode}.ckpt"
        out.append(ModelParams.load(ck))
    return out


def train_and_evaluate(plan: RunPlan) -> tuple[TrainResult, EvalResult]:
    if plan.federation.constant_action is not None:
        return TrainResult([]), evaluate(None, plan)
    tr = train(plan)
    return tr, evaluate(tr.params, plan)


def plan_with(plan: RunPlan, key: str, value) -> RunPlan:
    """Copy of ``plan`` with one config key changed (re-validated)."""
    sc, lc, fc = from_mapping({key: str(value)}, (plan.scenario, plan.learning, plan.federation))
    return dataclasses.replace(plan, scenario=sc, learning=lc, federation=fc)


def _sweep_job(args):
    axis, value, plan = args
    _, ev = train_and_evaluate(plan)
    s = ev.summary
    return {"axis": axis, "value": value, "seed": plan.seed, "scheme": plan.scheme, "n": plan.n,
            "mean_reward": s.mean_reward, "mean_reward_norm": s.mean_reward_norm, "qos": s.qos,
            "qoe": s.qoe, "kpi_match": s.kpi_match, "mean_q": s.mean_q}


def sweep(axis: str, values, base: RunPlan, seeds, out_path=None, jobs: int = 1) -> list[dict]:
    """Train and evaluate for every (value, seed); rows come back in (value, seed) order."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    tasks = []
    for value in values:
        for seed in seeds:
            p = plan_with(base, SWEEP_AXES[axis], value)
            tag = f"{axis}={value}".replace(":", "-")
            p = dataclasses.replace(p, seed=seed, run_id=f"{p.scheme.replace(':', '-')}_{tag}_seed{seed}")
            tasks.append((axis, value, p))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_job, tasks))
    else:
        rows = [_sweep_job(t) for t in tasks]
    if out_path is not None:
        write_csv(rows, out_path, SWEEP_COLUMNS)
    return rows
