import sys
from pathlib import Path

import pytest

from pqos.config import FederationConfig, LearningConfig, ScenarioConfig, load_config
from pqos.orchestrator import RunPlan

ROOT = Path(__file__).resolve().parents[1]
DESK_CFG = ROOT / "configs" / "desk.cfg"


@pytest.fixture
def sc():
    return ScenarioConfig()


@pytest.fixture
def lc():
    return LearningConfig()


@pytest.fixture
def desk():
    return load_config(DESK_CFG)


def small_plan(scheme="federated", n=2, seed=0, **learning):
    """A few short episodes, enough to exercise every code path quickly."""
    base = dict(train_episodes=3, train_steps_per_episode=12, test_episodes=2, test_steps_per_episode=15,
                batch_size=4, replay_capacity_transitions=200, learning_rate=1e-3,
                target_sync_interval_steps=7)
    base.update(learning)
    return RunPlan(ScenarioConfig(num_vehicles=n), LearningConfig(**base), FederationConfig(scheme=scheme), seed=seed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
