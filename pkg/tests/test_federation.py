import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqos import rl
from pqos.config import FederationConfig, LearningConfig
from pqos.federation import ClientUpdate, apply_global, client_update, fed_aggregate, should_sync
from pqos.rl import ModelParams, ShapeError

SIZES = (2, 2)  # 6 parameters


def params(values, sizes=SIZES):
    return ModelParams(sizes, np.asarray(values, dtype=float))


def test_one_to_three_weighting():
    a = ClientUpdate(0, params([0.0] * 6), 10)
    b = ClientUpdate(1, params([4.0] * 6), 30)
    g = fed_aggregate([a, b])
    np.testing.assert_array_equal(g.values, np.full(6, 3.0))


def test_zero_steps_falls_back_to_uniform():
    g = fed_aggregate([ClientUpdate(0, params([1.0] * 6), 0), ClientUpdate(1, params([2.0] * 6), 0)])
    np.testing.assert_allclose(g.values, 1.5)


def test_zero_weight_client_ignored_when_others_trained():
    g = fed_aggregate([ClientUpdate(0, params([1.0] * 6), 0), ClientUpdate(1, params([7.0] * 6), 5)])
    np.testing.assert_array_equal(g.values, np.full(6, 7.0))


def test_single_client_identity():
    p = params(np.arange(6.0))
    assert fed_aggregate([ClientUpdate(3, p, 17)]) == p


def test_errors():
    with pytest.raises(ValueError):
        fed_aggregate([])
    with pytest.raises(ShapeError):
        fed_aggregate([ClientUpdate(0, params([0.0] * 6), 1), ClientUpdate(1, params([0.0] * 4, (1, 2)), 1)])
    with pytest.raises(ValueError):
        ClientUpdate(0, params([0.0] * 6), -1)


def _random_updates(seed, count):
    rng = np.random.default_rng(seed)
    return [ClientUpdate(i, params(rng.normal(0, 10, 6)), int(rng.integers(0, 50))) for i in range(count)]


def test_aggregate_properties_over_random_pairs():
    for seed in range(100):
        ups = _random_updates(seed, 2)
        g = fed_aggregate(ups)
        lo = np.minimum(ups[0].params.values, ups[1].params.values)
        hi = np.maximum(ups[0].params.values, ups[1].params.values)
        assert np.all(lo <= g.values) and np.all(g.values <= hi)
        assert fed_aggregate(ups[::-1]) == g
        steps = np.array([u.local_learn_steps for u in ups], dtype=float)
        w = steps / steps.sum() if steps.sum() else np.full(2, 0.5)
        np.testing.assert_allclose(g.values, w[0] * ups[0].params.values + w[1] * ups[1].params.values,
                                   rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_permutation_invariance_bitwise(seed, count):
    ups = _random_updates(seed, count)
    ref = fed_aggregate(ups)
    for perm in itertools.islice(itertools.permutations(ups), 24):
        assert fed_aggregate(list(perm)).values.tobytes() == ref.values.tobytes()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6), st.integers(1, 6), st.integers(0, 100))
def test_identical_clients_fixed_point(vals, count, steps):
    p = params(vals)
    g = fed_aggregate([ClientUpdate(i, p, steps) for i in range(count)])
    assert g == p


def test_update_wire_round_trip():
    u = ClientUpdate(7, params(np.linspace(-1, 1, 6)), 42)
    data = u.to_bytes()
    assert data.startswith(b"PQOSUPDATE vehicle=7 steps=42\n")
    assert ClientUpdate.from_bytes(data) == u
    with pytest.raises(ValueError):
        ClientUpdate.from_bytes(b"HELLO\n" + data)


@pytest.mark.parametrize("t,interval,expected", [
    (0.1, 0.1, True), (0.2, 0.1, True), (0.3, 0.1, True), (0.15, 0.1, False), (0.0, 0.1, False),
    (0.5, 1.0, False), (1.0, 1.0, True), (3.0, 1.0, True), (0.3, 0.2, False), (0.4, 0.2, True),
])
def test_should_sync(t, interval, expected):
    assert should_sync(t, FederationConfig(fed_sync_interval_s=interval)) is expected


def test_should_sync_accumulated_clock():
    fc = FederationConfig(fed_sync_interval_s=0.5)
    fired = [k for k in range(1, 41) if should_sync(k * 0.1, fc)]
    assert fired == [5, 10, 15, 20, 25, 30, 35, 40]


def _agent(seed=0, **kw):
    lc = dataclasses.replace(LearningConfig(batch_size=4, learning_rate=0.01), **kw)
    return rl.DdqnAgent(lc, np.random.default_rng(seed))


def test_apply_global_installs_primary_and_target():
    agent = _agent()
    agent.steps_since_sync = 9
    g = rl.snapshot(_agent(seed=5))
    apply_global(agent, g)
    assert rl.snapshot(agent) == g
    np.testing.assert_array_equal(agent.target.params, g.values)
    assert agent.steps_since_sync == 0


def test_apply_global_noop_keeps_target():
    agent = _agent()
    rng = np.random.default_rng(1)
    for _ in range(10):
        agent.buffer.add(rng.random(15), 0, 1.0, rng.random(15), False)
    rl.train_step(agent, rng)
    target_before = agent.target.params.copy()
    apply_global(agent, rl.snapshot(agent))
    np.testing.assert_array_equal(agent.target.params, target_before)


def test_client_update_reports_steps_since_sync():
    agent = _agent()
    rng = np.random.default_rng(2)
    for _ in range(10):
        agent.buffer.add(rng.random(15), 1, 0.5, rng.random(15), False)
    for _ in range(3):
        rl.train_step(agent, rng)
    u = client_update(agent, 4)
    assert (u.vehicle_id, u.local_learn_steps) == (4, 3)
    assert u.params == rl.snapshot(agent)


def test_apply_global_shape_check():
    with pytest.raises(ShapeError):
        apply_global(_agent(), params([0.0] * 6))
