"""Acceptance criteria, each at its stated size and tolerance.

Every test records one PASS/FAIL line in ``RESULTS``; conftest prints them in
the terminal summary. The training-based criteria (7-10) take roughly an hour
in total on one core.
"""

import dataclasses
import itertools

import numpy as np
from conftest import DESK_CFG

from pqos import rl
from pqos.cli import main as cli_main
from pqos.config import load_config
from pqos.federation import ClientUpdate, fed_aggregate
from pqos.metrics import qoe_score, qos_score, reward
from pqos.orchestrator import RunPlan, evaluate, train, train_and_evaluate
from pqos.perception import chamfer_distance
from pqos.rl import ModelParams, ReplayBuffer
from pqos.simcore import World

RESULTS: dict[int, str] = {}
SEEDS5 = [1, 2, 3, 4, 5]


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    RESULTS[number] = line
    print(line)
    assert ok, line


def desk_plan(seed=0, **overrides) -> RunPlan:
    sc, lc, fc = load_config(DESK_CFG, {k: str(v) for k, v in overrides.items()})
    return RunPlan(sc, lc, fc, seed=seed)


def eval_reward(plan: RunPlan) -> float:
    return train_and_evaluate(plan)[1].summary.mean_reward_norm


# 1 ---------------------------------------------------------------------------

def test_criterion_01_reward_oracle():
    checks = [
        reward(1.2, 0.3, 0.5) == -1.0,
        all(reward(0.0, 0.0, a) == 1.0 for a in (0.0, 0.5, 1.0)),
        qoe_score(45.0, 45.0, 30.0) == 0.6,
        qos_score(0.05, 0.05) == 1.0,
    ]
    record(1, "reward, QoS and QoE oracles exact", all(checks), f"{sum(checks)}/4 exact")


# 2 ---------------------------------------------------------------------------

def _brute_cd(p, q):
    def directed(a, b):
        total = 0.0
        for x in a:
            total += min(sum((xi - yi) ** 2 for xi, yi in zip(x, y)) for y in b)
        return total
    return directed(p, q) + directed(q, p)


def test_criterion_02_chamfer_distance():
    rng = np.random.default_rng(2)
    worst, ok = 0.0, True
    for _ in range(200):
        p = rng.uniform(-50, 50, (int(rng.integers(1, 7)), 3))
        q = rng.uniform(-50, 50, (int(rng.integers(1, 7)), 3))
        ref = _brute_cd(p.tolist(), q.tolist())
        got = chamfer_distance(p, q)
        rel = abs(got - ref) / max(abs(ref), 1e-300)
        worst = max(worst, rel)
        shift = rng.uniform(-100, 100, 3)
        ok &= rel <= 1e-12
        ok &= got == chamfer_distance(q, p)
        ok &= abs(chamfer_distance(p + shift, q + shift) - got) <= 1e-9 * max(got, 1.0)
    record(2, "Chamfer distance vs brute force, symmetry, translation", ok, f"max rel err {worst:.1e}")


# 3 ---------------------------------------------------------------------------

def test_criterion_03_gradient_check():
    rng = np.random.default_rng(3)
    h, worst = 1e-5, 0.0
    for _ in range(20):
        sizes = (5, int(rng.integers(2, 8)), int(rng.integers(2, 8)), 3)
        m = rl.Mlp.initialized(sizes, rng)
        for b in m.biases:
            b[...] = rng.normal(0, 0.3, b.shape)
        batch = int(rng.integers(1, 8))
        s = rng.normal(size=(batch, 5))
        while min(np.abs(z).min() for z in rl._forward_cached(m, s)[1][:-1]) < 1e-3:
            s = rng.normal(size=(batch, 5))
        y = rng.normal(size=batch)
        a = rng.integers(0, 3, size=batch)
        analytic = rl.backward(m, s, y, a)
        numeric = np.empty_like(analytic)
        for i in range(m.params.size):
            keep = m.params[i]
            m.params[i] = keep + h
            up = rl.mse_loss(m, s, y, a)
            m.params[i] = keep - h
            down = rl.mse_loss(m, s, y, a)
            m.params[i] = keep
            numeric[i] = (up - down) / (2 * h)
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, err)
    record(3, "backprop vs central differences on 20 networks", worst < 1e-4, f"max rel err {worst:.1e}")


# 4 ---------------------------------------------------------------------------

def test_criterion_04_fedavg_properties():
    rng = np.random.default_rng(4)
    sizes = (15, 16, 64, 3)
    ok = True
    for _ in range(100):
        p1 = ModelParams(sizes, rng.normal(0, 1, rl.param_count(sizes)))
        p2 = ModelParams(sizes, rng.normal(0, 1, rl.param_count(sizes)))
        ok &= fed_aggregate([ClientUpdate(0, p1, int(rng.integers(0, 100)))]) == p1
        ups = [ClientUpdate(0, p1, 10), ClientUpdate(1, p2, 30)]
        g = fed_aggregate(ups)
        lo, hi = np.minimum(p1.values, p2.values), np.maximum(p1.values, p2.values)
        ok &= bool(np.all((lo <= g.values) & (g.values <= hi)))
        ok &= fed_aggregate(ups[::-1]) == g
        ok &= np.array_equal(g.values, 0.25 * p1.values + 0.75 * p2.values)
        three = ups + [ClientUpdate(2, ModelParams(sizes, rng.normal(0, 1, rl.param_count(sizes))), 7)]
        ref = fed_aggregate(three)
        ok &= all(fed_aggregate(list(perm)) == ref for perm in itertools.permutations(three))
    record(4, "FedAvg identity, envelope, permutation invariance, 1:3 example", ok)


# 5 ---------------------------------------------------------------------------

def test_criterion_05_determinism(tmp_path):
    args = ["train", "--config", str(DESK_CFG), "--seed", "42", "--set", "train_episodes=50",
            "--set", "num_vehicles=3"]
    for sub in ("a", "b"):
        assert cli_main([*args, "--out", str(tmp_path / sub)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    other = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    same = files == other and all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                                  for f in files)
    kinds = {f.suffix for f in files}
    ok = same and {".csv", ".ckpt"} <= kinds
    record(5, "two identical train invocations are byte-identical", ok, f"{len(files)} files compared")


# 6 ---------------------------------------------------------------------------

def test_criterion_06_constant_pareto():
    out = {}
    for name in ("C-R", "C-SC", "C-SA"):
        plan = desk_plan(num_vehicles=5, scheme=f"constant:{name}", test_episodes=20)
        out[name] = evaluate(None, plan).summary
    qoe = [out[k].qoe for k in ("C-R", "C-SC", "C-SA")]
    qos = [out[k].qos for k in ("C-SA", "C-SC", "C-R")]
    ok = qoe[0] > qoe[1] > qoe[2] and qos[0] > qos[1] > qos[2]
    detail = " ".join(f"{k}: qos {v.qos:.3f} qoe {v.qoe:.3f}" for k, v in out.items())
    record(6, "constant baselines: QoE C-R > C-SC > C-SA, QoS C-SA > C-SC > C-R", ok, detail)


# 7 ---------------------------------------------------------------------------

def test_criterion_07_underloaded_parity():
    seeds = [1, 2, 3]
    learned = {s: [] for s in ("centralized", "distributed", "federated")}
    for seed in seeds:
        for scheme in learned:
            learned[scheme].append(eval_reward(desk_plan(seed, num_vehicles=1, train_episodes=300, scheme=scheme)))
    best_const = max(
        np.mean([evaluate(None, desk_plan(seed, num_vehicles=1, scheme=f"constant:{a}")).summary.mean_reward_norm
                 for seed in seeds])
        for a in ("C-R", "C-SC", "C-SA"))
    means = {k: float(np.mean(v)) for k, v in learned.items()}
    spread = max(means.values()) - min(means.values())
    gap = max(abs(m - best_const) for m in means.values())
    ok = spread <= 0.05 and gap <= 0.05
    detail = " ".join(f"{k} {v:.3f}" for k, v in means.items()) + f" best constant {best_const:.3f}"
    record(7, "n = 1: schemes within 0.05 of each other and of the best constant", ok, detail)


# 8 ---------------------------------------------------------------------------

def test_criterion_08_congestion_ordering():
    hits, parts = 0, []
    for seed in SEEDS5:
        r = {s: eval_reward(desk_plan(seed, num_vehicles=8, train_episodes=600, scheme=s))
             for s in ("centralized", "federated", "distributed")}
        good = r["centralized"] >= r["federated"] >= r["distributed"]
        hits += good
        parts.append(f"s{seed}: C {r['centralized']:.3f} F {r['federated']:.3f} D {r['distributed']:.3f}")
    record(8, "n = 8: centralized >= federated >= distributed in >= 4/5 seeds", hits >= 4,
           f"{hits}/5; " + "; ".join(parts))


# 9 ---------------------------------------------------------------------------

def _q_at(plan: RunPlan, episode: int) -> float:
    rows = train(plan, stop_after=episode).episodes
    return float(np.mean([r["mean_q"] for r in rows[episode - 10:episode]]))


def test_criterion_09_federation_interval():
    hits, parts = 0, []
    for seed in SEEDS5:
        fast = _q_at(desk_plan(seed, num_vehicles=5, scheme="federated", fed_sync_interval_s=0.1), 200)
        slow = _q_at(desk_plan(seed, num_vehicles=5, scheme="federated", fed_sync_interval_s=2.0), 200)
        hits += fast > slow
        parts.append(f"s{seed}: {fast:.3f} vs {slow:.3f}")
    record(9, "Q at episode 200: sync every 0.1 s above every 2.0 s in >= 4/5 seeds", hits >= 4,
           f"{hits}/5; " + "; ".join(parts))


# 10 --------------------------------------------------------------------------

def test_criterion_10_penalty_sensitivity():
    rhos = np.linspace(0.0, 100.0, 51)
    monotone = all(qoe_score(20.0, 45.0, a) > qoe_score(20.0, 45.0, b) for a, b in zip(rhos, rhos[1:]))
    hits, parts = 0, []
    for seed in SEEDS5:
        r30 = eval_reward(desk_plan(seed, num_vehicles=8, scheme="federated", penalty=30))
        r10 = eval_reward(desk_plan(seed, num_vehicles=8, scheme="federated", penalty=10))
        hits += r30 > r10
        parts.append(f"s{seed}: {r30:.3f} vs {r10:.3f}")
    record(10, "federated n = 8: rho 30 beats rho 10 in >= 4/5 seeds; qoe strictly decreasing in rho",
           monotone and hits >= 4, f"{hits}/5; " + "; ".join(parts))


# 11 --------------------------------------------------------------------------

def test_criterion_11_simulator_and_replay_properties():
    rng = np.random.default_rng(11)
    failures = 0
    cases = 0
    sc, lc, _ = load_config(DESK_CFG)
    for _ in range(250):
        n = int(rng.integers(1, 5))
        cfg = dataclasses.replace(sc, num_vehicles=n, cell_radius_m=float(rng.choice([50.0, 200.0, 600.0])))
        w = World(cfg)
        w.reset(rng)
        for _ in range(int(rng.integers(1, 6))):
            acts = [None if rng.random() < 0.2 else int(rng.integers(3)) for _ in range(n)]
            w.advance_step(acts, rng)
            failures += any(v.enqueued_bytes != v.delivered_bytes + v.queued_bytes for v in w.vehicles)
        cases += 1
    for _ in range(250):
        n = int(rng.integers(1, 4))
        cfg = dataclasses.replace(sc, num_vehicles=n, mobility_speed_mps=0.0, shadowing_std_db=0.0,
                                  queue_delay_cap_s=1e9)
        pos = rng.uniform(-300, 300, (n, 2))
        first = []
        for a in (0, 1, 2):
            w = World(cfg)
            w.reset(np.random.default_rng(0), positions=pos)
            acts, found = [a] * n, [0.0] * n
            while not all(found):
                for i, k in enumerate(w.advance_step(acts, rng)):
                    found[i] = found[i] or k.app_delay_s
                acts = [None] * n
            first.append(found)
        failures += not all(cr >= csc >= csa for cr, csc, csa in zip(*first))
        cases += 1
    for _ in range(250):
        cap, k = int(rng.integers(1, 30)), int(rng.integers(0, 90))
        buf = ReplayBuffer(cap, state_size=1)
        for i in range(k):
            buf.add([i], 0, float(i), [i], False)
        failures += [t.r for t in buf.transitions()] != [float(i) for i in range(max(0, k - cap), k)]
        cases += 1
    for _ in range(250):
        e = int(rng.integers(1, 5000))
        lcx = dataclasses.replace(lc, train_episodes=e)
        failures += rl.epsilon_at(0, lcx) != 0.99
        failures += abs(rl.epsilon_at(e - 1, lcx) - 0.01) > 1e-12 and e >= 5
        cases += 1
    record(11, "byte conservation, delay monotonicity, FIFO eviction, epsilon endpoints",
           failures == 0 and cases >= 1000, f"{cases} cases, {failures} failures")
