"""Command-line entry point.

    pqos train    --config desk.cfg --seed 1 2 --set num_vehicles=5
    pqos eval     --config desk.cfg --seed 1
    pqos sweep    --config desk.cfg --seed 1 2 --axis n --values 1,5,8 --jobs 2
    pqos validate --config desk.cfg
    pqos selftest

Outputs go under ``--out`` (default ``$PQOS_OUTPUT_DIR`` or ``./pqos_out``).
Exit codes: 2 usage error, 3 configuration error, 4 I/O error, 1 failed selftest.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, rl
from .config import ConfigError, as_dict, dump_config, from_mapping, load_config
from .federation import ClientUpdate, fed_aggregate
from .orchestrator import RunPlan, evaluate, load_params, sweep, train
from .perception import chamfer_distance

log = logging.getLogger("pqos")

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
OUTPUT_ENV = "PQOS_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pqos", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seeds=True):
        p.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
        p.add_argument("--set", dest="overrides", type=_override, action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key; repeatable")
        if seeds:
            p.add_argument("--seed", dest="seeds", type=int, nargs="+", default=[0])
            p.add_argument("--out", type=Path, default=None,
                           help=f"output directory (default ${OUTPUT_ENV} or ./pqos_out)")

    p = sub.add_parser("train", help="train agents and write logs and checkpoints")
    common(p)
    p.add_argument("--trace-steps", action="store_true", help="also write per-step training rows")
    p = sub.add_parser("eval", help="evaluate trained checkpoints (or a constant scheme)")
    common(p)
    p.add_argument("--episode", type=int, default=None, help="checkpoint episode (default: latest)")
    p = sub.add_parser("sweep", help="train and evaluate over one axis")
    common(p)
    p.add_argument("--axis", required=True, choices=["n", "fed_sync_interval_s", "penalty", "scheme"])
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p = sub.add_parser("validate", help="check a config and print it fully resolved")
    common(p, seeds=False)
    sub.add_parser("selftest", help="run the built-in oracle checks")
    return parser


def _resolve(args):
    overrides = dict(args.overrides)
    if args.config is None:
        return from_mapping(overrides)
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUTPUT_ENV, "pqos_out"))


def _write_manifest(out: Path, command: str, cfgs, seeds, extra=None) -> None:
    manifest = {"version": __version__, "command": command, "seeds": list(seeds), "config": as_dict(*cfgs)}
    manifest.update(extra or {})
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sweep_value(axis: str, raw: str):
    try:
        if axis == "scheme":
            return raw
        if axis == "n":
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{axis}: cannot parse sweep value {raw!r}", axis) from None


def _cmd_train(args, cfgs, out: Path) -> int:
    _write_manifest(out, "train", cfgs, args.seeds)
    for seed in args.seeds:
        plan = RunPlan(*cfgs, seed=seed, out_dir=out, trace_train_steps=args.trace_steps)
        if plan.federation.constant_action is not None:
            print(f"{plan.name}: constant scheme, nothing to train")
            continue
        res = train(plan)
        last = res.episodes[-1] if res.episodes else None
        tail = f"last reward {last['mean_reward_norm']:.4f}" if last else "no episodes"
        print(f"{plan.name}: trained {len(res.episodes)} episodes, {tail} -> {res.run_dir}")
    return 0


def _cmd_eval(args, cfgs, out: Path) -> int:
    _write_manifest(out, "eval", cfgs, args.seeds, {"checkpoint_episode": args.episode})
    for seed in args.seeds:
        plan = RunPlan(*cfgs, seed=seed, out_dir=out)
        params = None
        if plan.federation.constant_action is None:
            params = load_params(plan.run_dir, args.episode)
            if not params:
                raise FileNotFoundError(f"no checkpoints under {plan.run_dir}")
        s = evaluate(params, plan).summary
        print(f"{plan.name}: reward {s.mean_reward_norm:.4f} qos {s.qos:.4f} qoe {s.qoe:.4f} "
              f"kpi {s.kpi_match:.4f}")
    return 0


def _cmd_sweep(args, cfgs, out: Path) -> int:
    values = [_sweep_value(args.axis, v.strip()) for v in args.values.split(",") if v.strip()]
    _write_manifest(out, "sweep", cfgs, args.seeds, {"axis": args.axis, "values": values})
    base = RunPlan(*cfgs, out_dir=out)
    target = out / f"sweep_{args.axis}.csv"
    rows = sweep(args.axis, values, base, args.seeds, out_path=target, jobs=args.jobs)
    for r in rows:
        print(f"{args.axis}={r['value']} seed={r['seed']}: reward {r['mean_reward_norm']:.4f} "
              f"qos {r['qos']:.4f} qoe {r['qoe']:.4f}")
    print(f"wrote {target}")
    return 0


def _cmd_validate(args, cfgs) -> int:
    sys.stdout.write(dump_config(*cfgs))
    return 0


# --- selftest oracles -------------------------------------------------------

def _brute_cd(p, q) -> float:
    def directed(a, b):
        return sum(min(sum((x - y) ** 2 for x, y in zip(u, v)) for v in b) for u in a)
    return directed(p, q) + directed(q, p)


def check_chamfer(rng: np.random.Generator, cases: int = 200) -> bool:
    for _ in range(cases):
        p = rng.uniform(-10, 10, (int(rng.integers(1, 7)), 3))
        q = rng.uniform(-10, 10, (int(rng.integers(1, 7)), 3))
        ref = _brute_cd(p.tolist(), q.tolist())
        got = chamfer_distance(p, q)
        if not math.isclose(got, ref, rel_tol=1e-12, abs_tol=1e-12) or got != chamfer_distance(q, p):
            return False
    return True


def check_gradient(rng: np.random.Generator, nets: int = 20, h: float = 1e-5) -> bool:
    for _ in range(nets):
        sizes = (4, int(rng.integers(2, 6)), int(rng.integers(2, 5)), 3)
        m = rl.Mlp.initialized(sizes, rng)
        for b in m.biases:
            b[...] = rng.normal(0, 0.3, b.shape)
        batch = int(rng.integers(1, 6))
        s = rng.normal(size=(batch, 4))
        while min(np.abs(z).min() for z in rl._forward_cached(m, s)[1][:-1]) < 1e-3:
            s = rng.normal(size=(batch, 4))
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
        denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        if np.linalg.norm(analytic - numeric) / denom >= 1e-4:
            return False
    return True


def check_fedavg(rng: np.random.Generator, pairs: int = 100) -> bool:
    sizes = (3, 2)
    for _ in range(pairs):
        p1 = rl.ModelParams(sizes, rng.normal(0, 10, 8))
        p2 = rl.ModelParams(sizes, rng.normal(0, 10, 8))
        if fed_aggregate([ClientUpdate(0, p1, int(rng.integers(0, 9)))]) != p1:
            return False
        ups = [ClientUpdate(0, p1, 10), ClientUpdate(1, p2, 30)]
        g = fed_aggregate(ups)
        if g != fed_aggregate(ups[::-1]):
            return False
        lo, hi = np.minimum(p1.values, p2.values), np.maximum(p1.values, p2.values)
        if not (np.all(lo <= g.values) and np.all(g.values <= hi)):
            return False
        if not np.allclose(g.values, 0.25 * p1.values + 0.75 * p2.values, rtol=1e-12, atol=1e-12):
            return False
    return True


def _cmd_selftest() -> int:
    checks = [("chamfer distance vs brute force", check_chamfer),
              ("backprop vs finite differences", check_gradient),
              ("fedavg identity, envelope, order, 1:3 weights", check_fedavg)]
    ok = True
    for name, fn in checks:
        passed = fn(np.random.default_rng(20240501))
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return _cmd_selftest()
    try:
        cfgs = _resolve(args)
    except ConfigError as err:
        print(f"pqos: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "validate":
            return _cmd_validate(args, cfgs)
        out = _out_dir(args)
        if args.command == "train":
            return _cmd_train(args, cfgs, out)
        if args.command == "eval":
            return _cmd_eval(args, cfgs, out)
        return _cmd_sweep(args, cfgs, out)
    except ConfigError as err:
        print(f"pqos: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"pqos: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
