"""Command line entry point.

    hetsgd bound|simulate|adversary|verify --config cfg.json [--seed N] [--out DIR] [--override k=v]

Outputs go to --out, else $HETSGD_OUT_DIR, else ./out.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .bounds import GAMMA_INF, bound_sequence, rule_for
from .lowerbound import (homog_adversary_run, markov_window_run, quarter_rule_holds,
                         window_params)
from .objectives import scaled_worst_case
from .optimizers import run_method

log = logging.getLogger("hetsgd")
OUT_ENV = "HETSGD_OUT_DIR"


def fmt(x) -> str:
    """12 significant digits; infinity is written as 'inf'."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def write_json(path: Path, obj):
    def clean(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


# -- experiments ---------------------------------------------------------------


def run_bound(cfg, seed, out: Path, base):
    profiles = C.build_profiles(cfg, base)
    consts = C.build_constants(cfg)
    kind = cfg["bound"]["kind"]
    rule, K = rule_for(kind, len(profiles), consts, C.build_lower(cfg))
    K = cfg["bound"].get("K", K)
    times = bound_sequence(profiles, consts, kind, C.build_lower(cfg), K=K)
    write_csv(out / "bound.csv", ["k", "t_k"], enumerate(times))
    summary = {"kind": kind, "K": K, "rule": type(rule).__name__,
               "threshold": getattr(rule, "B", getattr(rule, "H", None)),
               "scale": rule.scale, "final_time": times[-1], "workers": len(profiles),
               "config_hash": C.config_hash(cfg)}
    write_json(out / "bound.json", summary)
    print(f"{kind}: K={K} final time {fmt(times[-1])}")
    return 0


def _simulate_one(args):
    cfg, seed, base = args
    profiles = C.build_profiles(cfg, base)
    problem = C.build_problem(cfg, len(profiles))
    driver = C.build_driver(cfg, len(profiles), problem)
    m = cfg["method"]
    return run_method(driver, problem, profiles, seed=seed, horizon=m.get("horizon", math.inf),
                      mode=m.get("mode", "event"), record_every=m.get("record_every", 1))


def run_simulate(cfg, seed, out: Path, base):
    seeds = [seed + r for r in range(cfg.get("num_seeds", 1))]
    jobs = cfg.get("jobs", 1)
    tasks = [(cfg, s, base) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_simulate_one, tasks))
    else:
        results = [_simulate_one(t) for t in tasks]
    h = C.config_hash(cfg)
    for s, res in zip(seeds, results):
        write_csv(out / f"run_seed{s}.csv", ["k", "t_k", "grad_sq", "f_value"], res.trajectory)
        write_json(out / f"run_seed{s}.json", {
            "seed": s, "config_hash": h, "total_time": res.total_time,
            "iterations": len(res.batches) if res.batches else res.trajectory[-1][0],
            "grad_counts": res.grad_counts, "stopped_by": res.stopped_by,
        })
    common = set.intersection(*(set(r[0] for r in res.trajectory) for res in results))
    rows = []
    for k in sorted(common):
        vals = np.array([[r[1], r[2], r[3]] for res in results for r in res.trajectory if r[0] == k])
        rows.append([k, *vals.mean(axis=0)])
    write_csv(out / "aggregate.csv", ["k", "mean_t_k", "mean_grad_sq", "mean_f_value"], rows)
    print(f"{len(seeds)} run(s); mean total time {fmt(np.mean([r.total_time for r in results]))}")
    return 0


def run_adversary(cfg, seed, out: Path, base):
    profiles = C.build_profiles(cfg, base)
    consts = C.build_constants(cfg)
    adv = cfg["adversary"]
    rng = np.random.Generator(np.random.Philox(seed))
    if adv["kind"] == "homog":
        if "T" in adv:
            T = adv["T"]
        else:
            T = scaled_worst_case(consts, "homog", C.build_lower(cfg)).meta["T"]
        p = adv.get("p", 1.0 if consts.sigma2 == 0 else min(2 * consts.eps * GAMMA_INF ** 2 / consts.sigma2, 1.0))
        trials = adv.get("trials", 200)
        rows, held = [], 0
        for r in range(trials):
            tr = homog_adversary_run(profiles, p, T, rng, seed=r)
            rows.extend((r, k + 1, t, e) for k, (t, e) in enumerate(zip(tr.times, tr.etas)))
            held += quarter_rule_holds(tr, profiles, p)
        write_csv(out / "adversary_traces.csv", ["trial", "k", "t_k", "eta"], rows)
        freq = held / trials
        se = math.sqrt(0.25 / trials)
        write_csv(out / "adversary_summary.csv", ["statistic", "empirical", "target", "passed"],
                  [["quarter_rule_frequency", freq, 0.5 - 3 * se, freq >= 0.5 - 3 * se]])
        print(f"homogeneous adversary: T={T} p={fmt(p)} frequency {fmt(freq)}")
        return 0
    T = adv.get("T", 10)
    params = window_params(profiles, adv.get("K", 1.0), consts, adv.get("windows", T))
    trials = adv.get("trials", 1000)
    block = adv.get("block", 1)
    rows, good = [], 0
    for r in range(trials):
        w, t = markov_window_run(params, profiles, block, T, rng)
        rows.append((r, w, t))
        good += (w - 1) >= (T - 2) // 2
    write_csv(out / "markov_runs.csv", ["trial", "window", "time"], rows)
    write_csv(out / "markov_windows.csv", ["w", "t_bar", "option"],
              [(w, t, params.option[w]) for w, t in enumerate(params.t_bar)])
    freq = good / trials
    se = math.sqrt(0.75 * 0.25 / trials)
    write_csv(out / "adversary_summary.csv", ["statistic", "empirical", "target", "passed"],
              [["window_progress_frequency", freq, 0.75 - 3 * se, freq >= 0.75 - 3 * se]])
    print(f"window process: S={params.S} frequency {fmt(freq)}")
    return 0


def run_verify(cfg, seed, out: Path, base):
    from .acceptance import CRITERIA, run_criteria
    wanted = (cfg.get("verify") or {}).get("criteria") or sorted(CRITERIA)
    results = run_criteria(wanted, seed=seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.number:2d} {r.name:<{width}}  {r.detail}")
    write_csv(out / "verify.csv", ["criterion", "name", "passed", "detail"],
              [(r.number, r.name, r.passed, r.detail) for r in results])
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"bound": run_bound, "simulate": run_simulate, "adversary": run_adversary,
            "verify": run_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="hetsgd", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON experiment configuration")
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    ap.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted-path config override, repeatable")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def execute(command, config_path=None, seed=0, out=None, overrides=()):
    """Run one command; returns the exit status."""
    if config_path is None:
        if command != "verify":
            raise C.ConfigError(["--config is required for this command"])
        cfg, base = {"experiment": "verify"}, Path(".")
    else:
        cfg = C.load_config(config_path)
        base = Path(config_path).resolve().parent
    cfg = C.apply_overrides(cfg, overrides)
    if cfg.setdefault("experiment", command) != command:
        raise C.ConfigError([f"experiment: config is for {cfg['experiment']!r}, not {command!r}"])
    C.validate(cfg)
    out_dir = Path(out or os.environ.get(OUT_ENV) or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, seed, out_dir, base)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return execute(args.command, args.config, args.seed, args.out, args.override)
    except C.ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
