"""Benchmark harness: one subcommand per experiment, machine-readable output.

Every command resolves its configuration as defaults <- --config JSON
<- command-line flags, writes a JSON run manifest (config hash, seed,
precision, versions; no timestamps) next to its CSVs, and is
byte-reproducible under a fixed seed and --threads 1 except for the
explicitly quarantined wall-time measurements (timings.csv files).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import platform
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .experiments import (DEFAULTS, run_complexity, run_ghost_pulse,
                          run_hessian, run_invariance, run_memory, run_params,
                          run_stiffness, run_verify)

COMMANDS = ("verify", "invariance", "ghost-pulse", "stiffness", "memory",
            "complexity", "hessian", "params")


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows, columns):
    if rows and set(columns) != set(rows[0]):
        raise ValueError(f"csv schema mismatch: {columns} vs {sorted(rows[0])}")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def resolve_config(command, config_path=None, seed=None, precision=None, threads=None):
    cfg = copy.deepcopy(DEFAULTS[command])
    if config_path:
        with open(config_path) as f:
            user = json.load(f)
        unknown = set(user) - set(cfg)
        if unknown:
            raise SystemExit(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(user)
    if precision is not None:
        if "precision" not in cfg:
            raise SystemExit(f"--precision does not apply to {command}")
        cfg["precision"] = precision
    meta = {"seed": 0 if seed is None else seed,
            "threads": 1 if threads is None else threads}
    return cfg, meta


def write_manifest(out_dir, command, cfg, meta):
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": meta["seed"],
        "precision": cfg.get("precision"),
        "threads": meta["threads"],
        "versions": {
            "pgflow": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def cmd_verify(cfg, meta, out):
    rows, breaches = run_verify(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows,
              ["L", "D", "N", "seed", "rel_err_unrolled", "rel_err_fd"])
    if breaches:
        kind, row = breaches[0]
        print(f"verify: FAIL {len(breaches)} tolerance breach(es); first: {kind} {row}")
        return 1
    print(f"verify: OK ({len(rows)} grid points)")
    return 0


def cmd_invariance(cfg, meta, out):
    rows, report = run_invariance(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows, ["L", "rel_err"])
    write_json(os.path.join(out, "regression.json"), report.to_dict())
    verdict = "OK" if report.p_value > 0.05 else "SLOPE SIGNIFICANT"
    print(f"invariance: {verdict} slope={report.slope:.3e} p={report.p_value:.3f}")
    return 0 if report.p_value > 0.05 else 1


def cmd_ghost_pulse(cfg, meta, out):
    if cfg.get("io_dir"):
        cfg = dict(cfg, io_dir=os.path.join(out, cfg["io_dir"]))
    mag, summary = run_ghost_pulse(cfg, meta["seed"])
    t0 = cfg["pulse_index"]
    rows = [{"t": t, "mag": float(m), "is_pulse": 1 if t == t0 else 0}
            for t, m in enumerate(mag)]
    write_csv(os.path.join(out, "sensitivity.csv"), rows, ["t", "mag", "is_pulse"])
    timing = {"seconds": summary.pop("seconds")}
    write_json(os.path.join(out, "summary.json"), summary)
    write_json(os.path.join(out, "timings.json"), timing)
    ok = summary["pre_pulse_all_zero"] and summary["max_post_pulse"] > 0.0
    print(f"ghost-pulse: {'OK' if ok else 'FAIL'} "
          f"pre-zero={summary['pre_pulse_all_zero']} "
          f"post-max={summary['max_post_pulse']:.3e}")
    return 0 if ok else 1


def cmd_stiffness(cfg, meta, out):
    rows = run_stiffness(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows,
              ["stiffness", "rel_err", "naive_underflowed"])
    worst = max(r["rel_err"] for r in rows)
    n_under = sum(r["naive_underflowed"] for r in rows)
    ok = worst < cfg["tol"]
    print(f"stiffness: {'OK' if ok else 'FAIL'} worst rel_err={worst:.3e} "
          f"naive underflow at {n_under}/{len(rows)} grid points")
    return 0 if ok else 1


def cmd_memory(cfg, meta, out):
    rows, slope_rows, timing_rows = run_memory(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows,
              ["strategy", "L", "B", "D", "N", "graph_peak_bytes",
               "io_peak_bytes", "total_peak_bytes"])
    write_csv(os.path.join(out, "slopes.csv"), slope_rows,
              ["strategy", "metric", "slope", "intercept", "stderr", "t_stat",
               "p_value", "n"])
    write_csv(os.path.join(out, "timings.csv"), timing_rows,
              ["strategy", "L", "seconds"])
    discard = [r for r in rows if r["strategy"] == "streamed-discard"]
    flat = len({r["graph_peak_bytes"] for r in discard}) == 1
    print(f"memory: graph peak {'flat' if flat else 'NOT FLAT'} across lengths "
          f"for streamed-discard")
    return 0 if flat else 1


def cmd_complexity(cfg, meta, out):
    rows, slope_rows = run_complexity(cfg, meta["seed"])
    write_csv(os.path.join(out, "timings.csv"), rows, ["method", "N", "seconds"])
    write_csv(os.path.join(out, "timing_slopes.csv"), slope_rows,
              ["method", "loglog_slope", "stderr", "n"])
    slopes = {r["method"]: r["loglog_slope"] for r in slope_rows}
    print(f"complexity: dense-rtrl slope={slopes['dense-rtrl']:.2f} "
          f"pgf slope={slopes['pgf']:.2f}")
    return 0


def cmd_hessian(cfg, meta, out):
    rows = run_hessian(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows,
              ["seed", "check", "rel_err", "tolerance"])
    bad = [r for r in rows if r["rel_err"] > r["tolerance"]]
    print(f"hessian: {'OK' if not bad else 'FAIL'} ({len(rows)} checks)")
    return 0 if not bad else 1


def cmd_params(cfg, meta, out):
    from .paramgrad import save_accumulators

    rows, block_rows, accs = run_params(cfg, meta["seed"])
    write_csv(os.path.join(out, "results.csv"), rows,
              ["mode", "param", "index", "analytic", "fd", "rel_err"])
    write_csv(os.path.join(out, "block_invariance.csv"), block_rows,
              ["mode", "param", "rel_err"])
    for mode, acc in accs.items():
        save_accumulators(acc, os.path.join(out, f"accumulators_{mode}"))
    bad = [r for r in rows if r["rel_err"] > cfg["tol_fd"]]
    bad += [r for r in block_rows if r["rel_err"] > cfg["tol_block"]]
    print(f"params: {'OK' if not bad else 'FAIL'} "
          f"({len(rows)} parameters, {len(block_rows)} block checks)")
    return 0 if not bad else 1


HANDLERS = {
    "verify": cmd_verify,
    "invariance": cmd_invariance,
    "ghost-pulse": cmd_ghost_pulse,
    "stiffness": cmd_stiffness,
    "memory": cmd_memory,
    "complexity": cmd_complexity,
    "hessian": cmd_hessian,
    "params": cmd_params,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pgflow",
        description="Benchmarks for constant-memory forward-mode differentiation "
                    "of selective linear recurrences.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat JSON config file")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--precision", choices=("f32", "f64"), default=None)
        p.add_argument("--threads", type=int, default=None)
    pc = sub.add_parser("print-config")
    pc.add_argument("target", nargs="?", default=None, choices=COMMANDS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "print-config":
        sel = args.target
        json.dump(DEFAULTS if sel is None else DEFAULTS[sel], sys.stdout,
                  indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    cfg, meta = resolve_config(args.command, args.config, args.seed,
                               args.precision, args.threads)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, args.command, cfg, meta)
    with threadpool_limits(limits=meta["threads"]):
        return HANDLERS[args.command](cfg, meta, args.out)


if __name__ == "__main__":
    sys.exit(main())
