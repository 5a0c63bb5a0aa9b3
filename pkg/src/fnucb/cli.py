"""Command-line runner: ``fnucb run | plot | analyze | validate-config``.

Output layout of ``run`` under ``--out``::

    traces/<cell>.csv     per-iteration regret trace
    ledgers/<cell>.json   communication ledger
    configs/<cell>.toml   resolved cell config
    summary.csv           mean and stderr of cumulative regret over seeds
    failures.json         only when some cell failed

Cell names are ``<policy>_N<N>_D<D>_seed<seed>``. The exit status is 1 iff
at least one cell failed, 2 for config errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
import traceback
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, plotting
from .config import ConfigError, cell_name, dump_config, load_config
from .harness import RegretTrace, RunConfig, run, write_ledger

log = logging.getLogger("fnucb")


def _run_cell(name: str, rc: RunConfig, out: str) -> dict:
    """Run one cell and write its files; never raises."""
    t0 = time.perf_counter()
    try:
        trace = run(rc)
        trace.to_csv(Path(out) / "traces" / f"{name}.csv")
        write_ledger(trace, Path(out) / "ledgers" / f"{name}.json")
        return {"cell": name, "ok": True, "seconds": time.perf_counter() - t0,
                "final": float(trace.mean_cum_regret()[-1]), "rounds": len(trace.rounds)}
    except Exception as exc:  # isolate the failure to this cell
        return {"cell": name, "ok": False, "seconds": time.perf_counter() - t0,
                "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


def group_key(rc: RunConfig) -> str:
    return cell_name(rc.replace(seed=0)).rsplit("_seed", 1)[0]


def summarize(traces) -> list[dict]:
    """Mean and stderr over seeds of per-agent cumulative regret, per (policy, N, D)."""
    groups: OrderedDict[str, list] = OrderedDict()
    meta = {}
    for rc, tr in traces:
        key = group_key(rc)
        groups.setdefault(key, []).append(tr.mean_cum_regret())
        meta[key] = rc
    rows = []
    for key, curves in groups.items():
        T = min(len(c) for c in curves)
        A = np.stack([c[:T] for c in curves])
        mean = A.mean(axis=0)
        se = A.std(axis=0, ddof=1) / math.sqrt(len(A)) if len(A) > 1 else np.zeros(T)
        rc = meta[key]
        for t in range(T):
            rows.append({"group": key, "policy": rc.policy, "N": rc.N, "D": rc.D, "t": t + 1,
                         "mean": repr(float(mean[t])), "stderr": repr(float(se[t])), "n_seeds": len(A)})
    return rows


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=plotting.SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def run_grid(config_path, out_dir, workers: int = 1) -> int:
    exp = load_config(config_path)
    cells = exp.cells()
    out = Path(out_dir)
    for sub in ("traces", "ledgers", "configs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for name, rc in cells:
        (out / "configs" / f"{name}.toml").write_text(dump_config(rc))
    log.info("running %d cell(s) with %d worker(s)", len(cells), workers)

    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_cell, name, rc, str(out)) for name, rc in cells]
            results = [f.result() for f in futs]
    else:
        results = [_run_cell(name, rc, str(out)) for name, rc in cells]

    done = []
    for (name, rc), res in zip(cells, results):
        if res["ok"]:
            log.info("%s: final %.3f, %d rounds, %.1fs", name, res["final"], res["rounds"], res["seconds"])
            done.append((rc, RegretTrace.from_csv(out / "traces" / f"{name}.csv")))
        else:
            log.error("%s failed: %s", name, res["error"])
    failed = [r for r in results if not r["ok"]]
    if done:
        write_summary(summarize(done), out / "summary.csv")
    if failed:
        with open(out / "failures.json", "w") as fh:
            json.dump(failed, fh, indent=1)
    return 1 if failed else 0


def analyze(config_path, out_dir, max_contexts: int = 1000, R: float = 0.01, delta: float = 0.1) -> int:
    exp = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for name, rc in exp.cells():
        try:
            trace = run(rc.replace(record_snapshots=True))
            report = analysis.analyze_trace(trace, rc.L, rc.resolved_lam, R=R, delta=delta,
                                            max_contexts=max_contexts)
            analysis.write_report(report, out / f"{name}.analysis.json")
            log.info("%s: d_tilde %.3f, %d bad epoch(s)", name, report["d_tilde"],
                     report.get("epochs", {}).get("n_bad", 0))
        except Exception as exc:
            log.error("%s failed: %s: %s", name, type(exc).__name__, exc)
            status = 1
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fnucb", description="Federated neural UCB simulations.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run every cell of a config grid")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=1)

    pl = sub.add_parser("plot", help="render summary.csv as SVG")
    pl.add_argument("summary")
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")

    a = sub.add_parser("analyze", help="NTK effective dimension, theory nu/D and epoch table")
    a.add_argument("config")
    a.add_argument("--out", required=True)
    a.add_argument("--max-contexts", type=int, default=1000)
    a.add_argument("--noise", type=float, default=0.01, help="sub-Gaussian noise scale R")
    a.add_argument("--delta", type=float, default=0.1)

    v = sub.add_parser("validate-config", help="parse a config and list its cells")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            if args.workers < 1:
                raise SystemExit("--workers must be >= 1")
            return run_grid(args.config, args.out, args.workers)
        if args.cmd == "plot":
            plotting.emit_plot(plotting.read_summary(args.summary), args.out, title=args.title)
            return 0
        if args.cmd == "analyze":
            return analyze(args.config, args.out, args.max_contexts, args.noise, args.delta)
        exp = load_config(args.config)
        for name, _ in exp.cells():
            print(name)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
