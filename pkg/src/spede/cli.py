"""Command-line entry point: ``spede run | bench | plotdata``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .agents import history_to_csv, run_agent
from .config import ConfigError, load_config, to_run_config

LEDGER_REQUIRED = ("k", "cum_regret", "return", "se")
MERGED_COLUMNS = ("run_id", "episode", "cum_regret", "return", "se",
                  "n_runs", "cum_regret_median", "cum_regret_q25", "cum_regret_q75")


def write_json_atomic(obj, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_one(schema, seed: int, out: Path) -> dict:
    """Run one seed and write manifest.json, ledger.csv and history.csv into ``out``."""
    result = run_agent(to_run_config(schema, seed))
    out.mkdir(parents=True, exist_ok=True)
    result.ledger.to_csv(out / "ledger.csv")
    history_to_csv(result.history, out / "history.csv")
    config_echo = schema.model_dump()
    config_echo["seed"] = seed
    manifest = {"config": config_echo, "version": __version__, **result.manifest}
    write_json_atomic(manifest, out / "manifest.json")
    return {"seed": seed, "final_cum_regret": manifest["final_cum_regret"],
            "violations": manifest["invariant_violations"], "out": str(out)}


def cmd_run(args) -> int:
    try:
        schema = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed = schema.seed if args.seed is None else args.seed
    out = Path(args.out)
    try:
        to_run_config(schema, seed)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.replicates <= 1:
        results = [_run_one(schema, seed, out)]
    else:
        seeds = [seed + i for i in range(args.replicates)]
        dirs = [out / f"seed_{s}" for s in seeds]
        workers = min(args.replicates, os.cpu_count() or 1)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_one, [schema] * len(seeds), seeds, dirs))
        else:
            results = [_run_one(schema, s, d) for s, d in zip(seeds, dirs)]
        merge_ledgers([d / "ledger.csv" for d in dirs], out / "merged_ledger.csv",
                      run_ids=[f"seed_{s}" for s in seeds], figure=False)
    status = 0
    for r in results:
        print(f"seed {r['seed']}: final cumulative regret {r['final_cum_regret']:.6f}")
        for v in r["violations"]:
            print(f"invariant violation (seed {r['seed']}): {v}", file=sys.stderr)
            status = 1
    return status


def cmd_bench(args) -> int:
    from .plotting import plot_bench
    from .theory_bench import SUITES, failed_checks, run_suite, write_report

    if args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; valid suites: {', '.join(SUITES)}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_suite(args.suite, seed=args.seed)
    write_report(rows, out / "bench_report.csv")
    plot_bench(rows, out / "bench_report.png")
    failed = failed_checks(rows)
    for r in rows:
        if r.kind == "check":
            print(f"{'PASS' if r.passed else 'FAIL'} {r.suite}/{r.check}: lhs={r.lhs:.6g} rhs={r.rhs:.6g}")
    return 1 if failed else 0


class LedgerFormatError(ValueError):
    pass


def read_ledger(path) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in LEDGER_REQUIRED if c not in (reader.fieldnames or [])]
        if missing:
            raise LedgerFormatError(f"{path}: missing columns {missing}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({"episode": int(row["k"]), "cum_regret": float(row["cum_regret"]),
                             "return": float(row["return"]), "se": float(row["se"])})
            except (TypeError, ValueError):
                raise LedgerFormatError(f"{path}:{line_no}: malformed row") from None
    if not rows:
        raise LedgerFormatError(f"{path}: no data rows")
    return rows


def _run_ids(paths) -> List[str]:
    ids = [Path(p).stem for p in paths]
    if len(set(ids)) == len(ids):
        return ids
    ids = [f"{Path(p).parent.name}/{Path(p).stem}" for p in paths]
    if len(set(ids)) == len(ids):
        return ids
    return [f"run{i}" for i in range(len(paths))]


def episode_summary(ledgers: List[List[dict]]) -> dict:
    """Median and quartiles of cumulative regret over the runs that reach each episode."""
    by_ep = {}
    for rows in ledgers:
        for r in rows:
            by_ep.setdefault(r["episode"], []).append(r["cum_regret"])
    eps = sorted(by_ep)
    vals = [np.asarray(by_ep[e]) for e in eps]
    return {
        "episode": np.asarray(eps),
        "n_runs": np.asarray([v.size for v in vals]),
        "median": np.asarray([np.median(v) for v in vals]),
        "q25": np.asarray([np.percentile(v, 25) for v in vals]),
        "q75": np.asarray([np.percentile(v, 75) for v in vals]),
    }


def merge_ledgers(paths, out_path, run_ids: Optional[List[str]] = None, figure: bool = True) -> Path:
    ledgers = [read_ledger(p) for p in paths]
    run_ids = run_ids or _run_ids(paths)
    summary = episode_summary(ledgers)
    index = {int(e): i for i, e in enumerate(summary["episode"])}
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MERGED_COLUMNS)
        for run_id, rows in zip(run_ids, ledgers):
            for r in rows:
                i = index[r["episode"]]
                writer.writerow([run_id, r["episode"], repr(r["cum_regret"]), repr(r["return"]), repr(r["se"]),
                                 int(summary["n_runs"][i]), repr(float(summary["median"][i])),
                                 repr(float(summary["q25"][i])), repr(float(summary["q75"][i]))])
    if figure:
        from .plotting import plot_regret_curves
        runs = {rid: ([r["episode"] for r in rows], [r["cum_regret"] for r in rows])
                for rid, rows in zip(run_ids, ledgers)}
        plot_regret_curves(runs, summary, out_path.with_suffix(".png"))
    return out_path


def cmd_plotdata(args) -> int:
    try:
        path = merge_ledgers(args.ledgers, args.out)
    except (LedgerFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path} and {path.with_suffix('.png')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spede", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one learning experiment")
    p.add_argument("--config", required=True, help="YAML or JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--replicates", type=int, default=1, help="run seeds seed..seed+N-1 and merge ledgers")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run theory-bench checks")
    p.add_argument("--suite", default="all", help="kernel, bounds, eluder, lemmas, coverage or all")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plotdata", help="merge ledgers into long-format curve data and a figure")
    p.add_argument("ledgers", nargs="+", help="ledger CSV files")
    p.add_argument("--out", required=True, help="merged CSV path; the figure goes next to it as .png")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and args.replicates < 1:
        print("error: --replicates must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
