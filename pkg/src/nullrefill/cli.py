"""Command-line runner: ``nullrefill run | compare | validate | batch``.

Exit codes: 0 pass, 1 passivity monitor failure, 2 configuration error,
3 singularity abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine import FIELDS, RunResult, run
from .kinematics import KinematicsError
from .scenario import Scenario, ScenarioError, load_scenario

EXIT_OK, EXIT_MONITOR, EXIT_CONFIG, EXIT_SINGULAR = 0, 1, 2, 3
OUT_ENV = "NULLREFILL_OUT"
CSV_SCHEMA = 1

# Record vectors serialised per component, in CSV order.
_VECTOR_COLUMNS = {"q": "q", "qdot": "qdot", "x1": "x1", "x1dot": "x1dot",
                   "v2": "v2", "F1": "F1", "F_null": "Fnull"}
_RENAMED = {"T": "T_tank"}
_INT_COLUMNS = {"phi", "gamma", "flags"}

PLOT_SCRIPT = '''\
"""Plot task velocity, tank energy and null speed from nullrefill CSV files.

usage: python plot_runs.py run1.csv [run2.csv ...]
"""
import csv
import sys

import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 8))
for path in sys.argv[1:]:
    d = load(path)
    v2 = [sum(d[k][i] ** 2 for k in d if k.startswith("v2_")) ** 0.5 for i in range(len(d["t"]))]
    axes[0].plot(d["t"], d["x1dot_2"], label=path)
    axes[1].plot(d["t"], d["T_tank"], label=path)
    axes[2].plot(d["t"], v2, label=path)
axes[0].set_ylabel("task velocity z [m/s]")
axes[1].set_ylabel("tank energy [J]")
axes[2].set_ylabel("|v2|")
axes[2].set_xlabel("t [s]")
axes[0].legend()
plt.tight_layout()
plt.show()
'''


def csv_header(n: int, m1: int, m2: int) -> list[str]:
    dims = {"q": n, "qdot": n, "x1": m1, "x1dot": m1, "v2": m2, "F1": m1, "F_null": m2}
    cols = []
    for f in FIELDS:
        if f in _VECTOR_COLUMNS:
            cols += [f"{_VECTOR_COLUMNS[f]}_{i}" for i in range(dims[f])]
        else:
            cols.append(_RENAMED.get(f, f))
    return cols


def atomic_write(path: Path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates owner-only files
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_csv(result: RunResult) -> str:
    rec = result.records
    header = csv_header(rec.n, rec.m1, rec.m2)
    cols, fmts = [], []
    for f in FIELDS:
        a = getattr(rec, f)
        a = a[:, None] if a.ndim == 1 else a
        cols.append(a)
        fmts += ["%d" if f in _INT_COLUMNS else "%.17g"] * a.shape[1]
    table = np.hstack([c.astype(float) for c in cols])
    fmt = ",".join(fmts)
    lines = [",".join(header)]
    lines += [fmt % tuple(row) for row in table.tolist()]
    return "\n".join(lines) + "\n"


def summary_dict(result: RunResult) -> dict:
    d = result.summary.to_dict()
    d["csv_schema"] = CSV_SCHEMA
    d["dt"] = result.scenario.dt
    d["duration"] = result.scenario.duration
    return d


def write_outputs(result: RunResult, out: Path, stem: str | None = None) -> Path:
    stem = stem or result.scenario.name
    csv_path = out / f"{stem}.csv"
    atomic_write(csv_path, records_csv(result))
    atomic_write(out / f"{stem}_summary.json", json.dumps(summary_dict(result), indent=2) + "\n")
    atomic_write(out / "plot_runs.py", PLOT_SCRIPT)
    return csv_path


def exit_code(result: RunResult) -> int:
    if result.summary.status == "singular":
        return EXIT_SINGULAR
    return EXIT_OK if result.summary.passivity_pass else EXIT_MONITOR


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "nullrefill_out")


def _apply_overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if getattr(args, "duration", None) is not None:
        changes["duration"] = args.duration
    if getattr(args, "seed", None) is not None:
        changes["force"] = replace(sc.force, seed=args.seed)
    return replace(sc, **changes).validate() if changes else sc


def _report(result: RunResult):
    s = result.summary
    verdict = "PASS" if s.passivity_pass else "FAIL"
    print(
        f"{s.scenario}: {s.status}, passivity {verdict} (worst {s.worst_violation:.3e} J), "
        f"max dev {s.max_velocity_deviation:.3e} m/s, psi active {s.psi_active_fraction:.4f}, "
        f"T in [{s.T_min:.4f}, {s.T_max:.4f}] J, clamps {s.clamp_count}, "
        f"harvested {s.energy_harvested:.4f} J, {s.runtime_s:.2f} s"
    )
    if s.message:
        print(f"  {s.message}")


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    result = run(sc)
    path = write_outputs(result, _out_dir(args))
    _report(result)
    print(f"  wrote {path}")
    return exit_code(result)


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"{sc.name}: valid ({sc.strategy}, {sc.steps} steps of {sc.dt} s)")
    if sc.defaulted:
        print("  defaulted: " + ", ".join(sc.defaulted))
    return EXIT_OK


def cmd_compare(args) -> int:
    base = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args)
    results = {}
    for strategy in ("null_refill", "damping_injection"):
        sc = replace(base, strategy=strategy, name=f"{base.name}__{strategy}")
        results[strategy] = run(sc)
        write_outputs(results[strategy], out)
        _report(results[strategy])
    nr, di = results["null_refill"], results["damping_injection"]
    rows = min(len(nr.records), len(di.records))
    axis = base.schedule.axis
    t = nr.records.t[:rows]
    ideal = nr.ideal_x1dot[:rows, axis]
    v_nr = nr.records.x1dot_realized[:rows, axis]
    v_di = di.records.x1dot_realized[:rows, axis]
    table = np.column_stack((t, ideal, v_nr, v_di, np.abs(v_nr - ideal), np.abs(v_di - ideal)))
    header = "t,ideal,null_refill,damping_injection,dev_null_refill,dev_damping_injection"
    text = header + "\n" + "\n".join(",".join(f"{x:.17g}" for x in row) for row in table.tolist()) + "\n"
    atomic_write(out / f"{base.name}__compare.csv", text)
    dev_nr = nr.summary.max_velocity_deviation_all
    dev_di = di.summary.max_velocity_deviation_all
    report = {
        "scenario": base.name,
        "axis": axis,
        "max_deviation": {"null_refill": dev_nr, "damping_injection": dev_di},
        "deviation_ratio": dev_di / dev_nr if dev_nr > 0 else None,
        "summaries": {k: summary_dict(v) for k, v in results.items()},
    }
    atomic_write(out / f"{base.name}__compare.json", json.dumps(report, indent=2) + "\n")
    atomic_write(out / "plot_runs.py", PLOT_SCRIPT)
    print(f"max deviation: null_refill {dev_nr:.3e} m/s, damping_injection {dev_di:.3e} m/s")
    return max(exit_code(r) for r in results.values())


def _batch_one(job):
    path, out = job
    try:
        result = run(load_scenario(path))
    except (ScenarioError, KinematicsError, FileNotFoundError) as exc:
        return str(path), EXIT_CONFIG, str(exc)
    write_outputs(result, Path(out))
    s = result.summary
    return str(path), exit_code(result), f"{s.status}, passivity {'PASS' if s.passivity_pass else 'FAIL'}"


def cmd_batch(args) -> int:
    out = _out_dir(args)
    jobs = [(s, str(out)) for s in args.scenarios]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            done = list(pool.map(_batch_one, jobs))
    else:
        done = [_batch_one(j) for j in jobs]
    for path, code, msg in done:
        print(f"{path}: exit {code}: {msg}")
    return max(code for _, code, _ in done) if done else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nullrefill", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log defaulted fields and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("--dt", type=float, help="override the step length [s]")
        sp.add_argument("--duration", type=float, help="override the run length [s]")
        sp.add_argument("--seed", type=int, help="seed for random force profiles")

    r = sub.add_parser("run", help="run one scenario and write CSV + summary")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./nullrefill_out)")
    overrides(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run null refill and damping injection side by side")
    c.add_argument("--scenario", required=True)
    c.add_argument("--out")
    overrides(c)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="load and validate a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("batch", help="run several scenarios in parallel")
    b.add_argument("scenarios", nargs="+")
    b.add_argument("--out")
    b.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, KinematicsError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
