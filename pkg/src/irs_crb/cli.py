"""Command-line harness: parameter sweeps and the oracle battery.

    python -m irs_crb sweep --sweep P_t --values 1,10,100 --trials 20 \\
        --modes Joint,TxOnly --out results.csv
    python -m irs_crb verify --seed 3
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ao import AoOptions, Mode, run_ao
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

SWEEPABLE = ("P_t", "P_s", "M", "a_max")
JOBS_ENV = "IRS_CRB_JOBS"


@dataclass
class SweepSpec:
    param: str
    values: list
    trials: int = 1
    modes: list = field(default_factory=lambda: [Mode.JOINT])
    out: str = "sweep.csv"
    seed: int = 0

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.param!r}; choose from {SWEEPABLE}")
        if not self.values or any(not v > 0 for v in self.values):
            raise ValueError("sweep values must be a non-empty list of positive numbers")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        self.modes = [Mode(m) for m in self.modes]
        if self.param == "M":
            self.values = [int(v) for v in self.values]


@dataclass
class ResultRow:
    sweep_param: str
    sweep_value: float
    mode: str
    seed: int
    max_crb: float
    crbs: list
    ao_iters: int
    status: str
    wall_ms: float
    trace: dict | None = None


def fmt(x) -> str:
    """Fixed 17-significant-digit float text (round-trips exactly)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def _run_task(task):
    base, param, value, mode, seed, ao_kw, want_trace = task
    t0 = time.perf_counter()
    L = base.L
    try:
        cfg = base.replace(**{param: value, "seed": seed})
        res = run_ao(cfg, AoOptions(mode=mode, **ao_kw))
        row = ResultRow(param, value, mode.value, seed, res.max_crb, list(res.crbs),
                        res.iterations, res.status, 0.0,
                        res.trace.to_dict() if want_trace else None)
    except Exception as exc:  # a failed point never aborts the sweep
        log.warning("%s=%s mode=%s seed=%d failed: %s", param, value, mode.value, seed, exc)
        row = ResultRow(param, value, mode.value, seed, math.nan, [math.nan] * L, 0,
                        f"error:{type(exc).__name__}", 0.0)
    row.wall_ms = 1e3 * (time.perf_counter() - t0)
    return row


def resolve_jobs(cli_jobs: int | None) -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        return max(1, int(env))
    return max(1, cli_jobs or 1)


def run_sweep(base: ScenarioConfig, spec: SweepSpec, jobs: int = 1, ao_kw=None,
              traces: bool = False) -> list:
    """Run every (value, mode, trial) task; rows come back in task order.

    Trial ``t`` uses scenario seed ``spec.seed + t`` for every value and mode,
    so all modes see the same channels.
    """
    ao_kw = ao_kw or {}
    tasks = [(base, spec.param, v, m, spec.seed + t, ao_kw, traces)
             for v in spec.values for m in spec.modes for t in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_task, tasks, chunksize=1))
    return [_run_task(t) for t in tasks]


def header(L: int) -> list:
    return (["sweep_param", "sweep_value", "mode", "seed", "max_crb"]
            + [f"crb_irs_{l + 1}" for l in range(L)] + ["ao_iters", "status", "wall_ms"])


def rows_to_csv(rows, L: int, timing: bool = False) -> str:
    """CSV text. ``wall_ms`` is left blank unless ``timing`` so that repeated
    runs are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header(L))
    for r in rows:
        w.writerow([r.sweep_param, fmt(r.sweep_value), r.mode, r.seed, fmt(r.max_crb)]
                   + [fmt(c) for c in r.crbs] + [r.ao_iters, r.status,
                                                  fmt(r.wall_ms) if timing else ""])
    return buf.getvalue()


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate(records) -> list:
    """Per (value, mode) statistics of ``max_crb`` from CSV records (dicts of
    strings) or :class:`ResultRow` objects. Failed rows are counted, not averaged."""
    groups = {}
    for r in records:
        if isinstance(r, ResultRow):
            key = (r.sweep_param, float(r.sweep_value), r.mode)
            val, ok = r.max_crb, not r.status.startswith("error")
        else:
            key = (r["sweep_param"], float(r["sweep_value"]), r["mode"])
            val, ok = float(r["max_crb"]), not r["status"].startswith("error")
        g = groups.setdefault(key, {"vals": [], "failed": 0})
        if ok and math.isfinite(val):
            g["vals"].append(val)
        else:
            g["failed"] += 1
    out = []
    for (param, value, mode), g in groups.items():
        v = np.array(g["vals"])
        n = len(v)
        out.append({
            "sweep_param": param, "sweep_value": value, "mode": mode, "n": n,
            "failed": g["failed"],
            "mean": float(v.mean()) if n else math.nan,
            "median": float(np.median(v)) if n else math.nan,
            "std": float(v.std(ddof=1)) if n > 1 else math.nan,
            "sem": float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        })
    return out


def write_outputs(rows, spec: SweepSpec, base: ScenarioConfig, timing=False, traces=False):
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(rows, base.L, timing))
    summary = {
        "config": {k: v for k, v in base.to_dict().items()},
        "sweep": {"param": spec.param, "values": spec.values, "trials": spec.trials,
                  "modes": [m.value for m in spec.modes], "seed": spec.seed},
        "points": aggregate(rows),
        "wall_ms": [r.wall_ms for r in rows],
    }
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    if traces:
        with open(out.with_suffix(".traces.jsonl"), "w") as fh:
            for r in rows:
                fh.write(json.dumps({"sweep_value": r.sweep_value, "mode": r.mode,
                                     "seed": r.seed, "trace": r.trace}) + "\n")


def _parse_list(text, conv=float):
    return [conv(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irs_crb",
                                description="Max-CRB design for multi-active-IRS sensing.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="parameter sweep with Monte-Carlo trials")
    s.add_argument("--config", help="scenario JSON (defaults to the built-in scenario)")
    s.add_argument("--sweep", required=True, choices=SWEEPABLE)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--modes", default="Joint",
                   help="comma-separated subset of " + ",".join(m.value for m in Mode))
    s.add_argument("--out", default="sweep.csv")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1, help=f"worker processes (env {JOBS_ENV} wins)")
    s.add_argument("--max-outer", type=int, default=30)
    s.add_argument("--rel-tol", type=float, default=1e-3)
    s.add_argument("--timing", action="store_true", help="fill wall_ms in the CSV")
    s.add_argument("--traces", action="store_true", help="also write AO traces as JSON lines")

    v = sub.add_parser("verify", help="run the oracle battery")
    v.add_argument("--config")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=10)
    return p


def _load_config(path):
    return ScenarioConfig.from_json(path) if path else ScenarioConfig()


def cmd_sweep(args) -> int:
    base = _load_config(args.config)
    spec = SweepSpec(param=args.sweep, values=_parse_list(args.values), trials=args.trials,
                     modes=_parse_list(args.modes, str), out=args.out, seed=args.seed)
    jobs = resolve_jobs(args.jobs)
    ao_kw = {"max_outer": args.max_outer, "rel_tol": args.rel_tol}
    rows = run_sweep(base, spec, jobs=jobs, ao_kw=ao_kw, traces=args.traces)
    write_outputs(rows, spec, base, timing=args.timing, traces=args.traces)
    failed = sum(r.status.startswith("error") for r in rows)
    print(f"{len(rows)} rows written to {spec.out} ({failed} failed)")
    for a in aggregate(rows):
        print(f"  {a['sweep_param']}={fmt(a['sweep_value'])} {a['mode']:<16} "
              f"mean={a['mean']:.6g} sem={a['sem']:.3g} n={a['n']}")
    return 0


def cmd_verify(args) -> int:
    from .checks import format_table, run_battery
    base = _load_config(args.config)
    results = run_battery(seed=args.seed, n=args.instances, base=base)
    print(format_table(results))
    bad = [r for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return 1 if bad else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_verify(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
