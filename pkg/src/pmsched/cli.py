"""Command-line entry point: gen, solve, validate and bench.

Exit codes: 0 optimal (or clean), 1 validation found violations, 2 usage or input error,
3 infeasible, 4 limit reached.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .branch_price import TIME_KEYS, BpConfig, solve_bp
from .compact_solver import solve_compact
from .instgen import COMPLEXITY, LAYOUTS, GenConfig, generate
from .master import SolveReport, rmp_gap
from .minlp_kernel import MinlpLimits
from .model import (ModelError, ScheduleDimensionError, dump_json, instance_from_dict, instance_to_dict,
                    schedule_from_dict, schedule_to_dict, validate_schedule)

EXIT_OK, EXIT_VIOLATIONS, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3, 4
STATUS_EXIT = {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "limit": EXIT_LIMIT}
CSV_VERSION = "bench-v1"
CSV_COLUMNS = ["version", "instance", "method", "status", "time_s", "gap_pct", "nodes", "pricing_rounds",
               "primal", "dual"] + [f"frac_{k}" for k in TIME_KEYS]
EASY_SECONDS = 10.0
EXCLUDE_SECONDS = 5.0


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from exc


def load_instance(path: str):
    try:
        return instance_from_dict(_load_json(path))
    except (ModelError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed instance {path}: {exc}") from exc


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _parse_layout(text: str):
    if text in LAYOUTS:
        return text
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"layout must be one of {sorted(LAYOUTS)} or a comma list of multiplicities")


def bp_config(args) -> BpConfig:
    return BpConfig(time_limit=args.time_limit, node_limit=args.node_limit, gap_tol=args.gap_tol,
                    early_branching=not args.no_early_branching, rmp_heuristic=not args.no_rmp_heuristic,
                    farley=not args.no_farley)


def run_method(instance, method: str, args) -> SolveReport:
    if method == "compact":
        return solve_compact(instance, MinlpLimits(gap=args.gap_tol, nodes=args.node_limit, time=args.time_limit))
    return solve_bp(instance, config=bp_config(args))


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    out = Path(args.out)
    layout = _parse_layout(args.layout)
    combos = []
    if args.grid:
        for periods in (10, 20):
            for lay in LAYOUTS:
                for cx in COMPLEXITY:
                    combos.append((periods, lay, cx))
    else:
        combos.append((args.periods, layout, args.complexity))
    manifest = []
    for periods, lay, cx in combos:
        for i in range(args.count):
            seed = args.seed + i
            cfg = GenConfig(seed, periods, lay, cx, args.rho)
            try:
                inst = generate(cfg)
            except ValueError as exc:
                raise CliError(str(exc)) from exc
            tag = lay if isinstance(lay, str) else "x".join(map(str, lay))
            name = f"inst_T{periods}_{tag}_{cx}_s{seed}.json"
            _write(out / name, dump_json(instance_to_dict(inst)))
            manifest.append({"file": name, "seed": seed, "periods": periods, "layout": tag, "complexity": cx,
                             "rho": args.rho})
    _write(out / "manifest.json", json.dumps(manifest, indent=2))
    print(f"wrote {len(manifest)} instances to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    method = "dw" if args.method == "bp" else args.method
    rep = run_method(inst, method, args)
    out = Path(args.out)
    stem = Path(args.instance).stem
    _write(out / f"{stem}.{method}.report.json", json.dumps(rep.to_dict(), indent=2))
    if rep.schedule is not None:
        _write(out / f"{stem}.{method}.schedule.json", dump_json(schedule_to_dict(rep.schedule)))
    if method == "dw":
        _write(out / f"{stem}.{method}.nodes.tsv",
               "id\tdepth\tbound\trounds\tcolumns\n" + "".join(l + "\n" for l in rep.stats.get("node_log", [])))
    print(f"{method}: status={rep.status} primal={rep.primal_bound:g} dual={rep.dual_bound:g} "
          f"gap={rep.gap:g} nodes={rep.nodes} time={rep.wall_time:.2f}s")
    return STATUS_EXIT[rep.status]


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    try:
        sched = schedule_from_dict(_load_json(args.schedule))
        violations = validate_schedule(inst, sched)
    except ScheduleDimensionError as exc:
        raise CliError(f"dimension error: {exc}") from exc
    except (ModelError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"schema mismatch: {exc}") from exc
    if not violations:
        print(f"clean: cost {sched.cost(inst):g}")
        return EXIT_OK
    for v in violations:
        print(v)
    return EXIT_VIOLATIONS


# ---------------------------------------------------------------- bench

@dataclass
class BenchRecord:
    instance: str
    method: str
    status: str
    time: float
    gap: float  # percent; inf when no primal solution
    nodes: int
    pricing_rounds: int = 0
    primal: float = math.inf
    dual: float = -math.inf
    breakdown: Dict[str, float] = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status in ("optimal", "infeasible")

    @property
    def has_primal(self) -> bool:
        return math.isfinite(self.primal)

    @classmethod
    def from_report(cls, name: str, rep: SolveReport) -> "BenchRecord":
        gap = rmp_gap(rep.primal_bound, rep.dual_bound) if rep.status != "infeasible" else math.inf
        return cls(name, rep.method, rep.status, rep.wall_time, 100.0 * gap, rep.nodes, rep.pricing_rounds,
                   rep.primal_bound, rep.dual_bound, dict(rep.time_breakdown))

    def csv_row(self) -> List[str]:
        fr = [f"{self.breakdown.get(k, 0.0):.6f}" for k in TIME_KEYS]
        return [CSV_VERSION, self.instance, self.method, self.status, f"{self.time:.3f}", _fmt(self.gap),
                str(self.nodes), str(self.pricing_rounds), _fmt(self.primal), _fmt(self.dual)] + fr


def _fmt(v: float) -> str:
    return f"{v:.6g}" if math.isfinite(v) else ""


def classify(records: Sequence[BenchRecord], time_limit: float) -> Optional[str]:
    """easy | medium | hard for one instance's records (one per method), None if filtered out.

    Instances both methods solve under 5 s are dropped. easy: some method solves it under
    10 s; medium: some method solves it within the limit; hard: nobody solves it but some
    method has a primal solution. Anything else is left unclassified.
    """
    if records and all(r.solved and r.time < EXCLUDE_SECONDS for r in records):
        return None
    if any(r.solved and r.time < EASY_SECONDS for r in records):
        return "easy"
    if any(r.solved and r.time <= time_limit for r in records):
        return "medium"
    if any(r.has_primal for r in records):
        return "hard"
    return "unclassified"


def _bench_one(job):
    path, args_dict = job
    args = argparse.Namespace(**args_dict)
    inst = load_instance(path)
    name = Path(path).stem
    return [BenchRecord.from_report(name, run_method(inst, m, args)) for m in ("compact", "dw")]


def summarize(records: Sequence[BenchRecord], time_limit: float) -> Dict[str, object]:
    by_inst: Dict[str, List[BenchRecord]] = {}
    for r in records:
        by_inst.setdefault(r.instance, []).append(r)
    classes = {name: classify(rs, time_limit) for name, rs in by_inst.items()}
    excluded = sum(1 for c in classes.values() if c is None)
    rows = []
    for cls in ("easy", "medium", "hard", "unclassified"):
        names = [n for n, c in classes.items() if c == cls]
        if not names:
            continue
        for method in ("compact", "dw"):
            rs = [r for n in names for r in by_inst[n] if r.method == method]
            feas = [r.gap for r in rs if math.isfinite(r.gap) and r.status != "infeasible"]
            rows.append({
                "class": cls, "method": method, "instances": len(rs),
                "solved": sum(r.solved for r in rs),
                "unresolved": sum(not r.solved for r in rs),
                "time": sum(r.time for r in rs) / len(rs) if rs else math.nan,
                "gap": sum(feas) / len(feas) if feas else None,
                "nodes": sum(r.nodes for r in rs) / len(rs) if rs else math.nan,
            })
    dw = [r for r in records if r.method == "dw" and r.breakdown]
    breakdown = {k: (sum(r.breakdown.get(k, 0.0) for r in dw) / len(dw) if dw else 0.0) for k in TIME_KEYS}
    return {"rows": rows, "excluded": excluded, "breakdown": breakdown, "classes": classes}


def format_table(summary: Dict[str, object]) -> str:
    lines = [f"{'class':<13}{'method':<9}{'inst':>5}{'solved':>8}{'unres':>7}{'time(s)':>10}{'gap(%)':>9}"
             f"{'nodes':>10}"]
    for r in summary["rows"]:
        gap = "" if r["gap"] is None else f"{r['gap']:.2f}"
        lines.append(f"{r['class']:<13}{r['method']:<9}{r['instances']:>5}{r['solved']:>8}{r['unresolved']:>7}"
                     f"{r['time']:>10.2f}{gap:>9}{r['nodes']:>10.1f}")
    lines.append(f"excluded (both methods under {EXCLUDE_SECONDS:g}s): {summary['excluded']}")
    lines.append("dw time breakdown: " + ", ".join(f"{k} {v:.1%}" for k, v in summary["breakdown"].items()))
    return "\n".join(lines)


def cmd_bench(args) -> int:
    d = Path(args.instances)
    files = sorted(p for p in d.glob("*.json") if p.name != "manifest.json") if d.is_dir() else []
    if not files:
        raise CliError(f"no instance files in {d}")
    ad = dict(vars(args))
    ad.pop("func", None)
    jobs = [(str(p), ad) for p in files]
    records: List[BenchRecord] = []
    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as ex:
            for rs in ex.map(_bench_one, jobs):
                records.extend(rs)
    else:
        for job in jobs:
            records.extend(_bench_one(job))
    summary = summarize(records, args.time_limit)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())
    out = Path(args.out)
    _write(out / "bench.csv", buf.getvalue())
    table = format_table(summary)
    _write(out / "bench.txt", table + "\n")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--time-limit", type=float, default=300.0)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--gap-tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; the solvers are deterministic")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", default=".")
    p.add_argument("--no-early-branching", action="store_true")
    p.add_argument("--no-rmp-heuristic", action="store_true")
    p.add_argument("--no-farley", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmsched", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate random instances")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--periods", type=int, default=10)
    g.add_argument("--layout", default="one-group-20")
    g.add_argument("--complexity", choices=sorted(COMPLEXITY), default="low")
    g.add_argument("--rho", type=float, default=0.8)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--grid", action="store_true", help="every periods/layout/complexity combination")
    g.add_argument("--out", default="instances")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("instance")
    s.add_argument("--method", choices=("compact", "dw", "bp"), default="dw")
    _solver_flags(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check a schedule against an instance")
    v.add_argument("instance")
    v.add_argument("schedule")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="run both methods over a directory of instances")
    b.add_argument("instances")
    _solver_flags(b)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
