"""Command-line entry point: ``lqkd <command> [options]``.

Exit status 0 on success, 1 on invalid input (one-line diagnostic on
stderr), 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .keystructure import (
    StructureError,
    connected_components,
    epr_rate1_feasible,
    ghz_rate1_feasible,
    layer_label,
    load_structure,
)
from .plan import PlanError, flat_plan, load_plan
from .planner import enumerate_plans, format_metrics_table, pareto_front, plan_metrics
from .protocol import ProtocolConfig, run_protocol
from .quantum import build_from_plan
from .rates import (
    RateReport,
    Schedule,
    ScheduleError,
    comparison_reference_rates,
    epr_schedule_rates,
    ghz_schedule_rates,
    layered_rates,
    partition_schedule,
)


class UsageError(ValueError):
    pass


def _flag(value: bool) -> str:
    return "true" if value else "false"


def _structure(args):
    if not args.structure:
        raise UsageError("--structure/-f is required")
    return load_structure(args.structure)


def _plan(args, structure):
    if getattr(args, "plan", None):
        plan = load_plan(args.plan)
        plan.validate(structure)
        return plan
    return flat_plan(structure)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def summary_line(structure) -> str:
    ell = ",".join(str(c) for c in structure.layer_counts())
    comps = connected_components(structure)
    if len(comps) == 1:
        return f"K={structure.K}, ℓ=({ell}), connected, ghz_rate1={_flag(ghz_rate1_feasible(structure))}"
    flags = ",".join(_flag(ghz_rate1_feasible(c)) for c in comps)
    return f"K={structure.K}, ℓ=({ell}), {len(comps)} components, ghz_rate1=[{flags}]"


def cmd_validate(args) -> int:
    structure = _structure(args)
    print(summary_line(structure))
    comps = connected_components(structure)
    print("layers: " + " ".join(layer_label(layer) for layer in structure.layers))
    print("epr_rate1=" + ",".join(_flag(epr_rate1_feasible(c)) for c in comps))
    return 0


def cmd_build(args) -> int:
    structure = _structure(args)
    c = build_from_plan(_plan(args, structure))
    _emit(json.dumps(c.state.to_json(), indent=2, ensure_ascii=False) + "\n", args.out)
    return 0


def cmd_plan(args) -> int:
    structure = _structure(args)
    plans = enumerate_plans(structure, args.max_arity, override=args.override)
    front = pareto_front(plans)
    print(format_metrics_table(plans, front))
    print(f"{len(plans)} plans, {len(front)} on the Pareto front")
    if args.out:
        keys = {p.key() for p in front}
        doc = []
        for p in plans:
            m = plan_metrics(p)
            doc.append({"plan": p.to_json(), "pareto": p.key() in keys,
                        "dims": m.dims, "support": m.support,
                        "rates": [{"layer": sorted(k), "rate": r} for k, r in
                                  RateReport("layered", m.rates).ordered()]})
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_simulate(args) -> int:
    structure = _structure(args)
    plan = _plan(args, structure)
    config = ProtocolConfig(rounds=args.rounds, test_bias=args.test_bias, noise_v=args.noise,
                            seed=args.seed, sacrifice_fraction=args.sacrifice)
    transcript, ring = run_protocol(plan, config)
    lines = ["layer      raw_len  QZ        QX        fraction  agree"]
    for layer, lk in sorted(ring.layers.items(), key=lambda kv: (-len(kv[0]), sorted(kv[0]))):
        qz = "-" if lk.qz is None else f"{lk.qz:.5f}"
        qx = "-" if lk.qx is None else f"{lk.qx:.5f}"
        lines.append(f"{layer_label(layer):<10} {lk.raw_length:<8} {qz:<9} {qx:<9} "
                     f"{lk.fraction:<9.5f} {_flag(lk.agree)}")
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        transcript.write_csv(out / "transcript.csv")
        (out / "keyring.json").write_text(ring.dumps() + "\n", encoding="utf-8")
    return 0


def cmd_rates(args) -> int:
    structure = _structure(args)
    if args.impl == "layered":
        report = layered_rates(_plan(args, structure))
    else:
        if args.schedule:
            sched = Schedule.from_json(json.loads(Path(args.schedule).read_text(encoding="utf-8")))
        else:
            sched = partition_schedule(structure, pairs_only=args.impl == "epr")
            print("# no --schedule given: using the uniform partition schedule", file=sys.stderr)
        report = (ghz_schedule_rates if args.impl == "ghz" else epr_schedule_rates)(structure, sched)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "rate"])
        for layer, r in report.ordered():
            w.writerow([" ".join(sorted(layer)), repr(float(r))])
        print(buf.getvalue(), end="")
    else:
        print(report.table())
    if args.out:
        Path(args.out).write_text(report.dumps() + "\n", encoding="utf-8")
    return 0


def parse_grid(text: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"grid must look like start:stop:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise UsageError("grid needs step > 0 and stop >= start")
    count = int(round((hi - lo) / step)) + 1
    return [round(x, 12) for x in np.linspace(lo, lo + step * (count - 1), count) if x <= hi + 1e-12]


COMPARE_COLUMNS = ["p", "epr_r123", "epr_r12", "ghz_r123", "ghz_r12", "layered_r123", "layered_r12"]


def compare_csv(grid: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for p in grid:
        ref = comparison_reference_rates(p)
        row = [p]
        for impl in ("epr", "ghz", "layered"):
            row += [ref[impl][("1", "2", "3")], ref[impl][("1", "2")]]
        w.writerow([format(float(x), ".12g") for x in row])
    return buf.getvalue()


def cmd_compare(args) -> int:
    text = compare_csv(parse_grid(args.grid))
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    docs = []
    for name in args.inputs:
        path = Path(name)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".csv":
            docs.append({"path": name, "kind": "csv", "rows": list(csv.DictReader(io.StringIO(text)))})
        else:
            docs.append({"path": name, "kind": "json", "content": json.loads(text)})
    _emit(json.dumps({"inputs": docs}, indent=2, ensure_ascii=False) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqkd", description="Layered QKD simulator and planner.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, plan=False):
        p.add_argument("--structure", "-f", help="structure JSON file")
        if plan:
            p.add_argument("--plan", help="plan JSON file (default: the flat plan)")
        p.add_argument("--out", help="output file (directory for simulate)")

    p = sub.add_parser("validate", help="check a structure and print its summary")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("build", help="emit the state dump for a plan")
    common(p, plan=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("plan", help="enumerate plans, print metrics and the Pareto front")
    common(p)
    p.add_argument("--max-arity", type=int, default=2, help="largest superposition arity (default 2)")
    p.add_argument("--override", action="store_true", help="allow more than 12 layers")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run a protocol session")
    common(p, plan=True)
    p.add_argument("--rounds", type=int, default=10_000, help="rounds (default 10000)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--noise", type=float, default=1.0, help="visibility v in [0,1] (default 1)")
    p.add_argument("--test-bias", type=float, default=1 / 3,
                   help="probability of a test setting per slot (default 1/3)")
    p.add_argument("--sacrifice", type=float, default=0.1,
                   help="fraction of key rounds disclosed (default 0.1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rates", help="idealized rates for one implementation")
    common(p, plan=True)
    p.add_argument("--impl", choices=["layered", "ghz", "epr"], default="layered")
    p.add_argument("--schedule", help="schedule JSON (ghz/epr; default: partition schedule)")
    p.add_argument("--csv", action="store_true", help="print CSV instead of a table")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("compare", help="three-user comparison sweep as CSV")
    p.add_argument("--grid", default="0:1:0.05", help="start:stop:step (default 0:1:0.05)")
    p.add_argument("--out", help="CSV output file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="aggregate earlier outputs into one JSON document")
    p.add_argument("inputs", nargs="+", help="JSON or CSV files")
    p.add_argument("--out", help="output file")
    p.set_defaults(func=cmd_report)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StructureError, PlanError, ScheduleError, UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}".splitlines()[0], file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
