"""Command-line entry point ``ctxbai``.

Exit codes: 0 success, 2 invalid input, 1 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from . import harness
from .allocator import characteristic_time
from .cts import CtsConfig, run_cts
from .gaussian import gain_grid, gaussian_characteristic_time, run_alpha_elimination
from .harness import TRIAL_FIELDS, _fmt
from .kl import binary_relative_entropy
from .model import BernoulliInstance, GaussianTwoArmInstance, SeededStream, load_instance


@contextmanager
def _csv_sink(path):
    """CSV writer on stdout, or appending to ``path`` (header only for new files)."""
    if path is None:
        yield csv.writer(sys.stdout, lineterminator="\n"), True
        return
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        yield csv.writer(fh, lineterminator="\n"), fresh


def cmd_lower_bound(args):
    inst = load_instance(args.instance)
    deltas = args.delta or [0.05, 0.01, 0.001]
    if isinstance(inst, GaussianTwoArmInstance):
        t_star = gaussian_characteristic_time(inst)
        doc = {"kind": "gaussian2", "best_arm": inst.best_arm, "characteristic_time": t_star}
    else:
        res = characteristic_time(inst, tolerance=args.tolerance)
        doc = {
            "kind": "bernoulli",
            "best_arm": res.best_arm,
            "characteristic_time": res.characteristic_time,
            "iterations": res.iterations,
            "duality_gap": res.duality_gap,
        }
        if args.report_allocation:
            doc["allocation"] = res.allocation.tolist()
        t_star = res.characteristic_time
    doc["lower_bound"] = {
        format(d, "g"): t_star * binary_relative_entropy(d, 1.0 - d) for d in deltas
    }
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _write_trace(out_dir: Path, k: int, tr):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"trial_{k}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "context", "arm", "reward", "Z"])
        for i in range(tr.z.size):
            w.writerow([i + 1, int(tr.contexts[i]), int(tr.arms[i]), int(tr.rewards[i]), _fmt(tr.z[i])])


def cmd_run_cts(args):
    inst = load_instance(args.instance)
    if not isinstance(inst, BernoulliInstance):
        raise ValueError("run-cts needs a bernoulli instance")
    config = CtsConfig(
        delta=args.delta,
        update_period=args.update_period,
        max_rounds=args.max_rounds,
        seed=args.seed,
        record_trace=args.trace_out is not None,
    )
    trace_dir = Path(args.trace_out) if args.trace_out else None
    wrong = 0
    with _csv_sink(args.out) as (writer, fresh):
        if fresh:
            writer.writerow(TRIAL_FIELDS)
        for k in range(args.trials):
            tr = run_cts(inst, config, SeededStream(args.seed, k))
            correct = tr.recommended == inst.best_arm
            wrong += not correct
            writer.writerow([k, args.seed, tr.tau, tr.recommended, int(correct), int(tr.truncated)])
            if trace_dir is not None:
                _write_trace(trace_dir, k, tr)
    print(f"trials={args.trials} errors={wrong}", file=sys.stderr)


def cmd_run_alpha_elim(args):
    inst = load_instance(args.instance)
    if not isinstance(inst, GaussianTwoArmInstance):
        raise ValueError("run-alpha-elim needs a gaussian2 instance")
    wrong = 0
    with _csv_sink(args.out) as (writer, fresh):
        if fresh:
            writer.writerow(TRIAL_FIELDS)
        for k in range(args.trials):
            res = run_alpha_elimination(
                inst, args.delta, max_rounds=args.max_rounds,
                use_context=not args.no_context, stream=SeededStream(args.seed, k),
            )
            correct = res.recommended == inst.best_arm
            wrong += not correct
            writer.writerow([k, args.seed, res.tau, res.recommended, int(correct), int(res.truncated)])
    print(f"trials={args.trials} errors={wrong}", file=sys.stderr)


def cmd_gain_heatmap(args):
    rhos, gains = gain_grid(args.rho_steps, args.sigma1, args.sigma2)
    with _csv_sink(args.out) as (writer, _):
        writer.writerow(["rho1", "rho2", "gain"])
        for i, r1 in enumerate(rhos):
            for j, r2 in enumerate(rhos):
                writer.writerow([_fmt(r1), _fmt(r2), _fmt(gains[i, j])])


def cmd_run_scenario(args):
    if args.file:
        scenarios = [harness.load_scenario(args.file)]
    else:
        try:
            scenarios = harness.resolve(args.name)
        except KeyError as exc:
            raise ValueError(exc.args[0]) from None
    scenarios = harness.with_trials(scenarios, args.trials)
    jobs = args.jobs if args.jobs is not None else harness.default_jobs()
    report = harness.run_scenarios(scenarios, jobs)
    for path in harness.emit_report(report, args.out):
        print(path)


def cmd_list_scenarios(args):
    for name, sc in harness.SCENARIOS.items():
        extra = f" ztrace_horizon={sc.ztrace_horizon}" if sc.ztrace_horizon else ""
        print(f"{name}\t{sc.algorithm}\ttrials={sc.trials}\tdelta={sc.delta:g}{extra}")
    for group, members in harness.GROUPS.items():
        print(f"[group] {group}: {' '.join(members)}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxbai", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    lb = sub.add_parser("lower-bound", help="characteristic time and lower bounds")
    lb.add_argument("--instance", required=True)
    lb.add_argument("--tolerance", type=float, default=1e-6)
    lb.add_argument("--report-allocation", action="store_true")
    lb.add_argument("--delta", type=float, action="append", help="repeatable")
    lb.set_defaults(func=cmd_lower_bound)

    rc = sub.add_parser("run-cts", help="Contextual Track-and-Stop trials")
    rc.add_argument("--instance", required=True)
    rc.add_argument("--delta", type=float, default=0.05)
    rc.add_argument("--trials", type=int, default=1000)
    rc.add_argument("--seed", type=int, default=42)
    rc.add_argument("--update-period", type=int, default=10)
    rc.add_argument("--trace-out")
    rc.add_argument("--max-rounds", type=int, default=10_000_000)
    rc.add_argument("--out", help="CSV file to append to (default: stdout)")
    rc.set_defaults(func=cmd_run_cts)

    ra = sub.add_parser("run-alpha-elim", help="alpha-elimination trials")
    ra.add_argument("--instance", required=True)
    ra.add_argument("--delta", type=float, default=0.05)
    ra.add_argument("--trials", type=int, default=1000)
    ra.add_argument("--seed", type=int, default=7)
    ra.add_argument("--no-context", action="store_true")
    ra.add_argument("--max-rounds", type=int, default=10_000_000)
    ra.add_argument("--out", help="CSV file to append to (default: stdout)")
    ra.set_defaults(func=cmd_run_alpha_elim)

    gh = sub.add_parser("gain-heatmap", help="efficiency gain over (rho1, rho2)")
    gh.add_argument("--rho-steps", type=int, default=101)
    gh.add_argument("--sigma1", type=float, default=1.0)
    gh.add_argument("--sigma2", type=float, default=1.0)
    gh.add_argument("--out")
    gh.set_defaults(func=cmd_gain_heatmap)

    rs = sub.add_parser("run-scenario", help="run a registered or file-defined scenario")
    src = rs.add_mutually_exclusive_group(required=True)
    src.add_argument("--name")
    src.add_argument("--file")
    rs.add_argument("--out", required=True)
    rs.add_argument("--jobs", type=int)
    rs.add_argument("--trials", type=int, help="override the scenario's trial count")
    rs.set_defaults(func=cmd_run_scenario)

    ls = sub.add_parser("list-scenarios", help="show registered scenarios")
    ls.set_defaults(func=cmd_list_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
