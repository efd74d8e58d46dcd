"""Experiment driver: solve instances, run coded repairs, soak multi-stage runs.

Three subcommands, strict exit codes so CI can gate on them:

    0   everything asked for succeeded
    1   unusable invocation or unreadable topology
    2   an iterative solve ran out of iterations before the accuracy stop
    3   a verification (spanning property) failed

Every output is a pure function of the flags and the seed; running the same
command twice produces byte-identical files.
"""

import argparse
import dataclasses
import json
import random
import sys
from fractions import Fraction

from .coding import (
    CodingError,
    FieldSpec,
    SystemState,
    compute_n_nc,
    distribute,
    field_size_bound,
    multi_stage_soak,
    repair as coded_repair,
)
from .decomp import StepSchedule, StopRule, run_dual, run_primal
from .model import (
    RepairInstance,
    StructuralError,
    Subgraph,
    builtin_family,
    builtin_instance,
    load_instance,
    total_cost,
)
from .solver import solve_lp

BUILTINS = ("tandem4", "grid2x3")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not exit(2)."""

    def error(self, message):
        raise UsageError(message)


def _add_instance_flags(sub, with_file=True):
    grp = sub.add_mutually_exclusive_group(required=True)
    grp.add_argument("--builtin", choices=BUILTINS,
                     help="one of the bundled example networks")
    if with_file:
        grp.add_argument("--topology", metavar="PATH",
                         help="JSON topology document")


def build_parser() -> _Parser:
    p = _Parser(prog="repairnet",
                description="minimum-cost repair subgraphs and coded repair")
    subs = p.add_subparsers(dest="command", metavar="command")

    solve = subs.add_parser("solve", help="compute a repair subgraph",
                            parents=[], add_help=True)
    _add_instance_flags(solve)
    solve.add_argument("--alg", default="central",
                       choices=("central", "primal", "dual", "all"))
    solve.add_argument("--step", type=float, default=0.5, metavar="C",
                       help="step constant, iteration k uses C/sqrt(k)")
    solve.add_argument("--max-iters", type=int, default=5000, metavar="T")
    solve.add_argument("--epsilon", type=float, default=1e-3,
                       help="stop when consecutive costs differ by less")
    solve.add_argument("--seed", type=int, help="recorded; solves are deterministic")
    solve.add_argument("--trace", metavar="PATH",
                       help="write the iteration trace CSV (single algorithm only)")
    solve.set_defaults(func=cmd_solve)

    rep = subs.add_parser("repair", help="solve, then actually recode the data")
    _add_instance_flags(rep)
    rep.add_argument("--seed", type=int, required=True)
    rep.add_argument("--field", type=int, default=1 << 16,
                     help="field order: a prime or a power of two (default 65536)")
    rep.set_defaults(func=cmd_repair)

    soak = subs.add_parser("soak", help="repeated failure/repair rounds")
    _add_instance_flags(soak, with_file=False)
    soak.add_argument("--stages", type=int, default=20)
    soak.add_argument("--seed", type=int, required=True)
    soak.add_argument("--field", type=int, default=1 << 16)
    soak.add_argument("--out", metavar="PATH", help="stage CSV (default stdout)")
    soak.set_defaults(func=cmd_soak)
    return p


def _load(args) -> RepairInstance:
    if args.builtin:
        return builtin_instance(args.builtin)
    try:
        return load_instance(args.topology)
    except (OSError, json.JSONDecodeError, StructuralError) as err:
        raise UsageError(f"cannot read topology {args.topology}: {err}") from err


def _positive(name, value):
    if value <= 0:
        raise UsageError(f"--{name} must be positive, got {value}")


def cmd_solve(args) -> int:
    inst = _load(args)
    _positive("max-iters", args.max_iters)
    _positive("step", args.step)
    if args.epsilon < 0:
        raise UsageError(f"--epsilon must be nonnegative, got {args.epsilon}")
    algs = ("central", "primal", "dual") if args.alg == "all" else (args.alg,)
    if args.trace and sum(a != "central" for a in algs) != 1:
        raise UsageError("--trace needs exactly one iterative algorithm")

    name = inst.topology.name or "custom"
    print(f"instance {name}: n={inst.n} k={inst.k} "
          f"M={inst.file_size} links={len(inst.links)}")
    central_value = None
    exit_code = 0
    if "central" in algs:
        sol = solve_lp(inst)
        central_value = sol.objective
        zs = " ".join(f"z({u},{v})={val}" for (u, v), val in sorted(sol.z_star.items()))
        print(f"central: minimum repair cost sigma_c = {sol.objective}")
        print(f"central: {zs}")

    schedule = StepSchedule(args.step)
    stop = StopRule(max_iters=args.max_iters, epsilon=args.epsilon)
    for alg in algs:
        if alg == "central":
            continue
        runner = run_primal if alg == "primal" else run_dual
        sub, trace = runner(inst, schedule=schedule, stop=stop)
        sigma = total_cost(inst, sub)
        line = (f"{alg}: sigma_c = {float(sigma):.6f} after {len(trace.rows)}"
                f" iterations ({trace.stop_reason})")
        if central_value is not None:
            gap = float((Fraction(sigma) - central_value) / central_value)
            if abs(gap) < 1e-9:
                gap = 0.0
            line += f", gap vs central = {gap * 100:.3f}%"
        print(line)
        if trace.stop_reason == "max_iters":
            exit_code = 2
        if args.trace:
            with open(args.trace, "w") as fh:
                fh.write(trace.to_csv())
            print(f"{alg}: trace written to {args.trace}")
    return exit_code


def _prefailure_state(inst: RepairInstance, spec: FieldSpec,
                      rng: random.Random) -> SystemState:
    """Storage for the node set as it was before the failure."""
    ids = sorted(set(inst.survivors) | {inst.failed_node})
    raw = distribute(inst.file_size, len(ids), inst.k, spec, rng)
    nodes = {real: dataclasses.replace(raw.nodes[tmp], node=real)
             for tmp, real in zip(sorted(raw.nodes), ids)}
    return SystemState(nodes=nodes, M=raw.M, k=raw.k, field=raw.field,
                       history=list(raw.history))


def cmd_repair(args) -> int:
    inst = _load(args)
    try:
        spec = FieldSpec.of_order(args.field)
    except StructuralError as err:
        raise UsageError(str(err)) from err
    rng = random.Random(args.seed)

    sol = solve_lp(inst)
    n_nc = compute_n_nc(inst, sol.z_star)
    d0 = field_size_bound(inst.n, inst.k, inst.file_size, n_nc)
    name = inst.topology.name or "custom"
    print(f"instance {name}: minimum repair cost sigma_c = {sol.objective}")
    print(f"coding chain length n_nc = {n_nc}; field-size bound d0 = {d0}")
    print(f"field in use: {spec} (order {spec.q})")
    if spec.q <= d0:
        print(f"warning: field order {spec.q} is at or below the bound {d0};"
              f" the spanning property may fail for some seeds", file=sys.stderr)

    state = _prefailure_state(inst, spec, rng)
    try:
        after = coded_repair(state, inst.failed_node,
                             Subgraph.from_mapping(inst, sol.z_star), inst, spec, rng)
    except CodingError as err:
        print(f"verification FAILED (seed {args.seed}): {err}", file=sys.stderr)
        return 3
    print(f"repair of node {inst.failed_node} -> {inst.new_node} verified:"
          f" any {after.k} of {len(after.nodes)} nodes rebuild the file"
          f" (seed {args.seed})")
    return 0


def cmd_soak(args) -> int:
    _positive("stages", args.stages)
    family = builtin_family(args.builtin)
    try:
        spec = FieldSpec.of_order(args.field)
    except StructuralError as err:
        raise UsageError(str(err)) from err
    rng = random.Random(args.seed)
    report = multi_stage_soak(family, args.stages, spec, rng)

    lines = ["stage,failed_node,cost,rcp_pass,seed"]
    for row in report:
        lines.append(f"{row['stage']},{row['failed_node']},"
                     f"{repr(float(row['cost']))},"
                     f"{'true' if row['rcp_pass'] else 'false'},{row['seed']}")
    csv = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    else:
        sys.stdout.write(csv)

    failures = [r for r in report if not r["rcp_pass"]]
    total = sum(Fraction(r["cost"]) for r in report)
    print(f"{args.stages} stages, {len(failures)} spanning failures,"
          f" total cost {float(total):.6f}", file=sys.stderr)
    return 3 if failures else 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required (solve, repair, soak)")
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except StructuralError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except CodingError as err:
        print(f"verification FAILED: {err}", file=sys.stderr)
        return 3


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
