"""End-to-end acceptance battery.

Each test here checks one promise the package makes as a whole and records a
single PASS/FAIL line with its measured numbers; conftest echoes all recorded
lines in an "acceptance verdicts" section after the run, outside pytest's
output capture.  Run ``python3 -m pytest tests/test_acceptance.py -v`` and
read that section.
"""

import itertools
import random
import time
from fractions import Fraction

from conftest import random_instance
from repairnet.coding import (
    FieldSpec,
    check_rcp,
    compute_n_nc,
    distribute,
    field_size_bound,
    multi_stage_soak,
    project_file,
    reconstruct_file,
    repair,
)
from repairnet.decomp import StopRule, run_dual, run_primal
from repairnet.flowgraph import is_feasible_by_flow
from repairnet.model import CostFunction, Subgraph, builtin_family, builtin_instance
from repairnet.netsim import simulate
from repairnet.polytope import enumerate_constraints
from repairnet.solver import solve_convex, solve_lp

GF65536 = FieldSpec.of_order(65536)


VERDICTS: list[str] = []


def _verdict(ok: bool, name: str, detail: str) -> None:
    """Record one PASS/FAIL line; conftest echoes them after the run."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    VERDICTS.append(line)
    print(line, flush=True)


def _first_within(rows, optimum: float, rel: float):
    """Iteration index of the first row whose sigma_c is within rel of optimum."""
    for r in rows:
        if abs(r.sigma_c - optimum) / optimum <= rel:
            return r.iteration
    return None


def test_tandem_unit_cost_optimum_is_exactly_four():
    t0 = time.perf_counter()
    sol = solve_lp(builtin_instance("tandem4"))
    dt = time.perf_counter() - t0
    ok = sol.objective == Fraction(4) and dt < 1.0
    _verdict(ok, "tandem exact optimum",
             f"sigma_c = {sol.objective} (want 4, zero tolerance), {dt:.3f}s")
    assert sol.objective == Fraction(4)
    assert dt < 1.0


def test_cut_membership_agrees_with_max_flow_everywhere():
    rng = random.Random(656)
    instances = [builtin_instance("tandem4"), builtin_instance("grid2x3")]
    instances += [random_instance(rng) for _ in range(20)]
    t0 = time.perf_counter()
    agree = total = 0
    for inst in instances:
        P = enumerate_constraints(inst)
        M = inst.file_size
        for _ in range(100):
            z = {l: Fraction(rng.randrange(0, 2 * M + 1), 2) for l in inst.links}
            total += 1
            agree += (P.violation(z)[1] <= 0) == is_feasible_by_flow(inst, z)
    dt = time.perf_counter() - t0
    ok = agree == total and dt < 30.0
    _verdict(ok, "membership vs max-flow",
             f"{agree}/{total} agreements over {len(instances)} instances, {dt:.1f}s")
    assert agree == total
    assert dt < 30.0


def test_price_scheme_reaches_five_percent_on_tandem_fast():
    t0 = time.perf_counter()
    _, trace = run_dual(builtin_instance("tandem4"),
                        stop=StopRule(max_iters=200, epsilon=0.0))
    dt = time.perf_counter() - t0
    to5 = _first_within(trace.rows, 4.0, 0.05)
    ok = to5 is not None and to5 <= 200 and dt < 5.0
    _verdict(ok, "price scheme on tandem",
             f"within 5% of 4 at iteration {to5} (budget 200), {dt:.2f}s")
    assert to5 is not None and to5 <= 200
    assert dt < 5.0


def test_budget_scheme_converges_on_tandem_but_slower_than_prices():
    t0 = time.perf_counter()
    _, tp = run_primal(builtin_instance("tandem4"),
                       stop=StopRule(max_iters=5000, epsilon=0.0))
    _, td = run_dual(builtin_instance("tandem4"),
                     stop=StopRule(max_iters=200, epsilon=0.0))
    dt = time.perf_counter() - t0
    to5_p = _first_within(tp.rows, 4.0, 0.05)
    to5_d = _first_within(td.rows, 4.0, 0.05)
    ok = (to5_p is not None and to5_p <= 5000
          and to5_d is not None and to5_p > to5_d and dt < 30.0)
    _verdict(ok, "budget scheme on tandem",
             f"within 5% at iteration {to5_p} (budget 5000), "
             f"price scheme took {to5_d}, {dt:.1f}s")
    assert to5_p is not None and to5_p <= 5000
    assert to5_d is not None
    assert to5_p > to5_d, (
        f"budget scheme reached 5% at iteration {to5_p}, "
        f"not later than the price scheme's {to5_d}")
    assert dt < 30.0


def test_both_schemes_near_optimal_on_grid():
    opt = Fraction(20, 3)
    t0 = time.perf_counter()
    _, td = run_dual(builtin_instance("grid2x3"),
                     stop=StopRule(max_iters=5000, epsilon=0.0))
    _, tp = run_primal(builtin_instance("grid2x3"),
                       stop=StopRule(max_iters=5000, epsilon=0.0))
    dt = time.perf_counter() - t0
    best_d = min(r.sigma_c for r in td.rows)
    best_p = min(r.sigma_c for r in tp.rows)
    gap_d = abs(best_d - float(opt)) / float(opt)
    gap_p = abs(best_p - float(opt)) / float(opt)
    to5_d = _first_within(td.rows, float(opt), 0.05)
    to5_p = _first_within(tp.rows, float(opt), 0.05)
    ok = (gap_d <= 0.02 and gap_p <= 0.02
          and to5_p is not None and to5_d is not None and to5_p <= to5_d
          and dt < 60.0)
    _verdict(ok, "grid cross-check",
             f"price gap {gap_d:.2%} (to-5% at {to5_d}), "
             f"budget gap {gap_p:.2%} (to-5% at {to5_p}), {dt:.1f}s")
    assert gap_d <= 0.02, f"price scheme best gap {gap_d:.2%} exceeds 2%"
    assert gap_p <= 0.02, (
        f"budget scheme plateaus at {gap_p:.2%} after 5000 rounds "
        f"(best sigma_c {best_p:.4f} vs optimum {float(opt):.4f})")
    assert to5_p is not None and to5_d is not None and to5_p <= to5_d, (
        f"budget scheme to-5% count {to5_p} vs price scheme {to5_d}")
    assert dt < 60.0


def test_simulated_transport_changes_nothing_but_message_counts():
    runners = {"primal": run_primal, "dual": run_dual}
    mismatches = []
    checked = 0
    for name, alg in itertools.product(("tandem4", "grid2x3"), runners):
        inst = builtin_instance(name)
        stop = StopRule(max_iters=30, epsilon=0.0)
        sub_plain, tr_plain = runners[alg](inst, stop=stop)
        sub_sim, tr_sim, _ = simulate(inst, algorithm=alg, stop=stop)
        checked += 1
        same = (dict(sub_plain.items()) == dict(sub_sim.items())
                and tr_plain.stop_reason == tr_sim.stop_reason
                and len(tr_plain.rows) == len(tr_sim.rows)
                and all((a.iteration, a.sigma_c, a.max_violation, a.dual_value)
                        == (b.iteration, b.sigma_c, b.max_violation, b.dual_value)
                        for a, b in zip(tr_plain.rows, tr_sim.rows)))
        if not same:
            mismatches.append(f"{name}/{alg}")
    ok = not mismatches
    _verdict(ok, "transport transparency",
             f"{checked}/4 instance-algorithm pairs bit-identical"
             + (f", mismatches: {mismatches}" if mismatches else ""))
    assert not mismatches, f"simulated runs diverged on {mismatches}"


def test_every_exact_solve_certifies_itself():
    rng = random.Random(661)
    instances = [builtin_instance("tandem4"), builtin_instance("grid2x3")]
    instances += [random_instance(rng) for _ in range(20)]
    solves = 0
    for inst in instances:
        P = enumerate_constraints(inst)
        sol = solve_lp(inst, P)
        solves += 1
        assert sol.dual_objective(P) == sol.objective, (
            f"duality gap on instance {solves}: "
            f"{sol.dual_objective(P)} != {sol.objective}")
        for y, cut in zip(sol.duals, P.constraints):
            slack = cut.lhs(sol.z_star) - cut.rhs
            assert y >= 0 and slack >= 0
            assert y * slack == 0, f"loose cut priced at {y}, slack {slack}"
        for l, w in sol.box_duals.items():
            assert w >= 0
            assert w * (P.upper - sol.z_star[l]) == 0, (
                f"box dual {w} on link {l} with z = {sol.z_star[l]}")
    _verdict(True, "strong duality and slackness",
             f"{solves}/{solves} solves certified exactly "
             f"(primal cost == dual bound, all products zero)")


def test_coded_repair_keeps_every_node_pair_decodable():
    inst = builtin_instance("tandem4")
    z = Subgraph.from_mapping(inst, solve_lp(inst).z_star)
    d0 = field_size_bound(inst.n, inst.k, inst.file_size, compute_n_nc(inst, z))
    t0 = time.perf_counter()
    repairs = decodes = decode_total = 0
    for seed in range(100):
        rng = random.Random(seed)
        st = distribute(inst.file_size, inst.n, inst.k, GF65536, rng)
        out = repair(st, inst.failed_node, z, inst, GF65536, rng)
        repairs += check_rcp(out) == (True, None)
        s = [rng.randrange(GF65536.q) for _ in range(inst.file_size)]
        stored = project_file(out, s)
        for subset in itertools.combinations(sorted(out.nodes), inst.k):
            decode_total += 1
            decodes += reconstruct_file(out, subset, stored) == s
    dt = time.perf_counter() - t0
    ok = (GF65536.q > d0 and repairs == 100
          and decodes == decode_total and dt < 60.0)
    _verdict(ok, "coded repair round trip",
             f"field order {GF65536.q} > bound {d0}; {repairs}/100 repairs "
             f"rank-verified; {decodes}/{decode_total} subset decodes exact; {dt:.1f}s")
    assert GF65536.q > d0
    assert repairs == 100
    assert decodes == decode_total
    assert dt < 60.0


def test_twenty_stage_soak_survives_on_both_families():
    results = {}
    for name in ("tandem4", "grid2x3"):
        report = multi_stage_soak(builtin_family(name), 20, GF65536,
                                  random.Random(63))
        results[name] = sum(r["rcp_pass"] for r in report)
    ok = all(v == 20 for v in results.values())
    _verdict(ok, "twenty-stage soak",
             f"tandem {results['tandem4']}/20 stages verified, "
             f"grid {results['grid2x3']}/20")
    for name, passed in results.items():
        assert passed == 20, f"{name} soak verified only {passed}/20 stages"


def test_derivatives_and_convex_path_match_exact_references():
    rng = random.Random(664)
    funcs = [builtin_instance("tandem4").cost((2, 3)),
             CostFunction.quadratic(Fraction(3, 2), Fraction(1, 3)),
             CostFunction.convex(lambda z: z ** 4, lambda z: 4 * z ** 3)]
    quad_inst = random_instance(rng, quadratic=True)
    funcs += [quad_inst.cost(l) for l in quad_inst.links]
    h = 1e-6
    worst_fd = 0.0
    for f in funcs:
        for z in [0.25, 0.5, 1.0, 1.7, 3.0] + [rng.uniform(0.1, 5.0) for _ in range(5)]:
            fd = (float(f.value(z + h)) - float(f.value(z - h))) / (2 * h)
            exact = float(f.derivative(z))
            worst_fd = max(worst_fd, abs(fd - exact) / max(1.0, abs(exact)))

    worst_cv = 0.0
    lin_rng = random.Random(665)
    instances = [builtin_instance("tandem4"), builtin_instance("grid2x3")]
    instances += [random_instance(lin_rng) for _ in range(3)]
    for inst in instances:
        lp = solve_lp(inst)
        cv = solve_convex(inst)
        worst_cv = max(worst_cv,
                       abs(cv.objective - float(lp.objective)) / float(lp.objective))

    ok = worst_fd <= 1e-6 and worst_cv <= 1e-5
    _verdict(ok, "numerical hygiene",
             f"worst derivative-vs-difference error {worst_fd:.2e} (cap 1e-6); "
             f"worst convex-vs-exact gap {worst_cv:.2e} (cap 1e-5)")
    assert worst_fd <= 1e-6
    assert worst_cv <= 1e-5
