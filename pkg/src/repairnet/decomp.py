"""Decentralized repair-subgraph optimization: budget and price iterations.

Both schemes split every cut constraint into per-node pieces.  Node i's piece
of constraint r is h_i^r(z_i) = rhs_r/S - sum of z over the links node i owns
inside cut r, where S counts the survivors and each survivor owns its
outgoing links; the pieces add up to the full slack rhs_r - sum(z over cut).

Budget scheme (run_primal): every node receives an allowance t_i^r with
sum_i t_i^r = 0 and solves its own small problem, cheapest z_i with
h_i^r(z_i) <= t_i^r.  The allowances then move along the difference between
the node's multipliers and the coordinator's, a projected subgradient step on
the allowance master problem, with a closed-form projection keeping every
node's subproblem solvable.  Iterates stay feasible throughout.

Price scheme (run_dual): a shared multiplier per constraint prices every
link; nodes respond with the closed-form cheapest reaction, prices rise on
violated constraints and fall otherwise (projected at zero).  Raw iterates
may be infeasible, so the reported cost comes from a repaired point: the
running average of the iterates pushed toward M*1 just enough to enter the
polytope.

All of this is plain arithmetic with a pinned evaluation order (sorted nodes,
sorted links, aggregation-tree partial sums), so the message-passing
execution in netsim reproduces these runs float for float.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from typing import Mapping, Sequence

from . import routing
from .model import (CostFunction, Link, RepairInstance, StructuralError,
                    Subgraph, total_cost)
from .polytope import Polytope, enumerate_constraints
from .solver import InfeasibleError, _solve_square, solve_support_lp


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing, non-summable steps: alpha_k = c / sqrt(k)."""

    c: float = 0.5

    def alpha(self, k: int) -> float:
        return self.c / math.sqrt(k)


@dataclass(frozen=True)
class StopRule:
    """Run until k exceeds max_iters or the reported cost goes flat.

    The flatness test |sigma(k) - sigma(k-1)| < epsilon only arms after
    ``burn_in`` rounds: both schemes can hold a constant cost for the first
    couple of iterations while multipliers are still warming up, and stopping
    there would freeze them far from the optimum.
    """

    max_iters: int = 5000
    epsilon: float = 1e-3
    burn_in: int = 10

    def stalled(self, k: int, prev: float | None, cur: float) -> bool:
        return prev is not None and k > self.burn_in and abs(cur - prev) < self.epsilon


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    sigma_c: float
    max_violation: float
    dual_value: float | None
    messages: int = 0


@dataclass
class ConvergenceTrace:
    rows: list[TraceRow] = field(default_factory=list)
    stop_reason: str = ""

    CSV_HEADER = "iteration,sigma_c,max_violation,dual_value,messages"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            dv = "" if r.dual_value is None else repr(r.dual_value)
            lines.append(f"{r.iteration},{r.sigma_c!r},{r.max_violation!r},{dv},{r.messages}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class NodeShare:
    """One survivor's slice of the problem.

    owned: the links this node transmits on (its outgoing links).
    cut_links[r]: the owned links appearing in constraint r.
    link_rows[j]: the constraints owned link j appears in, ascending.
    consts[r]: the node's share rhs_r/S of constraint r's right side.
    floors[r]: the smallest allowance t_i^r the node can satisfy at all
    (attained by pushing every owned link in the cut to M).
    upper: the box bound M.
    """

    node: int
    owned: tuple[Link, ...]
    cut_links: tuple[tuple[Link, ...], ...]
    link_rows: tuple[tuple[int, ...], ...]
    consts: tuple[Fraction, ...]
    floors: tuple[float, ...]
    upper: Fraction

    def partial_h(self, z_i: Mapping[Link, object]) -> list[float]:
        """This node's piece of every constraint's slack, in floats."""
        out = []
        for r in range(len(self.consts)):
            acc = float(self.consts[r])
            for l in self.cut_links[r]:
                acc -= float(z_i[l])
            out.append(acc)
        return out


def make_node_shares(instance: RepairInstance,
                     polytope: Polytope) -> dict[int, NodeShare]:
    survivors = instance.survivors
    S = len(survivors)
    M = polytope.upper
    shares = {}
    for i in survivors:
        owned = tuple(sorted(l for l in instance.links if l[0] == i))
        cut_links, consts, floors = [], [], []
        for cut in polytope.constraints:
            mine = tuple(l for l in owned if l in cut.links)
            const = cut.rhs / S
            cut_links.append(mine)
            consts.append(const)
            floors.append(float(const - M * len(mine)))
        link_rows = tuple(
            tuple(r for r, links in enumerate(cut_links) if l in links)
            for l in owned)
        shares[i] = NodeShare(node=i, owned=owned, cut_links=tuple(cut_links),
                              link_rows=link_rows, consts=tuple(consts),
                              floors=tuple(floors), upper=M)
    return shares


# --- budget (primal) scheme -------------------------------------------------------

@dataclass
class PrimalState:
    """Allowances and the latest per-node multipliers, plus bookkeeping."""

    t: dict[int, list[float]]
    lambda_local: dict[int, tuple[float, ...]]
    k: int
    schedule: StepSchedule
    shares: Mapping[int, NodeShare]
    coordinator: int


def initial_allowances(shares: Mapping[int, NodeShare],
                       polytope: Polytope) -> dict[int, list[float]]:
    """Allowance split matching z = M*1: feasible for every node, sums to zero."""
    S = len(shares)
    M = polytope.upper
    t = {}
    for i, share in shares.items():
        row = []
        for r, cut in enumerate(polytope.constraints):
            mine = share.consts[r] - M * len(share.cut_links[r])
            whole = cut.rhs - M * len(cut.links)
            row.append(float(mine - whole / S))
        t[i] = row
    return t


def primal_subproblem(share: NodeShare, t_i: Sequence[float],
                      costs: Mapping[Link, CostFunction]):
    """Cheapest z over the node's own links within its allowances.

    Returns (z_i, lambda_i): exact optimizer per owned link and one
    multiplier per constraint (zero where the node owns no link in the cut).
    Linear costs go through the exact LP; quadratic costs with a > 0 through
    exact KKT enumeration.  Mixed or custom costs are not supported here;
    the price scheme handles those link by link.
    """
    kinds = {costs[l].kind for l in share.owned}
    R = len(share.consts)
    lam = [0.0] * R
    if not share.owned:
        return {}, tuple(lam)

    var_index = {l: j for j, l in enumerate(share.owned)}
    rows, row_ids = [], []
    for r in range(R):
        if share.cut_links[r]:
            support = [var_index[l] for l in share.cut_links[r]]
            rhs = share.consts[r] - Fraction(t_i[r])
            rows.append((support, rhs))
            row_ids.append(r)

    if kinds <= {"linear"}:
        cvec = [costs[l].coeffs[0] for l in share.owned]
        x, duals = solve_support_lp(cvec, rows, share.upper)
    elif kinds == {"quadratic"} and all(costs[l].coeffs[0] > 0 for l in share.owned):
        ab = [(costs[l].coeffs[0], costs[l].coeffs[1]) for l in share.owned]
        x, duals = _kkt_separable_quadratic(ab, rows, share.upper)
    else:
        raise StructuralError(
            f"node {share.node} has {sorted(kinds)} costs; the budget scheme"
            f" needs all-linear or all-strictly-quadratic links (run_dual"
            f" handles these link by link)")
    for r, d in zip(row_ids, duals):
        lam[r] = float(d)
    z_i = {l: x[var_index[l]] for l in share.owned}
    return z_i, tuple(lam)


def _kkt_separable_quadratic(ab, rows, upper):
    """Exact minimizer of sum(a_j x_j^2 + b_j x_j) under support rows and a box.

    Walks active-set candidates (which rows bind, which variables sit at 0 or
    at the box top) and returns the first stationary point passing all sign
    and feasibility checks; for affine constraints and strictly convex
    separable objectives that point is the optimum.
    """
    V, R = len(ab), len(rows)
    FREE, LO, HI = 0, 1, 2
    for mask in range(1 << R):
        active = [r for r in range(R) if mask >> r & 1]
        for states in product((FREE, LO, HI), repeat=V):
            free = [v for v in range(V) if states[v] == FREE]
            u_index = {("z", v): p for p, v in enumerate(free)}
            for p, r in enumerate(active):
                u_index[("lam", r)] = len(free) + p
            dim = len(u_index)
            if dim == 0:
                x = [Fraction(0) if s == LO else upper for s in states]
                lam = [Fraction(0)] * R
                if _kkt_checks(ab, rows, upper, x, lam, active, states):
                    return x, lam
                continue
            A = [[Fraction(0)] * dim for _ in range(dim)]
            b = [Fraction(0)] * dim
            eq = 0
            for v in free:
                A[eq][u_index[("z", v)]] = 2 * ab[v][0]
                for r in active:
                    if v in rows[r][0]:
                        A[eq][u_index[("lam", r)]] = Fraction(-1)
                b[eq] = -ab[v][1]
                eq += 1
            for r in active:
                support, rhs = rows[r]
                fixed = sum((upper for v in support if states[v] == HI),
                            Fraction(0))
                for v in support:
                    if states[v] == FREE:
                        A[eq][u_index[("z", v)]] = Fraction(1)
                b[eq] = rhs - fixed
                eq += 1
            try:
                sol = _solve_square(A, b)
            except StopIteration:
                continue
            x = []
            for v in range(V):
                if states[v] == FREE:
                    x.append(sol[u_index[("z", v)]])
                elif states[v] == LO:
                    x.append(Fraction(0))
                else:
                    x.append(upper)
            lam = [Fraction(0)] * R
            for r in active:
                lam[r] = sol[u_index[("lam", r)]]
            if _kkt_checks(ab, rows, upper, x, lam, active, states):
                return x, lam
    raise InfeasibleError("no allowance-compatible point in the box")


def _kkt_checks(ab, rows, upper, x, lam, active, states) -> bool:
    FREE, LO, HI = 0, 1, 2
    for v, xv in enumerate(x):
        if not (0 <= xv <= upper):
            return False
    for r, (support, rhs) in enumerate(rows):
        total = sum((x[v] for v in support), Fraction(0))
        if r in active:
            if lam[r] < 0 or total != rhs:
                return False
        elif total < rhs:
            return False
    for v, s in enumerate(states):
        pressure = sum((lam[r] for r in active if v in rows[r][0]), Fraction(0))
        grad0 = ab[v][1]
        gradM = 2 * ab[v][0] * upper + ab[v][1]
        if s == LO and grad0 - pressure < 0:
            return False
        if s == HI and pressure - gradM < 0:
            return False
    return True


def project_allowances(t: dict[int, list[float]],
                       shares: Mapping[int, NodeShare]) -> dict[int, list[float]]:
    """Euclidean projection onto {sum_i t_i^r = 0 and t_i^r >= floor_i^r}.

    Per constraint: shift everyone equally, clamp whoever falls below their
    floor, redistribute among the rest, repeat.  The clamp set only grows, so
    this settles within one pass per node.  The target set is never empty
    because the floors sum to at most zero.
    """
    nodes = sorted(t)
    R = len(next(iter(t.values()))) if t else 0
    out = {i: list(t[i]) for i in nodes}
    for r in range(R):
        vals = {i: t[i][r] for i in nodes}
        floors = {i: shares[i].floors[r] for i in nodes}
        clamped: set[int] = set()
        while True:
            active = [i for i in nodes if i not in clamped]
            if not active:
                break
            shift = (math.fsum(vals[i] for i in active)
                     + math.fsum(floors[i] for i in clamped)) / len(active)
            violators = [i for i in active if vals[i] - shift < floors[i]]
            if not violators:
                for i in active:
                    out[i][r] = vals[i] - shift
                for i in clamped:
                    out[i][r] = floors[i]
                break
            clamped.update(violators)
    return out


def primal_master_step(state: PrimalState, alpha: float | None = None) -> PrimalState:
    """Move allowances along multiplier differences, then restore solvability.

    For every node but the coordinator, t_i^r gains alpha * (lambda_i^r -
    lambda_coord^r); a node whose constraint is pricier than the
    coordinator's gets more allowance.  The coordinator's own allowance is
    eliminated as minus the sum of the others, and the projection keeps every
    node above its floor while preserving the zero sum.
    """
    if alpha is None:
        alpha = state.schedule.alpha(state.k if state.k > 0 else 1)
    coord = state.coordinator
    lam_c = state.lambda_local[coord]
    R = len(lam_c)
    new_t = {}
    for i in sorted(state.t):
        if i == coord:
            continue
        lam_i = state.lambda_local[i]
        new_t[i] = [state.t[i][r] + alpha * (lam_i[r] - lam_c[r]) for r in range(R)]
    coord_row = []
    for r in range(R):
        acc = 0.0
        for i in sorted(new_t):
            acc += new_t[i][r]
        coord_row.append(-acc)
    new_t[coord] = coord_row
    new_t = project_allowances(new_t, state.shares)
    return replace(state, t=new_t, k=state.k + 1)


def run_primal(instance: RepairInstance, polytope: Polytope | None = None,
               schedule: StepSchedule | None = None,
               stop: StopRule | None = None):
    """Budget-scheme iteration; returns (best feasible Subgraph, trace).

    Every iterate is feasible, so the best point seen is simply the cheapest.
    With max_iters = 0 the conventional starting point z = M*1 is returned.
    """
    polytope = polytope or enumerate_constraints(instance)
    schedule = schedule or StepSchedule()
    stop = stop or StopRule()
    shares = make_node_shares(instance, polytope)
    coord = routing.coordinator(instance)
    costs = {l: instance.cost(l) for l in instance.links}
    nodes = sorted(shares)

    state = PrimalState(t=initial_allowances(shares, polytope), lambda_local={},
                        k=0, schedule=schedule, shares=shares, coordinator=coord)
    best_z = Subgraph.constant(instance, polytope.upper)
    best_cost = total_cost(instance, best_z)
    trace = ConvergenceTrace(stop_reason="max_iters")
    prev_sigma = None
    cache: dict = {}

    for k in range(1, stop.max_iters + 1):
        state.k = k
        z: dict[Link, Fraction] = {}
        lams = {}
        for i in nodes:
            key = (i, tuple(state.t[i]))
            if key not in cache:
                cache[key] = primal_subproblem(shares[i], state.t[i], costs)
            z_i, lam_i = cache[key]
            z.update(z_i)
            lams[i] = lam_i
        state.lambda_local = lams
        sub = Subgraph(instance.links, z)
        sigma_exact = total_cost(instance, sub)
        sigma = float(sigma_exact)
        violation = float(polytope.violation(z)[1])
        trace.rows.append(TraceRow(k, sigma, violation, None))
        if sigma_exact < best_cost:
            best_cost, best_z = sigma_exact, sub
        if stop.stalled(k, prev_sigma, sigma):
            trace.stop_reason = "stalled"
            break
        prev_sigma = sigma
        state = primal_master_step(state, schedule.alpha(k))
    return best_z, trace


# --- price (dual) scheme ----------------------------------------------------------

@dataclass
class DualState:
    """Shared per-constraint prices (replicated at every node) and the round."""

    lam: list[float]
    k: int
    schedule: StepSchedule


def dual_subproblem(share: NodeShare, lam: Sequence[float],
                    costs: Mapping[Link, CostFunction]) -> dict[Link, float]:
    """Closed-form cheapest reaction of one node to the current prices.

    Each owned link weighs its price w = sum of lam over the constraints it
    appears in against its cost: linear links go all in (z = M) when the
    price strictly beats the rate and stay silent otherwise, ties included;
    quadratic links settle at the interior stationary point clamped to the
    box.
    """
    M = float(share.upper)
    z = {}
    for j, l in enumerate(share.owned):
        w = 0.0
        for r in share.link_rows[j]:
            w += lam[r]
        f = costs[l]
        if f.kind == "linear":
            z[l] = M if f.coeffs[0] < w else 0.0
        elif f.kind == "quadratic":
            a, bb = f.coeffs
            if a == 0:
                z[l] = M if bb < w else 0.0
            else:
                z[l] = min(max((w - float(bb)) / (2.0 * float(a)), 0.0), M)
        else:
            raise StructuralError(
                f"link {l} has a custom cost; the price scheme needs"
                f" linear or quadratic rates (use solve_convex)")
    return z


def dual_master_step(state: DualState, h: Sequence[float],
                     alpha: float | None = None) -> DualState:
    """Projected subgradient ascent on the prices: lam = max(0, lam + alpha*h)."""
    if alpha is None:
        alpha = state.schedule.alpha(state.k if state.k > 0 else 1)
    new_lam = [max(0.0, state.lam[r] + alpha * h[r]) for r in range(len(state.lam))]
    return replace(state, lam=new_lam, k=state.k + 1)


def dual_objective_value(polytope: Polytope, costs: Mapping[Link, CostFunction],
                         lam: Sequence[float], z: Mapping[Link, float]) -> float:
    """g(lam) at the prices' own minimizer z: a certified lower bound."""
    g = 0.0
    for r, cut in enumerate(polytope.constraints):
        g += lam[r] * float(cut.rhs)
    for l in sorted(z):
        w = 0.0
        for r, cut in enumerate(polytope.constraints):
            if l in cut.links:
                w += lam[r]
        g += float(costs[l].value(z[l])) - w * z[l]
    return g


def ergodic_update(zbar: dict[Link, float], z: Mapping[Link, float],
                   k: int) -> dict[Link, float]:
    """Running average over all iterates so far (k counts from 1)."""
    return {l: zbar[l] + (z[l] - zbar[l]) / k for l in zbar}


def repair_to_feasible(polytope: Polytope, zbar: Mapping[Link, float]) -> dict[Link, float]:
    """Slide the averaged point toward M*1 just far enough to enter the polytope.

    The blend z + theta*(M*1 - z) satisfies every cut once theta reaches the
    worst deficit ratio; M*1 itself is always feasible, so theta <= 1.
    """
    M = float(polytope.upper)
    theta = 0.0
    for cut in polytope.constraints:
        got = 0.0
        for l in cut.links:
            got += zbar[l]
        need = float(cut.rhs)
        if got < need:
            room = len(cut.links) * M - got
            if room > 0:
                theta = max(theta, (need - got) / room)
    theta = min(theta, 1.0)
    return {l: v + theta * (M - v) for l, v in sorted(zbar.items())}


def run_dual(instance: RepairInstance, polytope: Polytope | None = None,
             schedule: StepSchedule | None = None, stop: StopRule | None = None,
             lambda0: Sequence[float] | None = None):
    """Price-scheme iteration; returns (best repaired Subgraph, trace).

    The trace's sigma_c column is the repaired running-average cost, the
    violation column describes the raw (possibly infeasible) iterate, and
    dual_value is the certified lower bound g(lam).  ``lambda0`` seeds the
    prices (default all zero).
    """
    polytope = polytope or enumerate_constraints(instance)
    schedule = schedule or StepSchedule()
    stop = stop or StopRule()
    shares = make_node_shares(instance, polytope)
    costs = {l: instance.cost(l) for l in instance.links}
    nodes = sorted(shares)
    root = routing.coordinator(instance)
    children = routing.aggregation_tree(routing.control_adjacency(instance), root)
    R = len(polytope.constraints)

    if lambda0 is None:
        lam = [0.0] * R
    else:
        lam = [float(v) for v in lambda0]
        if len(lam) != R or any(v < 0 for v in lam):
            raise StructuralError(f"lambda0 must be {R} nonnegative prices")
    state = DualState(lam=lam, k=0, schedule=schedule)

    best_cost = math.inf
    best_z: dict[Link, float] | None = None
    trace = ConvergenceTrace(stop_reason="max_iters")
    zbar: dict[Link, float] | None = None
    prev_sigma = None

    for k in range(1, stop.max_iters + 1):
        state.k = k
        z: dict[Link, float] = {}
        partials = {}
        for i in nodes:
            z_i = dual_subproblem(shares[i], state.lam, costs)
            z.update(z_i)
            partials[i] = shares[i].partial_h(z_i)
        h = routing.accumulate_up(children, partials, root)[root]
        g = dual_objective_value(polytope, costs, state.lam, z)
        zbar = dict(z) if zbar is None else ergodic_update(zbar, z, k)
        z_rep = repair_to_feasible(polytope, zbar)
        sigma = float(total_cost(instance, Subgraph(instance.links, z_rep)))
        violation = float(polytope.violation(z)[1])
        trace.rows.append(TraceRow(k, sigma, violation, g))
        if sigma < best_cost:
            best_cost, best_z = sigma, z_rep
        if stop.stalled(k, prev_sigma, sigma):
            trace.stop_reason = "stalled"
            break
        prev_sigma = sigma
        state = dual_master_step(state, h, schedule.alpha(k))

    if best_z is None:
        return Subgraph.constant(instance, polytope.upper), trace
    return Subgraph(instance.links, best_z), trace
