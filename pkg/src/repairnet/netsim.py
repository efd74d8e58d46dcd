"""Round-based message-passing execution of the two decentralized schemes.

The simulator is a transport layer, nothing more: every number is produced
by the same pure functions :mod:`repairnet.decomp` uses, in the same order,
so a simulated run finishes with bit-identical iterates and trace values.
What it adds is the bookkeeping of who told what to whom: multipliers
travel hop by hop along shortest control-plane paths, partial sums climb a
breadth-first aggregation tree, and every hop lands in a MessageLog.

Nodes are isolated state machines.  Each one owns exactly its share of the
problem, its allowance row (budget scheme) or price replica (price scheme),
and whatever arrived in messages; no node ever reads another node's state.
The harness moves payloads between them and watches the stitched-together
iterate for the stop rule.
"""

import math
from collections import Counter
from dataclasses import dataclass
from types import SimpleNamespace

from . import routing
from .decomp import (
    ConvergenceTrace,
    DualState,
    PrimalState,
    StepSchedule,
    StopRule,
    TraceRow,
    dual_master_step,
    dual_objective_value,
    dual_subproblem,
    ergodic_update,
    initial_allowances,
    make_node_shares,
    primal_master_step,
    primal_subproblem,
    repair_to_feasible,
)
from .model import RepairInstance, Subgraph, total_cost
from .polytope import Polytope, enumerate_constraints

FLOAT_BYTES = 8


class ConfigurationError(Exception):
    """The control plane cannot support the requested simulation."""


@dataclass(frozen=True)
class SimConfig:
    """Transport knobs: deterministic routing over a reliable control plane.

    ``seed`` is recorded for reproducibility of the whole experiment file;
    the reliable lossless transport itself draws no random numbers.  ``root``
    overrides the aggregation-tree root for the price scheme (default: the
    coordinator).
    """

    seed: int
    root: int | None = None
    routing: str = "shortest-path"
    loss: str = "none"


@dataclass(frozen=True)
class Hop:
    round: int
    src: int
    dst: int
    kind: str
    size: int


class MessageLog:
    """Every hop of every control message, in the order it was sent."""

    CSV_HEADER = "round,src,dst,kind,bytes-equivalent"

    def __init__(self) -> None:
        self.rows: list[Hop] = []

    def log(self, round_: int, src: int, dst: int, kind: str, floats: int) -> None:
        self.rows.append(Hop(round_, src, dst, kind, floats * FLOAT_BYTES))

    def in_round(self, round_: int) -> int:
        return sum(1 for h in self.rows if h.round == round_)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for h in self.rows:
            lines.append(f"{h.round},{h.src},{h.dst},{h.kind},{h.size}")
        return "\n".join(lines) + "\n"

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


def message_complexity(log: MessageLog) -> dict:
    """Hop counts: total, per round, and per payload kind."""
    per_round: Counter = Counter()
    per_kind: Counter = Counter()
    for h in log:
        per_round[h.round] += 1
        per_kind[h.kind] += 1
    return {"total": len(log), "per_round": dict(sorted(per_round.items())),
            "per_kind": dict(sorted(per_kind.items()))}


class _BudgetNode:
    """One survivor in the budget scheme: own share, own allowance row."""

    def __init__(self, share, t_row):
        self._s = SimpleNamespace(share=share, t=list(t_row), cache={})

    def solve(self, costs):
        s = self._s
        key = tuple(s.t)
        if key not in s.cache:
            s.cache[key] = primal_subproblem(s.share, s.t, costs)
        return s.cache[key]

    def adopt(self, t_row):
        self._s.t = list(t_row)


class _PriceNode:
    """One survivor in the price scheme: own share, replicated prices."""

    def __init__(self, share, lam):
        self._s = SimpleNamespace(share=share, lam=list(lam))

    def solve(self, costs):
        s = self._s
        z_i = dual_subproblem(s.share, s.lam, costs)
        return z_i, s.share.partial_h(z_i)

    def adopt(self, lam):
        self._s.lam = list(lam)


def _check_config(instance: RepairInstance, config: SimConfig, adj) -> None:
    if config.routing != "shortest-path":
        raise ConfigurationError(f"unknown routing mode {config.routing!r}")
    if config.loss != "none":
        raise ConfigurationError(f"unsupported loss model {config.loss!r}")
    if config.root is not None and config.root not in instance.survivors:
        raise ConfigurationError(f"root {config.root} is not a surviving node")
    if not routing.is_connected(adj):
        raise ConfigurationError(
            "control plane is disconnected: surviving nodes cannot all reach"
            " each other over the topology's links")


def simulate(instance: RepairInstance, polytope: Polytope | None = None,
             algorithm: str = "dual", config: SimConfig | None = None,
             schedule: StepSchedule | None = None, stop: StopRule | None = None):
    """Run one scheme over simulated messages.

    Returns (Subgraph, ConvergenceTrace, MessageLog).  The subgraph and the
    trace's sigma/violation/dual-value columns match the plain decomp run
    exactly; the messages column carries this transport's per-round hop
    count.
    """
    polytope = polytope or enumerate_constraints(instance)
    config = config or SimConfig(seed=0)
    schedule = schedule or StepSchedule()
    stop = stop or StopRule()
    adj = routing.control_adjacency(instance)
    _check_config(instance, config, adj)
    if algorithm == "primal":
        return _simulate_budget(instance, polytope, config, schedule, stop, adj)
    if algorithm == "dual":
        return _simulate_price(instance, polytope, config, schedule, stop, adj)
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def _simulate_budget(instance, polytope, config, schedule, stop, adj):
    shares = make_node_shares(instance, polytope)
    coord = routing.coordinator(instance)
    costs = {l: instance.cost(l) for l in instance.links}
    node_ids = sorted(shares)
    R = len(polytope.constraints)

    t0 = initial_allowances(shares, polytope)
    nodes = {i: _BudgetNode(shares[i], t0[i]) for i in node_ids}
    # The coordinator's authoritative copy of the whole allowance table.
    # Multipliers arrive by message each round; allowances go back out in the
    # per-node broadcasts.  Structurally this is the same PrimalState the
    # plain iteration carries.
    master = PrimalState(t={i: list(t0[i]) for i in node_ids}, lambda_local={},
                         k=0, schedule=schedule, shares=shares, coordinator=coord)

    report_paths = {i: routing.unicast_path(adj, i, coord)
                    for i in node_ids if i != coord}
    bcast_paths = {i: routing.unicast_path(adj, coord, i)
                   for i in node_ids if i != coord}

    log = MessageLog()
    trace = ConvergenceTrace(stop_reason="max_iters")
    best_z = Subgraph.constant(instance, polytope.upper)
    best_cost = total_cost(instance, best_z)
    prev_sigma = None

    for k in range(1, stop.max_iters + 1):
        master.k = k
        z: dict = {}
        lams = {}
        for i in node_ids:
            z_i, lam_i = nodes[i].solve(costs)
            z.update(z_i)
            lams[i] = lam_i
        for i in node_ids:
            if i == coord:
                continue
            for src, dst in report_paths[i]:
                log.log(k, src, dst, "DualsReport", R)
        master.lambda_local = lams

        sub = Subgraph(instance.links, z)
        sigma_exact = total_cost(instance, sub)
        sigma = float(sigma_exact)
        violation = float(polytope.violation(z)[1])
        if sigma_exact < best_cost:
            best_cost, best_z = sigma_exact, sub

        if stop.stalled(k, prev_sigma, sigma):
            trace.rows.append(TraceRow(k, sigma, violation, None, log.in_round(k)))
            trace.stop_reason = "stalled"
            break
        prev_sigma = sigma

        master = primal_master_step(master, schedule.alpha(k))
        for i in node_ids:
            if i == coord:
                continue
            # prices from the coordinator plus the recipient's own projected
            # allowance row (the projection couples all nodes, so rows are
            # computed centrally and shipped back)
            for src, dst in bcast_paths[i]:
                log.log(k, src, dst, "CoordinatorBroadcast", 2 * R)
            nodes[i].adopt(master.t[i])
        nodes[coord].adopt(master.t[coord])
        trace.rows.append(TraceRow(k, sigma, violation, None, log.in_round(k)))

    return best_z, trace, log


def _simulate_price(instance, polytope, config, schedule, stop, adj):
    shares = make_node_shares(instance, polytope)
    costs = {l: instance.cost(l) for l in instance.links}
    node_ids = sorted(shares)
    root = config.root if config.root is not None else routing.coordinator(instance)
    children = routing.aggregation_tree(adj, root)
    parent_of = {c: v for v, cs in children.items() for c in cs}
    R = len(polytope.constraints)

    nodes = {i: _PriceNode(shares[i], [0.0] * R) for i in node_ids}
    state = DualState(lam=[0.0] * R, k=0, schedule=schedule)

    # leaves first, root last, children folded in ascending-id order: the
    # exact summation order routing.accumulate_up pins down
    up_order = _postorder(children, root)

    log = MessageLog()
    trace = ConvergenceTrace(stop_reason="max_iters")
    best_cost = math.inf
    best_z = None
    zbar = None
    prev_sigma = None

    for k in range(1, stop.max_iters + 1):
        state.k = k
        z: dict = {}
        partials = {}
        for i in node_ids:
            z_i, part = nodes[i].solve(costs)
            z.update(z_i)
            partials[i] = part

        acc: dict[int, list] = {}
        for v in up_order:
            total = list(partials[v])
            for c in children[v]:
                child_acc = acc[c]
                for j in range(len(total)):
                    total[j] = total[j] + child_acc[j]
            acc[v] = total
            if v != root:
                log.log(k, v, parent_of[v], "PartialSum", R)
        h = acc[root]

        g = dual_objective_value(polytope, costs, state.lam, z)
        zbar = dict(z) if zbar is None else ergodic_update(zbar, z, k)
        z_rep = repair_to_feasible(polytope, zbar)
        sigma = float(total_cost(instance, Subgraph(instance.links, z_rep)))
        violation = float(polytope.violation(z)[1])
        if sigma < best_cost:
            best_cost, best_z = sigma, z_rep

        if stop.stalled(k, prev_sigma, sigma):
            trace.rows.append(TraceRow(k, sigma, violation, g, log.in_round(k)))
            trace.stop_reason = "stalled"
            break
        prev_sigma = sigma

        state = dual_master_step(state, h, schedule.alpha(k))
        for v in _preorder(children, root):
            for c in children[v]:
                log.log(k, v, c, "LambdaBroadcast", R)
            nodes[v].adopt(state.lam)
        trace.rows.append(TraceRow(k, sigma, violation, g, log.in_round(k)))

    if best_z is None:
        final = Subgraph.constant(instance, polytope.upper)
    else:
        final = Subgraph(instance.links, best_z)
    return final, trace, log


def _postorder(children: dict[int, tuple[int, ...]], root: int) -> list[int]:
    order = []
    stack = [(root, False)]
    while stack:
        v, expanded = stack.pop()
        if expanded:
            order.append(v)
        else:
            stack.append((v, True))
            for c in reversed(children[v]):
                stack.append((c, False))
    return order


def _preorder(children: dict[int, tuple[int, ...]], root: int) -> list[int]:
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        for c in reversed(children[v]):
            stack.append(c)
    return order
