"""Information-flow network for a single repair and exact max-flow checks.

A repair subgraph z is usable iff, for every way a future reader could pick
k nodes including the replacement, the flow network below carries at least
``file_size`` units from the source to that reader.  The network splits each
survivor into in/out vertices joined by a storage edge of capacity alpha,
gives each survivor a relay vertex fed by its out vertex, and routes each
usable link through the relay with capacity z.  The replacement node gets
its own in/out pair; readers attach to the out vertices of their k chosen
nodes with unbounded edges.

Flows are computed with exact arithmetic when z is exact, so feasibility
answers have no tolerance in them.
"""

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping

from .model import Link, RepairInstance

SOURCE = "S"
SINK = "DC"


@dataclass(frozen=True)
class FlowEdge:
    tail: object
    head: object
    kind: str          # "free" (unbounded), "storage" (capacity alpha), "var" (capacity z)
    link: Link | None = None

    def __repr__(self):
        tag = f" z[{self.link}]" if self.kind == "var" else f" [{self.kind}]"
        return f"{_fmt(self.tail)} -> {_fmt(self.head)}{tag}"


def _fmt(v) -> str:
    return v if isinstance(v, str) else f"{v[0]}({v[1]})"


@dataclass(frozen=True)
class FlowGraph:
    instance: RepairInstance
    vertices: tuple
    edges: tuple[FlowEdge, ...]
    unbounded: Fraction    # stand-in capacity, large enough to never bind


def build_flow_graph(instance: RepairInstance) -> FlowGraph:
    """Assemble the repair flow network (reader attachment edges come later)."""
    new = instance.new_node
    vertices = [SOURCE]
    edges = []
    for i in instance.survivors:
        vertices += [("in", i), ("out", i), ("relay", i)]
        edges.append(FlowEdge(SOURCE, ("in", i), "free"))
        edges.append(FlowEdge(("in", i), ("out", i), "storage"))
        edges.append(FlowEdge(("out", i), ("relay", i), "free"))
    vertices += [("in", new), ("out", new)]
    edges.append(FlowEdge(("in", new), ("out", new), "storage"))
    for (u, v) in instance.links:
        head = ("in", new) if v == new else ("relay", v)
        edges.append(FlowEdge(("relay", u), head, "var", (u, v)))
    vertices.append(SINK)
    # any finite flow is at most M per storage/var edge, so this can never bind
    unbounded = Fraction(instance.file_size) * (len(instance.links) + instance.n)
    return FlowGraph(instance, tuple(vertices), tuple(edges), unbounded)


def enumerate_collectors(instance: RepairInstance) -> list[tuple[int, ...]]:
    """Every k-node read set that includes the replacement node, sorted."""
    rest = combinations(instance.survivors, instance.k - 1)
    return [tuple(sorted(c + (instance.new_node,))) for c in rest]


def max_flow_value(graph: FlowGraph, z: Mapping[Link, object],
                   collector: Iterable[int], cap=None):
    """Max source-to-reader flow for one collector choice.

    Exact (Fraction in, Fraction out).  When ``cap`` is given, stops as soon
    as the flow reaches it; useful when only "is it at least M" matters.
    """
    inst = graph.instance
    alpha = Fraction(inst.alpha)
    index = {v: i for i, v in enumerate(graph.vertices)}
    # adjacency over paired forward/backward residual arcs
    heads, caps, adj = [], [], [[] for _ in graph.vertices]

    def arc(u, v, c):
        adj[index[u]].append(len(heads)); heads.append(index[v]); caps.append(c)
        adj[index[v]].append(len(heads)); heads.append(index[u]); caps.append(0 * c)

    for e in graph.edges:
        if e.kind == "free":
            c = graph.unbounded
        elif e.kind == "storage":
            c = alpha
        else:
            c = z[e.link]
        arc(e.tail, e.head, c)
    for node in collector:
        arc(("out", node), SINK, graph.unbounded)

    s, t = index[SOURCE], index[SINK]
    flow = caps[0] * 0  # zero of whatever numeric type the capacities use
    while cap is None or flow < cap:
        # BFS for a shortest augmenting path in the residual network
        prev_arc = [-1] * len(adj)
        prev_arc[s] = -2
        queue = [s]
        for u in queue:
            for a in adj[u]:
                v = heads[a]
                if prev_arc[v] == -1 and caps[a] > 0:
                    prev_arc[v] = a
                    if v == t:
                        queue.clear()
                        break
                    queue.append(v)
            else:
                continue
            break
        if prev_arc[t] == -1:
            break
        push = None
        v = t
        while v != s:
            a = prev_arc[v]
            push = caps[a] if push is None else min(push, caps[a])
            v = heads[a ^ 1]
        v = t
        while v != s:
            a = prev_arc[v]
            caps[a] -= push
            caps[a ^ 1] += push
            v = heads[a ^ 1]
        flow += push
    return flow


def min_flow_over_collectors(instance: RepairInstance, z: Mapping[Link, object],
                             graph: FlowGraph | None = None):
    """(smallest max-flow, the collector achieving it) over all read sets."""
    graph = graph or build_flow_graph(instance)
    best = None
    for dc in enumerate_collectors(instance):
        val = max_flow_value(graph, z, dc)
        if best is None or val < best[0]:
            best = (val, dc)
    return best


def is_feasible_by_flow(instance: RepairInstance, z: Mapping[Link, object],
                        graph: FlowGraph | None = None) -> bool:
    """True iff every collector choice can pull the whole file through z."""
    graph = graph or build_flow_graph(instance)
    need = Fraction(instance.file_size)
    for dc in enumerate_collectors(instance):
        if max_flow_value(graph, z, dc, cap=need) < need:
            return False
    return True


def dump_edges(graph: FlowGraph) -> str:
    return "\n".join(repr(e) for e in graph.edges)
