"""Core records for single-failure repair problems on storage networks.

A repair problem is described by the surviving storage nodes, the directed
links they may use to push repair traffic toward a replacement node, a convex
transmission cost per link, and the erasure-code parameters (n, k, file size).
Everything downstream (cut polytopes, LP solves, decomposed iterations,
actual recoding) consumes the ``RepairInstance`` built here.

Costs and link amounts are kept as exact rationals on the reference path;
iterative solvers are free to work in floats on top of the same records.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

Link = tuple[int, int]


class StructuralError(ValueError):
    """A record does not have the shape its consumer requires."""


class InvalidInstanceError(ValueError):
    """Parameters or topology violate the repair-problem invariants."""


def as_rational(x) -> Fraction:
    """Coerce a number-ish value to an exact Fraction.

    Accepts int, Fraction, strings like ``"2/3"``, and floats.  Floats are
    read through their decimal repr so that a JSON ``0.1`` means 1/10 rather
    than the nearest binary double.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise StructuralError(f"expected a number, got {x!r}")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    if isinstance(x, str):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError) as exc:
            raise StructuralError(f"not a rational literal: {x!r}") from exc
    raise StructuralError(f"expected a number, got {type(x).__name__}")


@dataclass(frozen=True)
class CostFunction:
    """Convex, nondecreasing transmission cost f(z) for z >= 0 with f(0) = 0.

    Two serializable kinds are provided, ``linear`` (c*z) and ``quadratic``
    (a*z**2 + b*z with a >= 0).  Arbitrary convex costs can be wrapped with
    :meth:`convex` for library use; those cannot round-trip through files.
    """

    kind: str
    coeffs: tuple[Fraction, ...] = ()
    _value_fn: Callable | None = field(default=None, repr=False, compare=False)
    _deriv_fn: Callable | None = field(default=None, repr=False, compare=False)

    @classmethod
    def linear(cls, c) -> "CostFunction":
        c = as_rational(c)
        if c < 0:
            raise StructuralError("linear cost coefficient must be nonnegative")
        return cls("linear", (c,))

    @classmethod
    def quadratic(cls, a, b=0) -> "CostFunction":
        a, b = as_rational(a), as_rational(b)
        if a < 0 or b < 0:
            raise StructuralError("quadratic cost coefficients must be nonnegative")
        return cls("quadratic", (a, b))

    @classmethod
    def convex(cls, value_fn: Callable, deriv_fn: Callable) -> "CostFunction":
        """Wrap caller-supplied value/derivative callables (floats are fine)."""
        return cls("custom", (), value_fn, deriv_fn)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def value(self, z):
        if self.kind == "linear":
            return self.coeffs[0] * z
        if self.kind == "quadratic":
            a, b = self.coeffs
            return a * z * z + b * z
        return self._value_fn(z)

    def derivative(self, z):
        if self.kind == "linear":
            return self.coeffs[0]
        if self.kind == "quadratic":
            a, b = self.coeffs
            return 2 * a * z + b
        return self._deriv_fn(z)

    def to_json(self) -> dict:
        if self.kind == "custom":
            raise StructuralError("custom cost functions are not serializable")
        return {"kind": self.kind, "coeffs": [str(c) for c in self.coeffs]}


def cost_derivative(f: CostFunction, z):
    """Derivative of a link cost at z; z must lie in the cost's domain z >= 0."""
    if z < 0:
        raise ValueError(f"cost functions are defined for z >= 0, got {z}")
    return f.derivative(z)


@dataclass(frozen=True)
class Topology:
    """Directed usable-link structure of the post-failure network.

    ``nodes`` lists the surviving storage nodes plus the replacement node.
    Links are directed (tail, head) pairs, each with its own cost.  The
    undirected view of the links must be connected so control traffic can
    reach everyone.
    """

    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    costs: Mapping[Link, CostFunction]
    name: str | None = None

    def __post_init__(self):
        seen = set()
        for u, v in self.links:
            if u == v:
                raise StructuralError(f"self loop on node {u}")
            if (u, v) in seen:
                raise StructuralError(f"duplicate link {(u, v)}")
            if u not in self.nodes or v not in self.nodes:
                raise StructuralError(f"link {(u, v)} touches an unknown node")
            seen.add((u, v))
        missing = seen.symmetric_difference(self.costs.keys())
        if missing:
            raise StructuralError(f"cost table does not match links: {sorted(missing)}")
        if len(set(self.nodes)) != len(self.nodes):
            raise StructuralError("duplicate node ids")
        if len(self.nodes) > 1 and not _undirected_connected(self.nodes, self.links):
            raise StructuralError("topology is not connected (control traffic cannot reach every node)")

    def out_links(self, node: int) -> tuple[Link, ...]:
        return tuple(l for l in self.links if l[0] == node)

    def in_links(self, node: int) -> tuple[Link, ...]:
        return tuple(l for l in self.links if l[1] == node)


def _undirected_connected(nodes: Iterable[int], links: Iterable[Link]) -> bool:
    adj: dict[int, set[int]] = {v: set() for v in nodes}
    for u, v in links:
        adj[u].add(v)
        adj[v].add(u)
    nodes = list(nodes)
    seen = {nodes[0]}
    queue = deque([nodes[0]])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(nodes)


def _is_dag(nodes: Iterable[int], links: Iterable[Link]) -> bool:
    indeg = {v: 0 for v in nodes}
    out: dict[int, list[int]] = {v: [] for v in nodes}
    for u, v in links:
        indeg[v] += 1
        out[u].append(v)
    queue = deque(sorted(v for v, d in indeg.items() if d == 0))
    done = 0
    while queue:
        u = queue.popleft()
        done += 1
        for w in out[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return done == len(indeg)


@dataclass(frozen=True)
class RepairInstance:
    """One failure event: who died, who replaces it, and the code parameters.

    n counts storage nodes before the failure, k is the reconstruction
    threshold (any k nodes rebuild the file), file_size is the file in
    fragments.  Per-node storage is ``alpha = file_size // k`` fragments.
    """

    topology: Topology
    failed_node: int
    new_node: int
    n: int
    k: int
    file_size: int

    def __post_init__(self):
        if not (1 <= self.k < self.n):
            raise InvalidInstanceError(f"need 1 <= k < n, got k={self.k} n={self.n}")
        if self.file_size <= 0 or self.file_size % self.k:
            raise InvalidInstanceError("file_size must be a positive multiple of k")
        nodes = self.topology.nodes
        if len(nodes) != self.n:
            raise InvalidInstanceError(
                f"topology must carry the n-1 survivors plus the replacement"
                f" ({self.n} nodes), got {len(nodes)}")
        if self.new_node not in nodes:
            raise InvalidInstanceError(f"replacement node {self.new_node} missing from topology")
        if self.failed_node in nodes:
            raise InvalidInstanceError(f"failed node {self.failed_node} still present in topology")
        if not any(v == self.new_node for _, v in self.topology.links):
            raise InvalidInstanceError("replacement node has no incoming link")
        if any(u == self.new_node for u, _ in self.topology.links):
            raise InvalidInstanceError("replacement node cannot source repair traffic")
        if not _is_dag(nodes, self.topology.links):
            raise InvalidInstanceError("repair links must form a DAG")

    @property
    def alpha(self) -> int:
        return self.file_size // self.k

    @property
    def survivors(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.topology.nodes) - {self.new_node}))

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(sorted(self.topology.links))

    def cost(self, link: Link) -> CostFunction:
        return self.topology.costs[link]


@dataclass(frozen=True)
class Subgraph:
    """An assignment of a nonnegative amount to every link of a topology.

    The amount on link (i, j) is how much coded traffic node i sends toward
    node j during the repair, measured in fragments.
    """

    links: tuple[Link, ...]
    values: Mapping[Link, object]

    def __post_init__(self):
        if set(self.values.keys()) != set(self.links):
            raise StructuralError("subgraph must assign a value to exactly the topology links")
        for l, v in self.values.items():
            if v < 0:
                raise StructuralError(f"negative amount {v} on link {l}")

    @classmethod
    def from_mapping(cls, instance: RepairInstance, values: Mapping[Link, object]) -> "Subgraph":
        return cls(instance.links, dict(values))

    @classmethod
    def constant(cls, instance: RepairInstance, value) -> "Subgraph":
        return cls(instance.links, {l: value for l in instance.links})

    def __getitem__(self, link: Link):
        return self.values[link]

    def items(self):
        return [(l, self.values[l]) for l in sorted(self.links)]

    def as_floats(self) -> "Subgraph":
        return Subgraph(self.links, {l: float(v) for l, v in self.values.items()})


def total_cost(instance: RepairInstance, z: Subgraph):
    """Total transmission cost of a repair subgraph, exact when z is exact."""
    if set(z.links) != set(instance.links):
        raise StructuralError("subgraph does not match the instance's links")
    acc = 0
    for link in sorted(instance.links):
        acc = acc + instance.cost(link).value(z[link])
    return acc


# --- builtin instance families -------------------------------------------------

@dataclass(frozen=True)
class RepairFamily:
    """A physical network shape that can lose any one node.

    ``edges`` are undirected cables between positions.  When the node at some
    position fails, the usable repair links are the cables oriented toward
    that position (strictly decreasing hop distance, node id breaking ties),
    which always yields a DAG draining into the replacement node.
    """

    name: str
    positions: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    file_size: int
    k: int
    default_failed: int
    cost_factory: Callable[[Link], CostFunction] = field(
        default=lambda link: CostFunction.linear(1))

    @property
    def n(self) -> int:
        return len(self.positions)

    def instance(self, failed_position: int | None = None,
                 ids: Mapping[int, int] | None = None,
                 new_id: int | None = None) -> RepairInstance:
        """Build the repair instance for a failure at ``failed_position``.

        ``ids`` maps positions to current node ids (defaults to identity); the
        replacement node gets ``new_id`` (defaults to one past the max id).
        """
        failed_pos = self.default_failed if failed_position is None else failed_position
        if failed_pos not in self.positions:
            raise InvalidInstanceError(f"no position {failed_pos} in family {self.name}")
        ids = dict(ids) if ids is not None else {p: p for p in self.positions}
        if new_id is None:
            new_id = max(ids.values()) + 1
        directed = oriented_repair_links(self.positions, self.edges, failed_pos)
        relabel = {p: ids[p] for p in self.positions}
        relabel[failed_pos] = new_id  # replacement sits where the failure was
        links = tuple(sorted((relabel[u], relabel[v]) for u, v in directed))
        nodes = tuple(sorted(relabel.values()))
        costs = {(relabel[u], relabel[v]): self.cost_factory((u, v))
                 for u, v in directed}
        topo = Topology(nodes=nodes, links=links, costs=costs, name=self.name)
        return RepairInstance(
            topology=topo, failed_node=ids[failed_pos], new_node=new_id,
            n=self.n, k=self.k, file_size=self.file_size)


def oriented_repair_links(positions: Iterable[int], edges: Iterable[tuple[int, int]],
                          target: int) -> list[tuple[int, int]]:
    """Orient undirected cables toward ``target``.

    Each cable {u, v} becomes the directed link whose head is closer to the
    target in hop count (ties broken by smaller node id being closer).  The
    resulting links strictly descend the (distance, id) key, so they form a
    DAG and every position with a path to the target can reach it.
    """
    adj: dict[int, list[int]] = {p: [] for p in positions}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for w in sorted(adj[u]):
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    if len(dist) != len(adj):
        unreached = sorted(set(adj) - set(dist))
        raise InvalidInstanceError(f"positions {unreached} cannot reach the failure site {target}")
    key = lambda p: (dist[p], p)
    out = []
    for u, v in edges:
        out.append((u, v) if key(v) < key(u) else (v, u))
    return out


def _line_family(length: int = 4, file_size: int = 4, k: int = 2) -> RepairFamily:
    positions = tuple(range(1, length + 1))
    edges = tuple((i, i + 1) for i in positions[:-1])
    return RepairFamily(name="tandem4", positions=positions, edges=edges,
                        file_size=file_size, k=k, default_failed=length)


def _grid_family(rows: int = 2, cols: int = 3, file_size: int = 8, k: int = 4) -> RepairFamily:
    # positions numbered row-major:  1 2 3 / 4 5 6
    def pid(r, c):
        return r * cols + c + 1
    positions = tuple(pid(r, c) for r in range(rows) for c in range(cols))
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((pid(r, c), pid(r, c + 1)))
            if r + 1 < rows:
                edges.append((pid(r, c), pid(r + 1, c)))
    # default failure at position 1, a corner; the choice is conventional
    return RepairFamily(name="grid2x3", positions=positions, edges=tuple(edges),
                        file_size=file_size, k=k, default_failed=1)


_FAMILIES: dict[str, Callable[[], RepairFamily]] = {
    "tandem4": _line_family,
    "grid2x3": _grid_family,
}


def builtin_family(name: str) -> RepairFamily:
    try:
        return _FAMILIES[name]()
    except KeyError:
        raise ValueError(f"unknown builtin {name!r}; have {sorted(_FAMILIES)}") from None


def builtin_instance(name: str) -> RepairInstance:
    """The canonical instance of a builtin family (its default failure)."""
    return builtin_family(name).instance()


# --- file boundary --------------------------------------------------------------

_COST_KINDS = {"linear": 1, "quadratic": 2}


def _cost_from_json(obj) -> CostFunction:
    if not isinstance(obj, dict):
        raise StructuralError("cost must be an object")
    unknown = set(obj) - {"kind", "coeffs"}
    if unknown:
        raise StructuralError(f"unknown cost fields {sorted(unknown)}")
    kind = obj.get("kind")
    if kind not in _COST_KINDS:
        raise StructuralError(f"cost kind must be one of {sorted(_COST_KINDS)}, got {kind!r}")
    coeffs = obj.get("coeffs")
    if not isinstance(coeffs, list) or len(coeffs) != _COST_KINDS[kind]:
        raise StructuralError(f"{kind} cost takes {_COST_KINDS[kind]} coefficient(s)")
    vals = [as_rational(c) for c in coeffs]
    return CostFunction.linear(vals[0]) if kind == "linear" else CostFunction.quadratic(*vals)


def instance_from_dict(obj: dict) -> RepairInstance:
    """Build an instance from the documented JSON shape, rejecting unknown fields."""
    if not isinstance(obj, dict):
        raise StructuralError("topology document must be a JSON object")
    required = {"nodes", "links", "failed", "new", "M", "k"}
    unknown = set(obj) - required - {"name"}
    if unknown:
        raise StructuralError(f"unknown topology fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise StructuralError(f"missing topology fields {sorted(missing)}")
    links, costs = [], {}
    for entry in obj["links"]:
        if not isinstance(entry, dict) or set(entry) - {"from", "to", "cost"}:
            raise StructuralError(f"bad link entry {entry!r}")
        link = (entry["from"], entry["to"])
        links.append(link)
        costs[link] = _cost_from_json(entry.get("cost", {"kind": "linear", "coeffs": [1]}))
    topo = Topology(nodes=tuple(sorted(obj["nodes"])), links=tuple(sorted(links)),
                    costs=costs, name=obj.get("name"))
    n = len(topo.nodes)
    return RepairInstance(topology=topo, failed_node=obj["failed"], new_node=obj["new"],
                          n=n, k=obj["k"], file_size=obj["M"])


def load_instance(path: str) -> RepairInstance:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"not valid JSON: {exc}") from exc
    return instance_from_dict(doc)


def instance_to_dict(instance: RepairInstance) -> dict:
    return {
        "name": instance.topology.name,
        "nodes": list(instance.topology.nodes),
        "links": [{"from": u, "to": v, "cost": instance.cost((u, v)).to_json()}
                  for u, v in instance.links],
        "failed": instance.failed_node,
        "new": instance.new_node,
        "M": instance.file_size,
        "k": instance.k,
    }
