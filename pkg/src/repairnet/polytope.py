"""Linear cut constraints equivalent to the max-flow feasibility test.

Instead of running a flow computation per candidate z, the feasible set can
be written once as a finite list of constraints: for every reader choice and
every source/reader bipartition of the flow network that severs no unbounded
edge, the links crossing the cut must together carry what the severed storage
edges cannot.  Bipartitions whose right-hand side is not positive never bind
and are dropped, as is any constraint implied by one with a smaller link set
and an equal or larger right-hand side.

The enumeration is exponential in the per-reader free vertices, which is fine
for the small control networks this targets; it refuses instances past a hard
size guard rather than grinding.
"""

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Mapping

from .flowgraph import enumerate_collectors
from .model import InvalidInstanceError, Link, RepairInstance

MAX_FREE_VERTICES = 22
MAX_TOTAL_VERTICES = 40

U, W = 0, 1  # source side, reader side


class EnumerationSizeError(ValueError):
    """Instance too large for explicit cut enumeration."""


@dataclass(frozen=True)
class CutConstraint:
    """sum(z over links) >= rhs, from one bipartition of the flow network."""

    links: tuple[Link, ...]
    rhs: Fraction

    def lhs(self, z: Mapping[Link, object]):
        total = 0
        for l in self.links:
            total = total + z[l]
        return total

    def violation(self, z: Mapping[Link, object]):
        gap = self.rhs - self.lhs(z)
        return gap if gap > 0 else 0 * gap

    def __repr__(self):
        terms = " + ".join(f"z({u},{v})" for u, v in self.links)
        return f"{terms} >= {self.rhs}"


@dataclass(frozen=True)
class Polytope:
    """All feasible repair subgraphs: cut constraints plus the box 0 <= z <= M."""

    instance: RepairInstance
    constraints: tuple[CutConstraint, ...]
    upper: Fraction

    def violation(self, z: Mapping[Link, object]):
        """(per-constraint violations, worst violation including the box)."""
        per = tuple(c.violation(z) for c in self.constraints)
        worst = max(per, default=0)
        for l in self.instance.links:
            v = z[l]
            worst = max(worst, -v, v - self.upper)
        return per, max(worst, 0)

    def contains(self, z: Mapping[Link, object], tol=0) -> bool:
        return self.violation(z)[1] <= tol

    def export_text(self) -> str:
        lines = [f"0 <= z <= {self.upper} on every link"]
        lines += [repr(c) for c in self.constraints]
        return "\n".join(lines)


def enumerate_constraints(instance: RepairInstance) -> Polytope:
    """Build the cut polytope for an instance.

    Raises EnumerationSizeError when the bipartition space is too large
    (fall back to flowgraph.is_feasible_by_flow for membership questions)
    and InvalidInstanceError when some reader choice cannot be satisfied by
    any assignment at all.
    """
    survivors = instance.survivors
    new = instance.new_node
    M = Fraction(instance.file_size)
    alpha = Fraction(instance.alpha)
    links = instance.links

    total_vertices = 3 * len(survivors) + 4
    if total_vertices > MAX_TOTAL_VERTICES:
        raise EnumerationSizeError(
            f"{total_vertices} flow vertices exceeds the enumeration guard"
            f" ({MAX_TOTAL_VERTICES}); use max-flow feasibility checks instead")

    best_rhs: dict[tuple[Link, ...], Fraction] = {}
    for dc in enumerate_collectors(instance):
        chosen = set(dc)
        outsiders = [i for i in survivors if i not in chosen]
        insiders = [j for j in dc if j != new]
        free = 2 * len(outsiders) + len(insiders) + 1
        if free > MAX_FREE_VERTICES:
            raise EnumerationSizeError(
                f"reader {dc} leaves {free} free cut vertices, past the guard"
                f" ({MAX_FREE_VERTICES}); use max-flow feasibility checks instead")

        # A bipartition is determined by: (storage-out, relay) side for each
        # survivor outside the reader set, constrained so a relay never sits
        # on the source side of its own out vertex's unbounded edge; the relay
        # side for chosen survivors (their out vertices sit with the reader);
        # and the side of the replacement node's ingress vertex.
        outsider_states = ((U, U), (W, U), (W, W))
        for combo in product(*([outsider_states] * len(outsiders)),
                             *([(U, W)] * (len(insiders) + 1))):
            out_side = {j: W for j in insiders}
            relay_side = {}
            pos = 0
            for i in outsiders:
                o, r = combo[pos]
                out_side[i] = o
                relay_side[i] = r
                pos += 1
            for j in insiders:
                relay_side[j] = combo[pos]
                pos += 1
            in_new_side = combo[pos]

            severed_storage = sum(1 for s in out_side.values() if s == W)
            if in_new_side == U:
                severed_storage += 1
            rhs = M - alpha * severed_storage
            if rhs <= 0:
                continue
            crossing = []
            for (a, b) in links:
                head = in_new_side if b == new else relay_side[b]
                if relay_side[a] == U and head == W:
                    crossing.append((a, b))
            if not crossing:
                raise InvalidInstanceError(
                    f"readers picking nodes {dc} cannot recover the file under"
                    f" any assignment; the topology starves the replacement node")
            key = tuple(sorted(crossing))
            if rhs > best_rhs.get(key, Fraction(-1)):
                best_rhs[key] = rhs

    constraints = [CutConstraint(k, r) for k, r in best_rhs.items()]
    return Polytope(instance, tuple(reduce_constraints(constraints)), M)


def reduce_constraints(constraints: list[CutConstraint]) -> list[CutConstraint]:
    """Drop constraints implied by a stronger one (subset links, >= rhs)."""
    kept = []
    for c in constraints:
        cset = set(c.links)
        dominated = any(d is not c and set(d.links) <= cset and d.rhs >= c.rhs
                        for d in constraints)
        if not dominated:
            kept.append(c)
    return sorted(kept, key=lambda c: (c.links, c.rhs))
