"""Cut-constraint enumeration against frozen expectations and the flow oracle."""

import random
from fractions import Fraction

import pytest

import repairnet.polytope as polytope_mod
from repairnet.flowgraph import is_feasible_by_flow
from repairnet.model import CostFunction, RepairInstance, StructuralError, Topology
from repairnet.polytope import (
    CutConstraint,
    EnumerationSizeError,
    Polytope,
    enumerate_constraints,
    reduce_constraints,
)

from conftest import random_instance


def as_sets(polytope):
    return {(c.links, c.rhs) for c in polytope.constraints}


def test_tandem_constraints_frozen(tandem):
    P = enumerate_constraints(tandem)
    assert as_sets(P) == {
        (((2, 3),), Fraction(2)),
        (((3, 5),), Fraction(2)),
    }
    assert P.upper == 4


def test_grid_constraints_frozen(grid):
    P = enumerate_constraints(grid)
    assert as_sets(P) == {
        (((2, 7),), Fraction(2)),
        (((3, 2), (4, 7)), Fraction(2)),
        (((3, 2), (5, 2), (5, 4)), Fraction(2)),
        (((3, 2), (6, 5)), Fraction(2)),
        (((4, 7), (5, 2)), Fraction(2)),
        (((4, 7), (6, 3), (6, 5)), Fraction(2)),
        (((5, 2), (5, 4), (6, 3)), Fraction(2)),
    }
    assert P.upper == 8


def test_reduction_removes_dominated_rows():
    l1, l2, l3 = (1, 9), (2, 9), (3, 9)
    a = CutConstraint((l1,), Fraction(2))
    b = CutConstraint((l1, l2), Fraction(2))      # implied by a
    c = CutConstraint((l1, l2), Fraction(3))      # stronger, survives
    d = CutConstraint((l2,), Fraction(1))
    e = CutConstraint((l1, l2, l3), Fraction(3))  # implied by c
    kept = reduce_constraints([a, b, c, d, e])
    assert set(kept) == {a, c, d}
    assert kept == sorted(kept, key=lambda x: (x.links, x.rhs))


def test_tandem_raw_enumeration_has_dominated_pair(tandem, monkeypatch):
    """Without reduction the two-link diagonal cut shows up, then dies."""
    monkeypatch.setattr(polytope_mod, "reduce_constraints", lambda cs: cs)
    raw = enumerate_constraints(tandem)
    raw_sets = as_sets(raw)
    assert (((1, 2), (3, 5)), Fraction(2)) in raw_sets
    monkeypatch.undo()
    assert (((1, 2), (3, 5)), Fraction(2)) not in as_sets(enumerate_constraints(tandem))


def test_membership_matches_flow_feasibility():
    rng = random.Random(12)
    for _ in range(25):
        inst = random_instance(rng)
        P = enumerate_constraints(inst)
        M = inst.file_size
        for _ in range(8):
            z = {l: Fraction(rng.randrange(0, 2 * M + 1), 2) for l in inst.links}
            assert P.contains(z) == is_feasible_by_flow(inst, z), (inst, z)


def test_violation_reports_box_breaches(tandem):
    P = enumerate_constraints(tandem)
    z = {(1, 2): Fraction(-1), (2, 3): Fraction(4), (3, 5): Fraction(4)}
    per, worst = P.violation(z)
    assert all(v == 0 for v in per)
    assert worst == 1
    z[(1, 2)] = Fraction(9)
    assert P.violation(z)[1] == 5  # 9 exceeds the box upper bound M=4


def test_worst_violation_is_largest_shortfall(grid):
    P = enumerate_constraints(grid)
    z = {l: Fraction(0) for l in grid.links}
    per, worst = P.violation(z)
    assert worst == 2
    assert set(per) == {Fraction(2)}


def chain_instance(survivor_count):
    survivors = list(range(1, survivor_count + 1))
    failed = survivor_count + 1
    new = survivor_count + 2
    links = [(a, a + 1) for a in survivors[:-1]] + [(survivors[-1], new)]
    costs = {l: CostFunction.linear(1) for l in links}
    topo = Topology(nodes=tuple(survivors + [new]), links=tuple(links), costs=costs)
    return RepairInstance(topology=topo, failed_node=failed, new_node=new,
                          n=survivor_count + 1, k=2, file_size=2)


def test_free_vertex_guard_trips():
    with pytest.raises(EnumerationSizeError, match="free cut vertices"):
        enumerate_constraints(chain_instance(12))


def test_total_vertex_guard_trips():
    with pytest.raises(EnumerationSizeError, match="enumeration guard"):
        enumerate_constraints(chain_instance(13))


def test_export_text_lists_every_row(tandem):
    text = enumerate_constraints(tandem).export_text()
    lines = text.splitlines()
    assert lines[0] == "0 <= z <= 4 on every link"
    assert "z(2,3) >= 2" in lines and "z(3,5) >= 2" in lines
