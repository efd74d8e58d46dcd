import random
import sys

import pytest


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance battery's PASS/FAIL lines after the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)

from repairnet.model import (
    CostFunction,
    InvalidInstanceError,
    RepairInstance,
    StructuralError,
    Topology,
    builtin_instance,
)


@pytest.fixture
def tandem():
    return builtin_instance("tandem4")


@pytest.fixture
def grid():
    return builtin_instance("grid2x3")


def random_instance(rng: random.Random, quadratic: bool = False) -> RepairInstance:
    """A small random post-failure network that passes validation.

    Survivors are 1..n-1, the failed node is n, the replacement n+1.
    Survivor links only run low id to high id, which keeps the link set
    acyclic by construction; connectivity is patched up with a chain.
    """
    for _ in range(200):
        n = rng.choice([3, 4, 5])
        k = rng.randrange(1, n)
        file_size = k * rng.choice([1, 2])
        survivors = list(range(1, n))
        new = n + 1
        links = set()
        for i, u in enumerate(survivors):
            for v in survivors[i + 1:]:
                if rng.random() < 0.5:
                    links.add((u, v))
        for u in survivors:
            if rng.random() < 0.6:
                links.add((u, new))
        if not any(v == new for _, v in links):
            links.add((rng.choice(survivors), new))
        # splice in a chain so the undirected view is connected
        spine = survivors + [new]
        for a, b in zip(spine, spine[1:]):
            if not ({(a, b), (b, a)} & links):
                links.add((a, b))
        costs = {}
        for l in links:
            if quadratic:
                costs[l] = CostFunction.quadratic(rng.choice([1, 2]), rng.choice([0, 1]))
            else:
                costs[l] = CostFunction.linear(rng.choice([1, 2, 3]))
        try:
            topo = Topology(nodes=tuple(survivors + [new]),
                            links=tuple(sorted(links)), costs=costs)
            return RepairInstance(topology=topo, failed_node=n, new_node=new,
                                  n=n, k=k, file_size=file_size)
        except (StructuralError, InvalidInstanceError):
            continue
    raise AssertionError("could not draw a valid random instance in 200 tries")
