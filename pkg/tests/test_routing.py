"""Deterministic control-plane structure: roots, trees, summation order."""

from repairnet.routing import (
    accumulate_up,
    aggregation_tree,
    bfs_parents,
    control_adjacency,
    coordinator,
    is_connected,
    next_hops,
    unicast_path,
)


def test_coordinator_is_highest_survivor(tandem, grid):
    assert coordinator(tandem) == 3
    assert coordinator(grid) == 6


def test_control_adjacency_excludes_replacement(tandem):
    adj = control_adjacency(tandem)
    assert adj == {1: (2,), 2: (1, 3), 3: (2,)}
    assert tandem.new_node not in adj


def test_control_adjacency_is_undirected(grid):
    adj = control_adjacency(grid)
    for u, ns in adj.items():
        for v in ns:
            assert u in adj[v]


def test_is_connected():
    assert is_connected({})
    assert is_connected({1: (2,), 2: (1,)})
    assert not is_connected({1: (), 2: (3,), 3: (2,)})


def test_bfs_parents_chain(tandem):
    adj = control_adjacency(tandem)
    assert bfs_parents(adj, 3) == {3: None, 2: 3, 1: 2}


def test_aggregation_tree_covers_survivors(grid):
    adj = control_adjacency(grid)
    root = coordinator(grid)
    children = aggregation_tree(adj, root)
    assert set(children) == set(adj)
    # a spanning tree on s nodes has s-1 edges
    assert sum(len(cs) for cs in children.values()) == len(adj) - 1
    for cs in children.values():
        assert cs == tuple(sorted(cs))


def test_aggregation_tree_grafts_unreachable_under_root():
    children = aggregation_tree({1: (), 2: ()}, 1)
    assert children[1] == (2,)


def test_accumulate_up_totals(tandem):
    adj = control_adjacency(tandem)
    children = aggregation_tree(adj, 3)
    acc = accumulate_up(children, {1: [1.0, 10.0], 2: [2.0, 20.0], 3: [3.0, 30.0]}, 3)
    assert acc[3] == [6.0, 60.0]
    assert acc[1] == [1.0, 10.0]


def test_accumulate_up_child_order_is_ascending():
    """The summation order is pinned: own value, then children low id first.

    The values are chosen so float addition in any other order gives a
    different answer, which is exactly what reproducibility depends on.
    """
    children = {3: (1, 2), 1: (), 2: ()}
    values = {3: [0.1], 1: [0.7], 2: [0.3]}
    acc = accumulate_up(children, values, 3)
    assert acc[3] == [(0.1 + 0.7) + 0.3]      # 1.0999999999999999
    assert acc[3] != [(0.1 + 0.3) + 0.7]      # 1.1 under the swapped order


def test_next_hops_point_toward_target(tandem):
    adj = control_adjacency(tandem)
    assert next_hops(adj, 3) == {2: 3, 1: 2}


def test_unicast_path(tandem, grid):
    adj = control_adjacency(tandem)
    assert unicast_path(adj, 1, 3) == [(1, 2), (2, 3)]
    assert unicast_path(adj, 3, 3) == []

    gadj = control_adjacency(grid)
    parent = bfs_parents(gadj, 6)
    for src in gadj:
        path = unicast_path(gadj, src, 6)
        # hop count equals BFS depth
        depth = 0
        v = src
        while parent[v] is not None:
            depth += 1
            v = parent[v]
        assert len(path) == depth
        if path:
            assert path[0][0] == src and path[-1][1] == 6
