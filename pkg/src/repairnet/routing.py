"""Control-plane structure: who coordinates, who forwards to whom, and the
exact order partial sums combine in.

Surviving nodes coordinate over the undirected view of the usable links; the
replacement node takes no part in the control plane.  Every choice here is
deterministic: neighbor lists ascend, trees come from breadth-first search,
and in-network sums are accumulated child-by-child in ascending id order.
Fixing the float summation order is what lets a message-passing execution
reproduce the plain iteration loop bit for bit.
"""

from collections import deque

from .model import RepairInstance


def coordinator(instance: RepairInstance) -> int:
    """The node playing the master/aggregation-root role: highest surviving id."""
    return max(instance.survivors)


def control_adjacency(instance: RepairInstance) -> dict[int, tuple[int, ...]]:
    """Undirected survivor-to-survivor adjacency, ascending neighbor lists."""
    survivors = set(instance.survivors)
    adj = {v: set() for v in sorted(survivors)}
    for u, v in instance.links:
        if u in survivors and v in survivors:
            adj[u].add(v)
            adj[v].add(u)
    return {v: tuple(sorted(ns)) for v, ns in adj.items()}


def is_connected(adj: dict[int, tuple[int, ...]]) -> bool:
    if not adj:
        return True
    start = next(iter(sorted(adj)))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(adj)


def bfs_parents(adj: dict[int, tuple[int, ...]], root: int) -> dict[int, int | None]:
    """Shortest-path forest from root; parent[v] is v's first discoverer."""
    parent: dict[int, int | None] = {root: None}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                queue.append(w)
    return parent


def aggregation_tree(adj: dict[int, tuple[int, ...]], root: int) -> dict[int, tuple[int, ...]]:
    """children[v] for the BFS tree at root, covering every node.

    Nodes unreachable from the root (possible only when the control graph is
    disconnected, which the simulator refuses anyway) are grafted directly
    under the root so that aggregate totals remain well defined.
    """
    parent = bfs_parents(adj, root)
    children: dict[int, list[int]] = {v: [] for v in adj}
    for v, p in parent.items():
        if p is not None:
            children[p].append(v)
    stray = sorted(set(adj) - set(parent))
    children[root].extend(stray)
    return {v: tuple(sorted(cs)) for v, cs in children.items()}


def accumulate_up(children: dict[int, tuple[int, ...]], values: dict[int, list],
                  root: int) -> dict[int, list]:
    """Bottom-up partial sums over the tree, componentwise.

    acc[v] = values[v] + acc[child] for each child in ascending order, added
    left to right.  acc[root] is the tree-wide total.  This is the one and
    only summation order used for distributed aggregation.
    """
    acc: dict[int, list] = {}
    # iterative postorder so deep chains cannot hit the recursion limit
    stack = [(root, False)]
    while stack:
        v, expanded = stack.pop()
        if expanded:
            total = list(values[v])
            for c in children[v]:
                child_acc = acc[c]
                for j in range(len(total)):
                    total[j] = total[j] + child_acc[j]
            acc[v] = total
        else:
            stack.append((v, True))
            for c in reversed(children[v]):
                stack.append((c, False))
    return acc


def next_hops(adj: dict[int, tuple[int, ...]], target: int) -> dict[int, int]:
    """For each node, the neighbor to forward to along a shortest path to target."""
    parent = bfs_parents(adj, target)
    return {v: p for v, p in parent.items() if p is not None}


def unicast_path(adj: dict[int, tuple[int, ...]], src: int, dst: int) -> list[tuple[int, int]]:
    """Hop-by-hop (from, to) pairs for one message from src to dst."""
    if src == dst:
        return []
    hops = next_hops(adj, dst)
    path = []
    v = src
    while v != dst:
        nxt = hops[v]
        path.append((v, nxt))
        v = nxt
    return path
