"""Random linear storage codes over GF(q) and their repair along a subgraph.

A file of M fragments lives on n nodes as coefficient matrices: node i keeps
an M x alpha matrix Q_i whose columns say which linear mix of the original
fragments each stored symbol is.  Any k nodes together must span the whole
fragment space; that spanning property is what check_rcp verifies and what a
repair must preserve.

Repair walks the chosen subgraph in topological order.  Every sender mixes
all columns it holds, storage and anything already received this stage, with
fresh random coefficients, so relays genuinely recode rather than forward.
The replacement node finally compresses what reached it into alpha columns.
Everything is exact integer arithmetic in the field; failures are
deterministic replays of the rng that produced them.
"""

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from .flowgraph import is_feasible_by_flow
from .model import RepairInstance, StructuralError, Subgraph

# Smallest-by-value irreducible polynomial of each degree, bit-encoded with
# the leading term (x^2 + x + 1 -> 0b111).  Fixed table so every run of every
# version agrees on what GF(2^m) means.
IRREDUCIBLE = {
    2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x83, 8: 0x11B,
    9: 0x203, 10: 0x409, 11: 0x805, 12: 0x1009, 13: 0x201B, 14: 0x4021,
    15: 0x8003, 16: 0x1002B,
}


class CodingError(Exception):
    """A randomized coding step failed verification; carries forensics."""

    def __init__(self, message, state=None, subset=None):
        super().__init__(message)
        self.state = state
        self.subset = subset


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class FieldSpec:
    """One concrete finite field: a prime order or 2^m with a fixed polynomial."""

    q: int
    m: int = 0          # 0 for prime fields, the extension degree otherwise
    poly: int = 0       # reduction polynomial for binary fields

    @classmethod
    def prime(cls, p: int) -> "FieldSpec":
        if not _is_prime(p):
            raise StructuralError(f"{p} is not prime")
        return cls(q=p)

    @classmethod
    def binary(cls, m: int) -> "FieldSpec":
        if m == 1:
            return cls(q=2)
        if m not in IRREDUCIBLE:
            raise StructuralError(f"no fixed polynomial for GF(2^{m});"
                                  f" supported degrees are 1..16")
        return cls(q=1 << m, m=m, poly=IRREDUCIBLE[m])

    @classmethod
    def of_order(cls, q: int) -> "FieldSpec":
        """Field of the given order: a prime, or a power of two up to 2^16."""
        if q >= 4 and q & (q - 1) == 0:
            return cls.binary(q.bit_length() - 1)
        return cls.prime(q)

    @property
    def is_binary(self) -> bool:
        return self.m > 0 or self.q == 2

    def __str__(self) -> str:
        return f"GF(2^{self.m})" if self.m else f"GF({self.q})"

    # --- arithmetic ---

    def add(self, a: int, b: int) -> int:
        return a ^ b if self.is_binary else (a + b) % self.q

    def sub(self, a: int, b: int) -> int:
        return a ^ b if self.is_binary else (a - b) % self.q

    def neg(self, a: int) -> int:
        return a if self.is_binary else (-a) % self.q

    def mul(self, a: int, b: int) -> int:
        if not self.m:
            return a * b % self.q
        if a == 0 or b == 0:
            return 0
        log, exp = _binary_tables(self.m, self.poly)
        return exp[(log[a] + log[b]) % (self.q - 1)]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError(f"no inverse of 0 in {self}")
        if not self.m:
            return pow(a, self.q - 2, self.q)
        log, exp = _binary_tables(self.m, self.poly)
        return exp[(self.q - 1 - log[a]) % (self.q - 1)]


def _clmul(a: int, b: int, poly: int, m: int) -> int:
    """Carry-less multiply with on-the-fly reduction; both inputs < 2^m."""
    acc = 0
    while b:
        if b & 1:
            acc ^= a
        b >>= 1
        a <<= 1
        if a >> m:
            a ^= poly
    return acc


_TABLE_CACHE: dict = {}


def _binary_tables(m: int, poly: int):
    """log/exp tables for GF(2^m), built once per field from a generator."""
    key = (m, poly)
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    q = 1 << m
    for g in range(2, q):
        exp = [1] * (q - 1)
        x = 1
        ok = True
        for p in range(1, q - 1):
            x = _clmul(x, g, poly, m)
            if x == 1:       # order of g divides p: not a generator
                ok = False
                break
            exp[p] = x
        if ok:
            log = [0] * q
            for p, v in enumerate(exp):
                log[v] = p
            _TABLE_CACHE[key] = (log, exp)
            return log, exp
    raise StructuralError(f"no generator found for GF(2^{m}); bad polynomial?")


# --- linear algebra over a field ------------------------------------------------


def matrix_rank(spec: FieldSpec, rows: list[list[int]]) -> int:
    a = [list(r) for r in rows]
    nrows = len(a)
    ncols = len(a[0]) if nrows else 0
    rank = 0
    for col in range(ncols):
        pivot = next((r for r in range(rank, nrows) if a[r][col]), None)
        if pivot is None:
            continue
        a[rank], a[pivot] = a[pivot], a[rank]
        inv = spec.inv(a[rank][col])
        for r in range(nrows):
            if r != rank and a[r][col]:
                f = spec.mul(a[r][col], inv)
                a[r] = [spec.sub(x, spec.mul(f, y)) for x, y in zip(a[r], a[rank])]
        rank += 1
        if rank == nrows:
            break
    return rank


def matrix_det(spec: FieldSpec, rows: list[list[int]]) -> int:
    a = [list(r) for r in rows]
    n = len(a)
    det = 1
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col]), None)
        if pivot is None:
            return 0
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
            det = spec.neg(det)
        det = spec.mul(det, a[col][col])
        inv = spec.inv(a[col][col])
        for r in range(col + 1, n):
            if a[r][col]:
                f = spec.mul(a[r][col], inv)
                a[r] = [spec.sub(x, spec.mul(f, y)) for x, y in zip(a[r], a[col])]
    return det


def solve_linear(spec: FieldSpec, rows: list[list[int]], rhs: list[int]) -> list[int]:
    """Solve A x = rhs for square nonsingular A over the field."""
    n = len(rows)
    a = [list(r) + [v] for r, v in zip(rows, rhs)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col]), None)
        if pivot is None:
            raise StructuralError("singular system")
        a[col], a[pivot] = a[pivot], a[col]
        inv = spec.inv(a[col][col])
        a[col] = [spec.mul(inv, x) for x in a[col]]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [spec.sub(x, spec.mul(f, y)) for x, y in zip(a[r], a[col])]
    return [a[r][n] for r in range(n)]


def _random_vector(spec: FieldSpec, length: int, rng: random.Random) -> list[int]:
    return [rng.randrange(spec.q) for _ in range(length)]


def _combine(spec: FieldSpec, columns: list[list[int]], coeffs: list[int]) -> list[int]:
    out = [0] * len(columns[0])
    for c, col in zip(coeffs, columns):
        if c:
            for j, v in enumerate(col):
                out[j] = spec.add(out[j], spec.mul(c, v))
    return out


# --- stored state -----------------------------------------------------------------


@dataclass(frozen=True)
class NodeStorage:
    """What one node keeps: an M x alpha coefficient matrix, column per symbol."""

    node: int
    Q: tuple[tuple[int, ...], ...]   # M rows, alpha columns

    @property
    def columns(self) -> list[list[int]]:
        return [[row[c] for row in self.Q] for c in range(len(self.Q[0]))]


@dataclass
class SystemState:
    """All nodes' storage plus the parameters they were coded for."""

    nodes: dict[int, NodeStorage]
    M: int
    k: int
    field: FieldSpec
    history: list = field(default_factory=list)

    @property
    def alpha(self) -> int:
        return self.M // self.k

    def validate(self) -> None:
        a = self.alpha
        for i, st in self.nodes.items():
            if len(st.Q) != self.M or any(len(r) != a for r in st.Q):
                raise StructuralError(
                    f"node {i} stores a {len(st.Q)}x{len(st.Q[0]) if st.Q else 0}"
                    f" matrix; expected {self.M}x{a}")


def _storage_from_columns(node: int, M: int, cols: list[list[int]]) -> NodeStorage:
    Q = tuple(tuple(col[r] for col in cols) for r in range(M))
    return NodeStorage(node=node, Q=Q)


def check_rcp(state: SystemState, k: int | None = None):
    """Can every k-subset of nodes rebuild the file?

    Returns (True, None) or (False, first_failing_subset), subsets in
    ascending id order.
    """
    k = state.k if k is None else k
    ids = sorted(state.nodes)
    M = state.M
    for subset in combinations(ids, k):
        rows = [[v for i in subset for v in state.nodes[i].Q[r]] for r in range(M)]
        if matrix_rank(state.field, rows) < M:
            return False, subset
    return True, None


def rcp_by_determinants(state: SystemState, k: int | None = None):
    """Same verdict as check_rcp through the product of subset determinants.

    Every k-subset concatenation is square (k * alpha = M), so the property
    holds exactly when no subset determinant vanishes, i.e. when the product
    of all of them is nonzero.
    """
    k = state.k if k is None else k
    ids = sorted(state.nodes)
    M = state.M
    product = 1
    failing = None
    for subset in combinations(ids, k):
        rows = [[v for i in subset for v in state.nodes[i].Q[r]] for r in range(M)]
        d = matrix_det(state.field, rows)
        product = state.field.mul(product, d)
        if d == 0 and failing is None:
            failing = subset
    return (product != 0), failing


def distribute(M: int, n: int, k: int, spec: FieldSpec, rng: random.Random,
               retries: int = 64) -> SystemState:
    """Fill n nodes (ids 1..n) with i.i.d. uniform coefficient columns.

    Redraws everything until the spanning property holds; over small fields
    a redraw is genuinely needed now and then, over GF(2^16) essentially
    never.
    """
    if k < 1 or k > n:
        raise StructuralError(f"need 1 <= k <= n, got k={k} n={n}")
    if M % k:
        raise StructuralError(f"file size {M} is not a multiple of k={k}")
    alpha = M // k
    for attempt in range(1, retries + 1):
        nodes = {}
        for i in range(1, n + 1):
            cols = [_random_vector(spec, M, rng) for _ in range(alpha)]
            nodes[i] = _storage_from_columns(i, M, cols)
        state = SystemState(nodes=nodes, M=M, k=k, field=spec)
        ok, _ = check_rcp(state)
        if ok:
            state.history.append({"event": "distribute", "attempts": attempt})
            return state
    raise CodingError(f"no spanning assignment over {spec} after {retries} draws")


def _support_topo_order(links: list, zc: dict) -> list[int]:
    """Kahn's ordering of the support DAG, smallest node id first."""
    used = [l for l in links if zc[l] > 0]
    nodes = sorted({u for u, _ in used} | {v for _, v in used})
    indeg = {v: 0 for v in nodes}
    out = {v: [] for v in nodes}
    for u, v in used:
        indeg[v] += 1
        out[u].append(v)
    ready = sorted(v for v in nodes if indeg[v] == 0)
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for v in sorted(out[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
        ready.sort()
    return order


def repair(state: SystemState, failed: int, z: Subgraph, instance: RepairInstance,
           spec: FieldSpec, rng: random.Random) -> SystemState:
    """Regenerate the replacement node by recoding along the subgraph.

    Fragment counts are the link values rounded up.  Senders go in
    topological order; each outgoing link carries fresh random mixes of the
    sender's storage plus everything the sender received earlier this stage.
    The new node keeps alpha mixes of its intake.  The returned state has
    been re-verified; on verification failure the same exception carries the
    offending state for replay.
    """
    if spec != state.field:
        raise StructuralError(f"state is coded over {state.field}, not {spec}")
    if failed != instance.failed_node:
        raise StructuralError(
            f"instance repairs node {instance.failed_node}, not {failed}")
    if not is_feasible_by_flow(instance, dict(z.items())):
        raise StructuralError("subgraph moves too little data to rebuild the"
                              " file; refusing to code over it")
    state.validate()

    zc = {l: math.ceil(v) for l, v in z.items()}
    new = instance.new_node
    alpha = state.M // instance.k
    received: dict[int, list[list[int]]] = {}

    for u in _support_topo_order(list(instance.links), zc):
        if u == new:
            continue
        pool = state.nodes[u].columns + received.get(u, [])
        for (a, b) in sorted(l for l in instance.links if l[0] == u and zc[l] > 0):
            for _ in range(zc[(a, b)]):
                coeffs = _random_vector(spec, len(pool), rng)
                received.setdefault(b, []).append(_combine(spec, pool, coeffs))

    intake = received.get(new, [])
    if len(intake) < 1:
        raise StructuralError("no fragments reach the replacement node")
    new_cols = []
    for _ in range(alpha):
        coeffs = _random_vector(spec, len(intake), rng)
        new_cols.append(_combine(spec, intake, coeffs))

    nodes = {i: state.nodes[i] for i in instance.survivors}
    nodes[new] = _storage_from_columns(new, state.M, new_cols)
    out = SystemState(nodes=nodes, M=state.M, k=instance.k, field=spec,
                      history=list(state.history))
    out.history.append({
        "event": "repair", "failed": failed, "new": new,
        "fragments": {l: c for l, c in sorted(zc.items()) if c > 0},
        "intake": tuple(tuple(col) for col in intake),
    })
    ok, subset = check_rcp(out)
    if not ok:
        raise CodingError(
            f"spanning property lost after repairing {failed}->{new}: nodes"
            f" {subset} no longer rebuild the file", state=out, subset=subset)
    return out


def compute_n_nc(instance: RepairInstance, z) -> int:
    """Most coding nodes on any used path into the replacement node.

    Counts the originating survivor, every recoding relay, and the
    replacement itself; a direct survivor-to-replacement hop gives 2.
    """
    items = z.items() if hasattr(z, "items") else z
    zc = {l: math.ceil(v) for l, v in dict(items).items()}
    used = [l for l in instance.links if zc.get(l, 0) > 0]
    if not used:
        raise StructuralError("empty subgraph: nothing flows, no paths to rate")
    depth: dict[int, int] = {}
    for u in _support_topo_order(list(instance.links), {l: zc.get(l, 0) for l in instance.links}):
        depth.setdefault(u, 1)
        for (a, b) in used:
            if a == u:
                depth[b] = max(depth.get(b, 1), depth[u] + 1)
    if instance.new_node not in depth:
        raise StructuralError("no used path reaches the replacement node")
    return depth[instance.new_node]


def field_size_bound(n: int, k: int, M: int, n_nc: int) -> int:
    """Sufficient field order for random repair: C(n,k) * M * n_nc."""
    return math.comb(n, k) * M * n_nc


# --- whole-file checks used by tests and the soak driver --------------------------


def project_file(state: SystemState, s: list[int]) -> dict[int, list[int]]:
    """What each node physically stores for file vector s: Q_i transposed times s."""
    spec = state.field
    out = {}
    for i, st in state.nodes.items():
        out[i] = [
            _dot(spec, col, s) for col in st.columns
        ]
    return out


def _dot(spec: FieldSpec, a: list[int], b: list[int]) -> int:
    acc = 0
    for x, y in zip(a, b):
        acc = spec.add(acc, spec.mul(x, y))
    return acc


def reconstruct_file(state: SystemState, subset, stored: dict[int, list[int]]) -> list[int]:
    """Recover s from the k chosen nodes' stored values by solving the system."""
    rows = []
    rhs = []
    for i in subset:
        for c, col in enumerate(state.nodes[i].columns):
            rows.append(col)
            rhs.append(stored[i][c])
    return solve_linear(state.field, rows, rhs)


def multi_stage_soak(family, stages: int, spec: FieldSpec, rng: random.Random,
                     solver=None) -> list[dict]:
    """Fail, re-solve, repair, verify; repeat.  One report row per stage.

    Node ids are never reused: the replacement for position p takes a fresh
    id and inherits p's role for later stages.  Every stage runs from its own
    recorded seed so any failure replays exactly.  A failed verification is
    recorded and the soak moves on.
    """
    from .solver import solve_lp   # local import: solver pulls no coding code

    if stages < 1:
        raise StructuralError("need at least one stage")
    solve = solver or (lambda inst: solve_lp(inst).z_star)
    positions = sorted(family.positions)
    ids = {p: p for p in positions}
    n = len(positions)
    state = distribute(family.file_size, n, family.k, spec, rng)
    report = []
    for stage in range(1, stages + 1):
        failed_pos = positions[rng.randrange(n)]
        failed_id = ids[failed_pos]
        new_id = max(ids.values()) + 1
        inst = family.instance(failed_pos, ids=ids, new_id=new_id)
        z_star = solve(inst)
        sub = z_star if isinstance(z_star, Subgraph) else Subgraph(inst.links, z_star)
        cost = sum(Fraction(inst.cost(l).value(v)) for l, v in sub.items())
        seed = rng.randrange(2 ** 32)
        stage_rng = random.Random(seed)
        try:
            state = repair(state, failed_id, sub, inst, spec, stage_rng)
            passed = True
        except CodingError as err:
            state = err.state          # keep going on the broken state
            passed = False
        ids[failed_pos] = new_id
        report.append({"stage": stage, "failed_node": failed_id,
                       "cost": cost, "rcp_pass": passed, "seed": seed})
    return report


# --- plain-text state snapshots ----------------------------------------------------


def save_state(state: SystemState) -> str:
    """Hex dump: header line, then one 'node <id>' block with M rows each."""
    width = max(1, (state.field.q - 1).bit_length() + 3 >> 2)
    lines = [f"field {state.field.q} M {state.M} k {state.k}"]
    for i in sorted(state.nodes):
        lines.append(f"node {i}")
        for row in state.nodes[i].Q:
            lines.append(" ".join(format(v, f"0{width}x") for v in row))
    return "\n".join(lines) + "\n"


def load_state(text: str) -> SystemState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 6 or head[0] != "field" or head[2] != "M" or head[4] != "k":
        raise StructuralError(f"bad snapshot header {lines[0]!r}")
    q, M, k = int(head[1]), int(head[3]), int(head[5])
    spec = FieldSpec.of_order(q)
    nodes = {}
    pos = 1
    while pos < len(lines):
        tag = lines[pos].split()
        if len(tag) != 2 or tag[0] != "node":
            raise StructuralError(f"expected 'node <id>', got {lines[pos]!r}")
        node = int(tag[1])
        rows = []
        for r in range(M):
            rows.append(tuple(int(v, 16) for v in lines[pos + 1 + r].split()))
        nodes[node] = NodeStorage(node=node, Q=tuple(rows))
        pos += 1 + M
    state = SystemState(nodes=nodes, M=M, k=k, field=spec)
    state.validate()
    return state
