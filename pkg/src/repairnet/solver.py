"""Centralized solvers for the minimum-cost repair subgraph problem.

Two independent routes are provided on purpose.  ``solve_lp`` is the exact
reference: a dense two-phase simplex over Fraction arithmetic with Bland's
rule, returning an optimal vertex (lexicographically smallest among optima,
so reruns are reproducible) together with exact dual multipliers.  It only
accepts linear link costs.  ``solve_convex`` handles any convex costs with
projected gradient descent in floats, projecting onto the cut polytope with
Dykstra's alternating-projection scheme, and never consults the simplex.
Agreement between the two on linear instances is a meaningful check, not a
tautology.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .model import Link, RepairInstance, StructuralError
from .polytope import CutConstraint, Polytope, enumerate_constraints


class InfeasibleError(ValueError):
    """The constraint system admits no point."""


class UnboundedError(ValueError):
    """The objective can be pushed to -infinity (cannot happen with a box)."""


class ConvergenceError(RuntimeError):
    """Iterative solve ran out of iterations; carries the best point seen."""

    def __init__(self, message, best_z, best_value, residual):
        super().__init__(message)
        self.best_z = best_z
        self.best_value = best_value
        self.residual = residual


# --- exact simplex ---------------------------------------------------------------

def _pivot(T, basis, row, col):
    pr = T[row]
    pv = pr[col]
    T[row] = pr = [v / pv for v in pr]
    for i, other in enumerate(T):
        if i != row and other[col]:
            f = other[col]
            T[i] = [a - f * b for a, b in zip(other, pr)]
    basis[row] = col


def _optimize(T, basis, cost, allowed):
    """Bland-rule pivoting to optimality.  T rows are [B^-1 A | B^-1 b]."""
    m = len(T)
    while True:
        cb = [cost[b] for b in basis]
        entering = -1
        for j in range(allowed):
            if j in basis:
                continue
            reduced = cost[j] - sum(cb[i] * T[i][j] for i in range(m))
            if reduced < 0:
                entering = j
                break
        if entering < 0:
            return
        leaving, best = -1, None
        for i in range(m):
            if T[i][entering] > 0:
                ratio = T[i][-1] / T[i][entering]
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leaving]):
                    leaving, best = i, ratio
        if leaving < 0:
            raise UnboundedError("objective unbounded below")
        _pivot(T, basis, leaving, entering)


def _simplex(A: Sequence[Sequence[Fraction]], b: Sequence[Fraction],
             c: Sequence[Fraction]):
    """min c.x  s.t.  Ax = b, x >= 0, exactly.

    Returns (x, basis, kept) where ``kept`` lists the indices of the input
    rows still present; redundant rows discovered in phase one are dropped.
    """
    m, n = len(A), len(A[0])
    rows, rhs = [list(r) for r in A], list(b)
    for i in range(m):
        if rhs[i] < 0:
            rows[i] = [-v for v in rows[i]]
            rhs[i] = -rhs[i]
    zero, one = Fraction(0), Fraction(1)
    T = [rows[i] + [one if j == i else zero for j in range(m)] + [rhs[i]]
         for i in range(m)]
    basis = list(range(n, n + m))
    phase1 = [zero] * n + [one] * m
    _optimize(T, basis, phase1, n + m)
    if sum(T[i][-1] for i in range(len(T)) if basis[i] >= n) > 0:
        raise InfeasibleError("constraints admit no point")
    # Zero-level artificials must not linger in the basis: a later pivot
    # could lift them off zero and quietly break the original equalities.
    # Swap each for any structural column in its row; an all-zero row is
    # redundant and goes away.
    kept = list(range(m))
    i = 0
    while i < len(T):
        if basis[i] >= n:
            col = next((j for j in range(n) if T[i][j] != 0), None)
            if col is None:
                del T[i], basis[i], kept[i]
                continue
            _pivot(T, basis, i, col)
        i += 1
    phase2 = list(c) + [zero] * m
    _optimize(T, basis, phase2, n)
    x = [zero] * n
    for i, bi in enumerate(basis):
        if bi < n:
            x[bi] = T[i][-1]
    return x, basis, kept


def _solve_square(M, rhs):
    """Exact Gaussian elimination for an invertible square system."""
    n = len(M)
    aug = [list(row) + [rhs[i]] for i, row in enumerate(M)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [v / pv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col]:
                f = aug[r][col]
                aug[r] = [a - f * e for a, e in zip(aug[r], aug[col])]
    return [aug[i][n] for i in range(n)]


def _basis_duals(A, basis, kept, c_full):
    """Row multipliers of the optimal basis: solve B^T y = c_B over kept rows."""
    B_T = [[A[i][bi] for i in kept] for bi in basis]
    c_B = [c_full[bi] for bi in basis]
    y_kept = _solve_square(B_T, c_B)
    y = [Fraction(0)] * len(A)
    for pos, i in enumerate(kept):
        y[i] = y_kept[pos]
    return y


def solve_support_lp(costs: Sequence[Fraction],
                     rows: Sequence[tuple[Sequence[int], Fraction]],
                     upper: Fraction):
    """min costs.x  s.t.  sum(x[i] for i in support) >= rhs per row, 0 <= x <= upper.

    Small exact helper shared by the per-node subproblems.  Returns
    (x, row_duals) with row duals nonnegative at optimality.
    """
    V, R = len(costs), len(rows)
    n = V + R + V
    zero, one = Fraction(0), Fraction(1)
    A, b = [], []
    for r, (support, rhs) in enumerate(rows):
        row = [zero] * n
        for i in support:
            row[i] = one
        row[V + r] = -one
        A.append(row)
        b.append(rhs)
    for i in range(V):
        row = [zero] * n
        row[i] = one
        row[V + R + i] = one
        A.append(row)
        b.append(upper)
    c_full = list(costs) + [zero] * (n - V)
    x, basis, kept = _simplex(A, b, c_full)
    y = _basis_duals(A, basis, kept, c_full)
    return x[:V], y[:R]


@dataclass(frozen=True)
class LpSolution:
    """Exact optimum: the assignment, its cost, and constraint multipliers.

    ``duals[r]`` answers for cut constraint r, ``box_duals[l]`` for the upper
    bound z_l <= M; both nonnegative, with the usual complementary slackness
    against ``z_star``.
    """

    z_star: dict
    objective: Fraction
    duals: tuple
    box_duals: dict
    status: str = "optimal"

    def dual_objective(self, polytope: Polytope) -> Fraction:
        val = sum(y * c.rhs for y, c in zip(self.duals, polytope.constraints))
        val -= polytope.upper * sum(self.box_duals.values())
        return val


def _equality_form(polytope: Polytope, links, extra_rows=()):
    """Rows over variables (z, surplus, box slack); extras pin z directly."""
    L, R = len(links), len(polytope.constraints)
    idx = {l: i for i, l in enumerate(links)}
    zero = Fraction(0)
    n = L + R + L
    A, b = [], []
    for r, cut in enumerate(polytope.constraints):
        row = [zero] * n
        for l in cut.links:
            row[idx[l]] = Fraction(1)
        row[L + r] = Fraction(-1)
        A.append(row)
        b.append(cut.rhs)
    for i in range(L):
        row = [zero] * n
        row[i] = Fraction(1)
        row[L + R + i] = Fraction(1)
        A.append(row)
        b.append(polytope.upper)
    for coeffs, rhs in extra_rows:
        row = [zero] * n
        for i, v in enumerate(coeffs):
            row[i] = v
        A.append(row)
        b.append(rhs)
    return A, b, n


def solve_lp(instance: RepairInstance, polytope: Polytope | None = None) -> LpSolution:
    """Exact minimum-cost repair subgraph for linear link costs.

    The reported point is the lexicographically smallest optimal vertex in
    sorted-link coordinate order.  Duals come from the first optimal basis;
    they pair with any optimal primal, the refined vertex included.
    """
    links = list(instance.links)
    for l in links:
        if not instance.cost(l).is_linear:
            raise StructuralError(
                f"link {l} has a {instance.cost(l).kind} cost; solve_lp is for"
                f" linear costs, use solve_convex instead")
    polytope = polytope or enumerate_constraints(instance)
    L, R = len(links), len(polytope.constraints)
    cvec = [instance.cost(l).coeffs[0] for l in links]

    A, b, n = _equality_form(polytope, links)
    c_full = cvec + [Fraction(0)] * (n - L)
    x, basis, kept = _simplex(A, b, c_full)
    objective = sum(ci * xi for ci, xi in zip(cvec, x[:L]))

    # multipliers from the optimal basis; dropped redundant rows keep zero
    y = _basis_duals(A, basis, kept, c_full)
    duals = tuple(y[:R])
    box_duals = {l: -y[R + i] for i, l in enumerate(links)}

    # refine to the lexicographically smallest optimal vertex
    pins = [(cvec, objective)]
    point = list(x[:L])
    for j in range(L):
        A2, b2, n2 = _equality_form(polytope, links, extra_rows=pins)
        ej = [Fraction(0)] * L
        ej[j] = Fraction(1)
        xj, _, _ = _simplex(A2, b2, ej + [Fraction(0)] * (n2 - L))
        point[j] = xj[j]
        pins.append((ej, xj[j]))
    z_star = {l: point[i] for i, l in enumerate(links)}
    return LpSolution(z_star=z_star, objective=objective, duals=duals,
                      box_duals=box_duals)


# --- convex route ----------------------------------------------------------------

def project_onto_polytope(polytope: Polytope, z: Mapping[Link, float],
                          inner_tol: float = 1e-13, max_sweeps: int = 500) -> dict:
    """Euclidean projection onto the cut polytope, via Dykstra's cycles.

    Alternates projections onto each halfspace and the box with correction
    terms, which converges to the exact projection for polyhedra.  Sweeps
    stop when a full cycle moves the point by at most ``inner_tol``.
    """
    links = sorted(z)
    x = [float(z[l]) for l in links]
    idx = {l: i for i, l in enumerate(links)}
    upper = float(polytope.upper)
    rows = []
    for cut in polytope.constraints:
        support = [idx[l] for l in cut.links]
        rows.append((support, float(cut.rhs), float(len(support))))
    corrections = [[0.0] * len(links) for _ in range(len(rows) + 1)]

    for _ in range(max_sweeps):
        moved = 0.0
        for r, (support, rhs, norm2) in enumerate(rows):
            corr = corrections[r]
            y = [x[i] + corr[i] for i in range(len(x))]
            slack = rhs - sum(y[i] for i in support)
            if slack > 0:
                step = slack / norm2
                new = list(y)
                for i in support:
                    new[i] = y[i] + step
            else:
                new = y
            for i in range(len(x)):
                corrections[r][i] = y[i] - new[i]
                moved = max(moved, abs(new[i] - x[i]))
                x[i] = new[i]
        corr = corrections[-1]
        y = [x[i] + corr[i] for i in range(len(x))]
        new = [min(max(v, 0.0), upper) for v in y]
        for i in range(len(x)):
            corrections[-1][i] = y[i] - new[i]
            moved = max(moved, abs(new[i] - x[i]))
            x[i] = new[i]
        if moved <= inner_tol:
            break
    return {l: x[idx[l]] for l in links}


@dataclass(frozen=True)
class ConvexSolution:
    z: dict
    objective: float
    iterations: int
    residual: float
    status: str = "optimal"


def _gradient(instance, links, z):
    return {l: float(instance.cost(l).derivative(z[l])) for l in links}


def _objective_value(instance, links, z) -> float:
    return float(sum(float(instance.cost(l).value(z[l])) for l in links))


def solve_convex(instance: RepairInstance, polytope: Polytope | None = None,
                 tol: float = 1e-8, max_iters: int = 60000) -> ConvexSolution:
    """Projected gradient descent for convex link costs.

    Quadratic instances use the fixed safe step 1/L; linear ones start at
    M / (2 max c) and halve the step whenever a stretch of iterations stops
    improving, which squeezes the iterate into the optimal face.  Stops when
    the fixed-point residual |z - P(z - grad)| falls below ``tol``.  With
    tol=inf the start point M*1 is returned untouched, which is always
    feasible.  Runs out of iterations -> ConvergenceError with the best z.
    """
    polytope = polytope or enumerate_constraints(instance)
    links = list(instance.links)
    M = float(polytope.upper)
    z = {l: M for l in links}

    quads = [2.0 * float(instance.cost(l).coeffs[0]) for l in links
             if instance.cost(l).kind == "quadratic" and instance.cost(l).coeffs[0] > 0]
    if any(instance.cost(l).kind == "custom" for l in links):
        # no coefficients to inspect; a conservative small step
        step = M / 64.0
        adaptive = True
    elif quads:
        step = 1.0 / max(quads)
        adaptive = False
    else:
        cmax = max(float(instance.cost(l).coeffs[0]) for l in links) or 1.0
        step = M / (2.0 * cmax)
        adaptive = True

    def residual_at(point):
        g = _gradient(instance, links, point)
        probe = {l: point[l] - g[l] for l in links}
        proj = project_onto_polytope(polytope, probe)
        return max(abs(proj[l] - point[l]) for l in links)

    best_val = _objective_value(instance, links, z)
    best_z = dict(z)
    res = residual_at(z)
    if res <= tol:
        return ConvexSolution(z=z, objective=best_val, iterations=0, residual=res)

    stall, window = 0, 20
    for it in range(1, max_iters + 1):
        g = _gradient(instance, links, z)
        z = project_onto_polytope(polytope, {l: z[l] - step * g[l] for l in links})
        val = _objective_value(instance, links, z)
        if val < best_val - 1e-15:
            best_val, best_z, stall = val, dict(z), 0
        else:
            stall += 1
            if adaptive and stall >= window:
                step *= 0.5
                stall = 0
        if it % 10 == 0 or stall == 0:
            res = residual_at(z)
            if res <= tol:
                return ConvexSolution(z=z, objective=val, iterations=it, residual=res)
        if adaptive and step < 1e-18:
            break
    res = residual_at(best_z)
    if res <= tol:
        return ConvexSolution(z=best_z, objective=best_val, iterations=max_iters,
                              residual=res)
    raise ConvergenceError(
        f"no convergence to tol={tol} within {max_iters} iterations"
        f" (best residual {res:.3g})", best_z, best_val, res)
