"""Dense linear programming and binary branch-and-bound.

:func:`solve_lp` is a bounded-variable two-phase primal simplex working on
a dense tableau.  :func:`solve_milp` runs best-first branch-and-bound on LP
relaxations for problems whose integer variables are all binary.  Both are
sized for the few-thousand-column problems of subcarrier assignment.
"""

from __future__ import annotations

import enum
import heapq
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .netmodel import ContractError

__all__ = [
    'Status',
    'LinearProgram',
    'MilpProblem',
    'MilpSolution',
    'solve_lp',
    'solve_milp',
    'dump_problem',
]


class Status(str, enum.Enum):
    OPTIMAL = 'Optimal'
    INFEASIBLE = 'Infeasible'
    UNBOUNDED = 'Unbounded'
    ITERATION_LIMIT = 'IterationLimit'


def _as_matrix(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n))
    return A


@dataclass
class LinearProgram:
    """``max c.x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lb <= x <= ub``.

    Lower bounds must be finite; upper bounds may be ``inf``.  Bounds default
    to ``[0, inf)``.
    """

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub = _as_matrix(self.A_ub, n)
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_ub = np.asarray(self.b_ub if self.b_ub is not None else [],
                               dtype=float).ravel()
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [],
                               dtype=float).ravel()
        self.lb = (np.zeros(n) if self.lb is None
                   else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy())
        self.ub = (np.full(n, np.inf) if self.ub is None
                   else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy())
        if self.A_ub.shape != (self.b_ub.size, n):
            raise ContractError('A_ub and b_ub dimensions disagree')
        if self.A_eq.shape != (self.b_eq.size, n):
            raise ContractError('A_eq and b_eq dimensions disagree')
        if not np.all(np.isfinite(self.lb)):
            raise ContractError('lower bounds must be finite')
        if np.any(self.lb > self.ub):
            raise ContractError('lower bound above upper bound')

    @property
    def n(self) -> int:
        return self.c.size

    def residual(self, x) -> float:
        """Largest constraint or bound violation of ``x``."""
        x = np.asarray(x, float)
        viol = [0.0]
        if self.b_ub.size:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if self.b_eq.size:
            viol.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        viol.append(float(np.max(self.lb - x, initial=0.0)))
        viol.append(float(np.max(x - self.ub, initial=0.0)))
        return max(viol)


@dataclass
class MilpProblem:
    """A linear program plus the indices of variables restricted to {0, 1}.

    ``groups`` optionally labels every variable with a choose-at-most-one
    group id (``-1`` for none); it is only used by group branching.
    """

    lp: LinearProgram
    binary: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        self.binary = np.asarray(self.binary, dtype=np.int64).ravel()
        if self.binary.size and (self.binary.min() < 0
                                 or self.binary.max() >= self.lp.n):
            raise ContractError('binary index out of range')
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64).ravel()
            if self.groups.size != self.lp.n:
                raise ContractError('groups must label every variable')
        # binaries live in [0, 1] whatever bounds the caller gave
        self.lp.lb[self.binary] = np.maximum(self.lp.lb[self.binary], 0.0)
        self.lp.ub[self.binary] = np.minimum(self.lp.ub[self.binary], 1.0)


@dataclass
class MilpSolution:
    status: Status
    x: Optional[np.ndarray]
    objective: float
    nodes: int = 0
    lp_iterations: int = 0
    dual_bound: float = np.nan

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# ----------------------------------------------------------------------------
# Simplex
# ----------------------------------------------------------------------------

@njit(cache=True)
def _pivot(T, basis, r, j):
    m, n = T.shape
    piv = T[r, j]
    for k in range(n):
        T[r, k] /= piv
    for i in range(m):
        if i != r:
            f = T[i, j]
            if f != 0.0:
                for k in range(n):
                    T[i, k] -= f * T[r, k]
    basis[r] = j


@njit(cache=True)
def _simplex(T, beta, u, basis, at_upper, c, max_iters, iters, tol):
    """Maximize ``c`` from the basic feasible solution held in the tableau.

    Returns ``(state, iterations)`` with state 0 optimal, 1 unbounded,
    2 iteration limit.
    """
    m, n = T.shape
    d = c.copy()
    for i in range(m):
        cb = c[basis[i]]
        if cb != 0.0:
            for k in range(n):
                d[k] -= cb * T[i, k]
    streak = 0
    bland = False
    while True:
        if iters >= max_iters:
            return 2, iters
        for i in range(m):
            d[basis[i]] = 0.0
        j = -1
        best = 0.0
        for k in range(n):
            if (d[k] > tol and not at_upper[k]) or (d[k] < -tol and at_upper[k]):
                if bland:
                    j = k
                    break
                if abs(d[k]) > best:
                    best = abs(d[k])
                    j = k
        if j < 0:
            return 0, iters
        direction = -1.0 if at_upper[j] else 1.0
        theta = u[j]
        r = -1
        r_upper = False
        best_piv = 0.0
        for i in range(m):
            a = direction * T[i, j]
            lim = np.inf
            up = False
            if a > tol:
                lim = beta[i] / a
            elif a < -tol:
                ub = u[basis[i]]
                if ub < np.inf:
                    lim = (ub - beta[i]) / (-a)
                    up = True
            if lim == np.inf:
                continue
            if lim < 0.0:
                lim = 0.0
            if r < 0 or lim < theta - 1e-12:
                if lim < theta:
                    theta = lim
                    r = i
                    r_upper = up
                    best_piv = abs(a)
            elif lim <= theta + 1e-12 and r >= 0:
                # tie: Bland takes the smallest basic index, otherwise the
                # largest pivot magnitude
                if bland:
                    if basis[i] < basis[r]:
                        r = i
                        r_upper = up
                        best_piv = abs(a)
                elif abs(a) > best_piv:
                    r = i
                    r_upper = up
                    best_piv = abs(a)
        if theta == np.inf:
            return 1, iters
        iters += 1
        if theta <= 1e-12:
            streak += 1
            if streak > 50:
                bland = True
        else:
            streak = 0
        for i in range(m):
            beta[i] -= theta * direction * T[i, j]
        if r < 0:
            at_upper[j] = not at_upper[j]
            continue
        leaving = basis[r]
        value = (u[j] if at_upper[j] else 0.0) + direction * theta
        at_upper[leaving] = r_upper
        at_upper[j] = False
        _pivot(T, basis, r, j)
        beta[r] = value
        dj = d[j]
        for k in range(n):
            d[k] -= dj * T[r, k]


@njit(cache=True)
def _refresh(T, A, b, u, basis, at_upper, beta):
    """Recompute basic values as ``B^-1 (b - N y_N)`` from the original
    matrix, which removes drift accumulated by tableau updates."""
    m, n = A.shape
    if m == 0:
        return
    rhs = b.copy()
    is_basic = np.zeros(n, dtype=np.bool_)
    for i in range(m):
        is_basic[basis[i]] = True
    for k in range(n):
        if at_upper[k] and not is_basic[k]:
            for i in range(m):
                rhs[i] -= A[i, k] * u[k]
    B = np.empty((m, m))
    for i in range(m):
        for r in range(m):
            B[i, r] = A[i, basis[r]]
    sol = np.linalg.solve(B, rhs)
    for i in range(m):
        beta[i] = sol[i]


@njit(cache=True)
def _lp_core(A_ub, b_ub, A_eq, b_eq, c0, lb, ub, tol, max_iters):
    """Two-phase bounded simplex on ``max c0.x``.

    Returns ``(status, x, iterations, dual_bound)`` with status 0 optimal,
    1 unbounded, 2 iteration limit, 3 infeasible.
    """
    n = c0.size
    mu = b_ub.size
    me = b_eq.size
    m = mu + me
    n_all = n + mu
    A = np.zeros((m, n_all))
    for i in range(mu):
        for k in range(n):
            A[i, k] = A_ub[i, k]
        A[i, n + i] = 1.0
    for i in range(me):
        for k in range(n):
            A[mu + i, k] = A_eq[i, k]
    b = np.empty(m)
    for i in range(mu):
        b[i] = b_ub[i]
    for i in range(me):
        b[mu + i] = b_eq[i]
    for i in range(m):
        for k in range(n):
            b[i] -= A[i, k] * lb[k]
    u = np.empty(n_all)
    for k in range(n):
        u[k] = ub[k] - lb[k]
    for k in range(n, n_all):
        u[k] = np.inf
    c = np.zeros(n_all)
    c[:n] = c0
    const = 0.0
    for k in range(n):
        const += c0[k] * lb[k]
    # rows with a negative right-hand side are negated; rows whose slack
    # cannot start basic get an artificial column
    n_art = 0
    needs = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if b[i] < 0.0:
            A[i] *= -1.0
            b[i] = -b[i]
            if i < mu:
                needs[i] = True
        if i >= mu:
            needs[i] = True
        if needs[i]:
            n_art += 1
    T = np.zeros((m, n_all + n_art))
    T[:, :n_all] = A
    basis = np.empty(m, dtype=np.int64)
    a = 0
    for i in range(m):
        if needs[i]:
            T[i, n_all + a] = 1.0
            basis[i] = n_all + a
            a += 1
        else:
            basis[i] = n + i
    beta = b.copy()
    u1 = np.empty(n_all + n_art)
    u1[:n_all] = u
    u1[n_all:] = np.inf
    at_upper = np.zeros(n_all + n_art, dtype=np.bool_)
    iters = 0
    x = np.zeros(n)
    if n_art > 0:
        c1 = np.zeros(n_all + n_art)
        c1[n_all:] = -1.0
        state, iters = _simplex(T, beta, u1, basis, at_upper, c1, max_iters,
                                iters, tol)
        if state == 2:
            return 2, x, iters, np.nan
        art_sum = 0.0
        bmax = 1.0
        for i in range(m):
            if basis[i] >= n_all:
                art_sum += beta[i]
            bmax = max(bmax, b[i])
        if art_sum > max(1e-7, 1e-9 * bmax):
            return 3, x, iters, np.nan
        keep = np.ones(m, dtype=np.bool_)
        for r in range(m):
            if basis[r] < n_all:
                continue
            j = -1
            big = 1e-9
            for k in range(n_all):
                if abs(T[r, k]) > big:
                    big = abs(T[r, k])
                    j = k
            if j >= 0:
                _pivot(T, basis, r, j)
                at_upper[j] = False
            else:
                keep[r] = False
        mk = 0
        for i in range(m):
            if keep[i]:
                mk += 1
        T2 = np.empty((mk, n_all))
        A2 = np.empty((mk, n_all))
        b2 = np.empty(mk)
        basis2 = np.empty(mk, dtype=np.int64)
        r = 0
        for i in range(m):
            if keep[i]:
                T2[r] = T[i, :n_all]
                A2[r] = A[i]
                b2[r] = b[i]
                basis2[r] = basis[i]
                r += 1
        T, A, b, basis = T2, A2, b2, basis2
        m = mk
        at_upper = at_upper[:n_all].copy()
        beta = np.empty(m)
        _refresh(T, A, b, u, basis, at_upper, beta)

    state, iters = _simplex(T, beta, u, basis, at_upper, c, max_iters, iters,
                            tol)
    if state != 0:
        return state, x, iters, np.nan
    _refresh(T, A, b, u, basis, at_upper, beta)
    y = np.zeros(n_all)
    for k in range(n_all):
        if at_upper[k]:
            y[k] = u[k]
    for i in range(m):
        y[basis[i]] = beta[i]
    for k in range(n_all):
        y[k] = min(max(y[k], 0.0), u[k])
    for k in range(n):
        x[k] = lb[k] + y[k]

    # weak-duality bound from the final basis
    bound = const
    if m > 0:
        Bt = np.empty((m, m))
        cb = np.empty(m)
        for i in range(m):
            cb[i] = c[basis[i]]
            for r in range(m):
                Bt[i, r] = A[r, basis[i]]
        pi = np.linalg.solve(Bt, cb)
        for i in range(m):
            bound += b[i] * pi[i]
        red = c - pi @ A
    else:
        red = c.copy()
    for k in range(n_all):
        if red[k] > 0.0 and u[k] < np.inf:
            bound += red[k] * u[k]
    return 0, x, iters, bound


def _status(code):
    return (Status.OPTIMAL, Status.UNBOUNDED, Status.ITERATION_LIMIT,
            Status.INFEASIBLE)[code]


def _solve_arrays(lp: LinearProgram, lb, ub, tol=1e-9, max_iters=50000):
    code, x, iters, bound = _lp_core(
        np.ascontiguousarray(lp.A_ub), lp.b_ub, np.ascontiguousarray(lp.A_eq),
        lp.b_eq, lp.c, lb, ub, tol, max_iters)
    status = _status(code)
    if status is Status.OPTIMAL:
        return MilpSolution(status, x, float(lp.c @ x), lp_iterations=iters,
                            dual_bound=float(bound))
    obj = np.inf if status is Status.UNBOUNDED else np.nan
    return MilpSolution(status, None, obj, lp_iterations=iters)


def solve_lp(lp: LinearProgram, tol: float = 1e-9,
             max_iters: int = 50000) -> MilpSolution:
    """Solve ``lp`` with the two-phase bounded-variable primal simplex.

    Variables are shifted to ``[0, ub - lb]``, each inequality gets a slack,
    and rows whose slack cannot start the basis get an artificial column.
    Pricing is Dantzig's rule until 50 consecutive degenerate pivots, after
    which Bland's rule takes over for the rest of the phase.

    Returns
    -------
    MilpSolution
        ``x`` is a basic optimal solution when ``status`` is optimal, and
        ``dual_bound`` the weak-duality bound computed from the final basis.
    """
    return _solve_arrays(lp, lp.lb, lp.ub, tol, max_iters)


# ----------------------------------------------------------------------------
# Branch and bound
# ----------------------------------------------------------------------------

def _group_split(lp, groups, x, lb, ub, i):
    """Free members of ``i``'s group, split where the LP mass (ordered by
    objective coefficient) reaches one half.  ``None`` if the group has
    fewer than two free members or one half carries no LP mass."""
    idx = np.flatnonzero((groups == groups[i]) & (ub > lb))
    if idx.size < 2:
        return None
    order = idx[np.argsort(-lp.c[idx], kind='stable')]
    cum = np.cumsum(x[order])
    k = min(int(np.searchsorted(cum, 0.5 * cum[-1])), order.size - 2)
    if cum[k] <= 1e-9 or cum[-1] - cum[k] <= 1e-9:
        return None
    return order[:k + 1], order[k + 1:]


def solve_milp(mp: MilpProblem, tol: float = 1e-7, node_limit: int = 100000,
               int_tol: float = 1e-9, branching: str = 'fractional'
               ) -> MilpSolution:
    """Best-first branch-and-bound over the binary variables of ``mp``.

    The open node with the largest LP bound is expanded first.  Branching
    picks the most fractional binary (lowest index on ties) and creates the
    ``x = 0`` and ``x = 1`` children.  A node is pruned when its bound does
    not exceed the incumbent by more than ``tol``.

    With ``branching='group'`` and ``mp.groups`` set, the most fractional
    binary's group is split in two instead and each child fixes one half to
    zero.  Every integral point of a choose-at-most-one group survives in at
    least one child, so the result is still exact; the bound moves much
    further per branch than fixing a single member.

    ``nodes`` counts solved LP relaxations, so a problem whose root
    relaxation is already integral reports one node.
    """
    if branching not in ('fractional', 'group'):
        raise ContractError(f'unknown branching rule {branching!r}')
    lp = mp.lp
    binary = mp.binary
    groups = mp.groups if branching == 'group' else None
    heap = []
    counter = 0
    nodes = 0
    lp_iters = 0
    best_x, best_obj = None, -np.inf

    def relax(lb, ub):
        nonlocal nodes, lp_iters
        sol = _solve_arrays(lp, lb, ub)
        nodes += 1
        lp_iters += sol.lp_iterations
        return sol

    root = relax(lp.lb, lp.ub)
    if root.status is Status.UNBOUNDED:
        return MilpSolution(Status.UNBOUNDED, None, np.inf, nodes, lp_iters)
    if root.status is Status.ITERATION_LIMIT:
        return MilpSolution(Status.ITERATION_LIMIT, None, np.nan, nodes,
                            lp_iters)
    if root.optimal:
        heapq.heappush(heap, (-root.objective, counter, lp.lb, lp.ub, root))
    limit_hit = False

    while heap:
        neg_bound, _, lb, ub, sol = heapq.heappop(heap)
        if -neg_bound <= best_obj + tol:
            continue
        xb = sol.x[binary]
        frac = np.abs(xb - np.round(xb))
        if binary.size == 0 or frac.max() <= int_tol:
            x = sol.x.copy()
            x[binary] = np.round(xb)
            obj = float(lp.c @ x)
            if obj > best_obj:
                best_x, best_obj = x, obj
            continue
        if nodes >= node_limit:
            limit_hit = True
            break
        # most fractional = closest to 0.5; argmax keeps the lowest index
        i = int(binary[np.argmax(frac)])
        split = None
        if groups is not None and groups[i] >= 0:
            split = _group_split(lp, groups, sol.x, lb, ub, i)
        for b in range(2):
            clb, cub = lb.copy(), ub.copy()
            if split is None:
                clb[i] = cub[i] = float(b)
            else:
                cub[split[b]] = 0.0
            child = relax(clb, cub)
            if child.status is Status.OPTIMAL \
                    and child.objective > best_obj + tol:
                counter += 1
                heapq.heappush(heap, (-child.objective, counter, clb, cub,
                                      child))

    if limit_hit:
        return MilpSolution(Status.ITERATION_LIMIT, best_x,
                            best_obj if best_x is not None else np.nan,
                            nodes, lp_iters)
    if best_x is None:
        return MilpSolution(Status.INFEASIBLE, None, np.nan, nodes, lp_iters)
    return MilpSolution(Status.OPTIMAL, best_x, best_obj, nodes, lp_iters,
                        dual_bound=best_obj)


def dump_problem(mp, stream=None) -> str:
    """Write ``c``, ``A`` and ``b`` of a problem as plain-text matrices.

    Sections are introduced by ``# c``, ``# A_ub``, ``# b_ub``, ``# A_eq``,
    ``# b_eq``, ``# lb``, ``# ub`` and ``# binary``, one matrix row per line.
    """
    lp = mp.lp if isinstance(mp, MilpProblem) else mp
    binary = mp.binary if isinstance(mp, MilpProblem) else np.zeros(0, int)
    buf = io.StringIO()
    for name, arr in (('c', lp.c[None, :]), ('A_ub', lp.A_ub),
                      ('b_ub', lp.b_ub[None, :]), ('A_eq', lp.A_eq),
                      ('b_eq', lp.b_eq[None, :]), ('lb', lp.lb[None, :]),
                      ('ub', lp.ub[None, :])):
        buf.write(f'# {name} {arr.shape[0]} {arr.shape[1]}\n')
        if arr.size:
            np.savetxt(buf, arr, fmt='%.17g')
    buf.write(f'# binary {binary.size}\n')
    if binary.size:
        buf.write(' '.join(str(i) for i in binary) + '\n')
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text
