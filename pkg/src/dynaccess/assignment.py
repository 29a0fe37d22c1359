"""Technology selection and subcarrier assignment for fixed powers.

With the powers of the previous iteration frozen, every per-subcarrier
choice (idle, one OMA user, or an ordered NOMA pair) has a known rate and
cost, and the joint choice under the per-SP rate guarantees is a binary
linear program.  Two equivalent encodings are provided:

``'linked'``
    Variables ``alpha_kkn``, ``u_kk2n`` and ``beta_n`` with the linking
    rows ``alpha - u >= 0``, ``beta - u >= 0``, ``beta = sum u`` and the
    cardinality rows.
``'option'``
    One binary per (subcarrier, option) with a single choose-at-most-one
    row per subcarrier.  Options that are dominated in value and in every
    SP's rate are dropped first, which keeps the LP small.

Both encodings have the same optimal value; ``'option'`` is the default
because its relaxation is much tighter.

When branch-and-bound runs out of nodes, the solve is completed exactly by
a split enumeration of the filtered options: the subcarriers are divided
into two halves, every combination inside each half is listed, and the
halves are paired by a value-ordered scan.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kern
from .milp import LinearProgram, MilpProblem, Status, solve_milp
from .netmodel import (P_MIN, AccessDecision, ContractError, NetworkInstance,
                       PowerMatrix, _gains, _powers, uniform_powers)

__all__ = [
    'Mode',
    'Step1Problem',
    'Step1Result',
    'build_step1',
    'solve_step1',
    'split_search',
]


class Mode(str, enum.Enum):
    """Multiple-access regime: free per-subcarrier choice, or one fixed
    technology everywhere."""

    HYBRID = 'hybrid'
    OMA = 'oma'
    NOMA = 'noma'


@dataclass
class Step1Problem:
    """Coefficient tables of the assignment problem at fixed powers.

    Attributes
    ----------
    Y1 : ndarray, shape (K, N)
        OMA / first-user rate ``log(1 + p h / sigma^2)``.
    Y2 : ndarray, shape (K, K, N)
        Second-user rate of pair ``(k, k2)``:
        ``log(1 + p_k2 h_k2 / (p_k h_k2 + sigma^2))``.
    cost : ndarray, shape (K, K, N)
        SINR-dependent NOMA cost ``V log((h_k p_k2 + sigma^2) / (h_k p_k))``.
    valid : ndarray of bool, shape (K, K, N)
        Pairs with ``k != k2`` and ``h_k2 <= h_k``.
    tie : ndarray of bool, shape (K, K, N)
        Valid pairs with ``h_k2 == h_k`` exactly.
    """

    inst: NetworkInstance
    h: np.ndarray
    powers: np.ndarray
    mode: Mode
    Y1: np.ndarray
    Y2: np.ndarray
    cost: np.ndarray
    valid: np.ndarray
    tie: np.ndarray
    _linked: Optional[tuple] = field(default=None, repr=False)
    _option: Optional[tuple] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.inst.K

    @property
    def N(self) -> int:
        return self.inst.N

    @property
    def pair_value(self) -> np.ndarray:
        """Objective contribution of every pair option (K, K, N)."""
        return self.Y1[:, None, :] + self.Y2 - self.inst.cost_A - self.cost

    def objective(self, decision: AccessDecision) -> float:
        """Linearized objective evaluated at ``decision``."""
        diag = np.einsum('kkn->kn', decision.alpha)
        off = ~np.eye(self.K, dtype=bool)[:, :, None]
        u = decision.u * off
        return float(np.sum(diag * self.Y1) + np.sum(u * (self.Y2 - self.cost))
                     - self.inst.cost_A * np.sum(decision.beta))

    def noma_fallback(self) -> int:
        """Subcarriers where a forced-NOMA mode has no valid pair."""
        if self.mode is not Mode.NOMA:
            return 0
        return int(np.sum(~self.valid.any(axis=(0, 1))))

    # -- linked encoding ---------------------------------------------------

    def linked_form(self):
        """``(MilpProblem, index maps)`` of the alpha/u/beta encoding."""
        if self._linked is None:
            self._linked = _build_linked_form(self)
        return self._linked

    # -- option encoding ---------------------------------------------------

    def option_form(self):
        """``(MilpProblem, option table)`` of the per-subcarrier encoding."""
        if self._option is None:
            self._option = _build_option_form(self)
        return self._option


@dataclass
class Step1Result:
    status: Status
    decision: Optional[AccessDecision]
    objective: float
    nodes: int = 0
    lp_iterations: int = 0
    noma_fallback: int = 0
    method: str = 'milp'

    @property
    def feasible(self) -> bool:
        return self.decision is not None


def build_step1(inst: NetworkInstance, H, prev_powers=None,
                mode: Mode = Mode.HYBRID) -> Step1Problem:
    """Tabulate rates and costs at ``prev_powers``.

    An all-zero (or missing) power matrix is replaced by the uniform split
    ``P_max / (2N)`` so that every coefficient is informative.
    """
    mode = Mode(mode)
    h = _gains(H)
    K, N = inst.K, inst.N
    if h.shape != (K, N):
        raise ContractError('channel shape does not match the instance')
    if prev_powers is None or not np.any(_powers(prev_powers)):
        prev_powers = uniform_powers(inst)
    p = _powers(prev_powers)
    if p.shape != (K, N) or np.any(p < 0):
        raise ContractError('prev_powers must be a nonnegative K x N matrix')

    s2, lb = inst.noise_var, inst.ln_base
    Y1 = np.log1p(p * h / s2) / lb
    # Y2[k, k2, n]: k is the first user, k2 the second
    Y2 = np.log1p(p[None, :, :] * h[None, :, :]
                  / (p[:, None, :] * h[None, :, :] + s2)) / lb
    p1 = np.maximum(p, P_MIN)
    cost = inst.cost_V * np.log((h[:, None, :] * p[None, :, :] + s2)
                                / (h[:, None, :] * p1[:, None, :])) / lb
    off = ~np.eye(K, dtype=bool)[:, :, None]
    valid = (h[None, :, :] <= h[:, None, :]) & off
    tie = (h[None, :, :] == h[:, None, :]) & off
    if mode is Mode.OMA:
        valid = np.zeros_like(valid)
        tie = np.zeros_like(tie)
    Y2 = np.where(off, Y2, 0.0)
    cost = np.where(off, cost, 0.0)
    return Step1Problem(inst=inst, h=h, powers=p, mode=mode, Y1=Y1, Y2=Y2,
                        cost=cost, valid=valid, tie=tie)


def _build_linked_form(prob: Step1Problem):
    inst, K, N = prob.inst, prob.K, prob.N
    pk1, pk2, pn = np.nonzero(prob.valid)
    n_alpha, n_u = K * N, pk1.size
    ia = np.arange(n_alpha).reshape(K, N)
    iu = n_alpha + np.arange(n_u)
    ib = n_alpha + n_u + np.arange(N)
    nv = n_alpha + n_u + N

    c = np.zeros(nv)
    c[ia.ravel()] = prob.Y1.ravel()
    c[iu] = prob.Y2[pk1, pk2, pn] - prob.cost[pk1, pk2, pn]
    c[ib] = -inst.cost_A

    rows, rhs = [], []

    def row():
        r = np.zeros(nv)
        rows.append(r)
        return r

    for j in range(n_u):
        r = row()  # u - alpha_kk <= 0
        r[iu[j]], r[ia[pk1[j], pn[j]]] = 1.0, -1.0
        rhs.append(0.0)
        r = row()  # u - beta <= 0
        r[iu[j]], r[ib[pn[j]]] = 1.0, -1.0
        rhs.append(0.0)
    sp = inst.sp_array
    for s in range(inst.S):
        r = row()  # -(rate of SP s) <= -R_s
        for k in np.flatnonzero(sp == s):
            r[ia[k]] = -prob.Y1[k]
        sel = sp[pk2] == s
        r[iu[sel]] -= prob.Y2[pk1[sel], pk2[sel], pn[sel]]
        rhs.append(-inst.R_s[s])
    for j in np.flatnonzero(prob.tie[pk1, pk2, pn]):
        r = row()  # ordering row kept where it is tight
        r[iu[j]] = prob.h[pk2[j], pn[j]] / prob.h[pk1[j], pn[j]]
        rhs.append(1.0)
    for n in range(N):
        r = row()
        r[iu[pn == n]] = 1.0
        rhs.append(1.0)
        r = row()
        r[ia[:, n]] = 1.0
        rhs.append(1.0)

    A_eq = np.zeros((N, nv))
    for n in range(N):
        A_eq[n, ib[n]] = 1.0
        A_eq[n, iu[pn == n]] = -1.0

    lb = np.zeros(nv)
    ub = np.ones(nv)
    has_pair = prob.valid.any(axis=(0, 1))
    if prob.mode is Mode.OMA:
        ub[ib] = 0.0
    elif prob.mode is Mode.NOMA:
        lb[ib[has_pair]] = 1.0
    lp = LinearProgram(c, np.array(rows).reshape(-1, nv), np.array(rhs),
                       A_eq, np.zeros(N), lb, ub)
    mp = MilpProblem(lp, np.arange(nv))
    return mp, (ia, iu, ib, pk1, pk2, pn)


def _pareto_keep(value, rates, forbid_empty):
    """Indices of options not dominated by another option (or by idle)."""
    M = value.size
    vec = np.column_stack([value, rates])
    keep = np.ones(M, dtype=bool)
    if not forbid_empty:
        keep &= ~((value <= 0) & np.all(rates <= 0, axis=1))
    ge = np.all(vec[:, None, :] >= vec[None, :, :], axis=2)  # ge[i, j]: i >= j
    eq = ge & ge.T
    strict = ge & ~eq
    dominated = strict.any(axis=0)
    # among identical vectors keep the lowest index
    dup = np.triu(eq, k=1).any(axis=0)
    keep &= ~dominated & ~dup
    return np.flatnonzero(keep)


def _build_option_form(prob: Step1Problem):
    inst, K, N, S = prob.inst, prob.K, prob.N, prob.inst.S
    sp = inst.sp_array
    values, rate_rows, opt_n, opt_first, opt_second = [], [], [], [], []
    gub_eq = np.zeros(N, dtype=bool)
    pair_value = prob.pair_value
    for n in range(N):
        pk1, pk2 = np.nonzero(prob.valid[:, :, n])
        force_pair = prob.mode is Mode.NOMA and pk1.size > 0
        if force_pair:
            first, second = pk1, pk2
        else:
            first = np.r_[np.arange(K), pk1]
            second = np.r_[np.full(K, -1), pk2]
        val = np.r_[prob.Y1[:, n], pair_value[pk1, pk2, n]]
        if force_pair:
            val = val[K:]
        rates = np.zeros((first.size, S))
        rates[np.arange(first.size), sp[first]] += prob.Y1[first, n]
        paired = second >= 0
        rates[np.flatnonzero(paired), sp[second[paired]]] += \
            prob.Y2[first[paired], second[paired], n]
        keep = _pareto_keep(val, rates, forbid_empty=force_pair)
        gub_eq[n] = force_pair
        values.append(val[keep])
        rate_rows.append(rates[keep])
        opt_n.append(np.full(keep.size, n))
        opt_first.append(first[keep])
        opt_second.append(second[keep])

    value = np.concatenate(values)
    rates = np.concatenate(rate_rows)
    on = np.concatenate(opt_n)
    table = (on, np.concatenate(opt_first), np.concatenate(opt_second))
    nv = value.size
    gub = np.zeros((N, nv))
    gub[on, np.arange(nv)] = 1.0
    A_ub = np.vstack([gub[~gub_eq], -rates.T])
    b_ub = np.r_[np.ones(int(np.sum(~gub_eq))), -inst.rate_targets]
    lp = LinearProgram(value, A_ub, b_ub, gub[gub_eq], np.ones(int(gub_eq.sum())),
                       np.zeros(nv), np.ones(nv))
    return MilpProblem(lp, np.arange(nv), groups=on), table


SPLIT_CAP = 2_000_000
SPLIT_BUDGET = 500_000_000


def _half_table(groups, S):
    """Every combination of one choice per group: value, rates, option ids."""
    v = np.zeros(1)
    r = np.zeros((1, S))
    ids = np.zeros((1, 0), dtype=np.int64)
    for gv, gr, gid in groups:
        m = v.size
        v = (v[:, None] + gv[None, :]).ravel()
        r = (r[:, None, :] + gr[None, :, :]).reshape(-1, S)
        ids = np.concatenate([np.repeat(ids, gv.size, axis=0),
                              np.tile(gid, m)[:, None]], axis=1)
    order = np.argsort(-v, kind='stable')
    return v[order], np.ascontiguousarray(r[order]), ids[order]


def split_search(prob: Step1Problem, cap: int = SPLIT_CAP,
                 budget: int = SPLIT_BUDGET, tol: float = 1e-9):
    """Exact assignment by enumerating two halves of the subcarriers.

    Returns
    -------
    (status, decision)
        ``OPTIMAL`` with the best decision, ``INFEASIBLE`` with ``None``, or
        ``ITERATION_LIMIT`` with ``None`` when a half has more than ``cap``
        combinations or the pairing scan exceeds ``budget`` steps.
    """
    mp, (on, first, second) = prob.option_form()
    S = prob.inst.S
    value = mp.lp.c
    rates = -mp.lp.A_ub[-S:].T
    forced = np.zeros(prob.N, dtype=bool)
    if mp.lp.A_eq.shape[0]:
        forced[np.unique(on[np.any(mp.lp.A_eq != 0, axis=0)])] = True
    groups = []
    for n in range(prob.N):
        idx = np.flatnonzero(on == n)
        gv, gr = value[idx], rates[idx]
        if not forced[n]:
            idx = np.r_[-1, idx]
            gv, gr = np.r_[0.0, gv], np.vstack([np.zeros(S), gr])
        groups.append((gv, gr, idx))
    # balance the halves by the number of combinations
    halves, logs = ([], []), [0.0, 0.0]
    for g in groups:
        side = int(logs[1] < logs[0])
        halves[side].append(g)
        logs[side] += np.log(g[0].size)
    if max(logs) > np.log(cap):
        return Status.ITERATION_LIMIT, None
    va, ra, ia = _half_table(halves[0], S)
    vb, rb, ib = _half_table(halves[1], S)
    need = prob.inst.rate_targets - tol
    i, j, code = kern.split_search(va, ra, vb, rb, need, budget)
    if code:
        return Status.ITERATION_LIMIT, None
    if i < 0:
        return Status.INFEASIBLE, None
    chosen = np.r_[ia[i], ib[j]]
    chosen = chosen[chosen >= 0]
    f = np.full(prob.N, -1)
    s = np.full(prob.N, -1)
    f[on[chosen]] = first[chosen]
    s[on[chosen]] = second[chosen]
    decision = AccessDecision.from_pairs(prob.K, f, s)
    decision.validate(prob.h)
    return Status.OPTIMAL, decision


def solve_step1(prob: Step1Problem, form: str = 'option',
                node_limit: int = 5000) -> Step1Result:
    """Solve the assignment problem and return a validated decision.

    Parameters
    ----------
    form : {'option', 'linked'}
        MILP encoding; both have the same optimal value.
    node_limit : int
        Branch-and-bound budget.  When it runs out the problem is finished
        by :func:`split_search` (``method='split'``); only if that is also
        out of reach is the MILP incumbent, possibly none, returned with
        status ``ITERATION_LIMIT``.
    """
    K, N = prob.K, prob.N
    if form == 'option':
        mp, (on, first, second) = prob.option_form()
    elif form == 'linked':
        mp, maps = prob.linked_form()
    else:
        raise ContractError(f'unknown form {form!r}')
    sol = solve_milp(mp, node_limit=node_limit,
                     branching='group' if form == 'option' else 'fractional')
    if sol.status is Status.ITERATION_LIMIT:
        status, decision = split_search(prob)
        if status is not Status.ITERATION_LIMIT:
            obj = prob.objective(decision) if decision is not None else np.nan
            return Step1Result(status, decision, obj, sol.nodes,
                               sol.lp_iterations, prob.noma_fallback(),
                               method='split')
    if sol.x is None:
        return Step1Result(sol.status, None, np.nan, sol.nodes,
                           sol.lp_iterations, prob.noma_fallback())
    x = np.round(sol.x).astype(bool)
    f = np.full(N, -1)
    s = np.full(N, -1)
    if form == 'option':
        f[on[x]] = first[x]
        s[on[x]] = second[x]
    else:
        ia, iu, ib, pk1, pk2, pn = maps
        for k, n in zip(*np.nonzero(x[ia])):
            f[n] = k
        for j in np.flatnonzero(x[iu]):
            f[pn[j]], s[pn[j]] = pk1[j], pk2[j]
    decision = AccessDecision.from_pairs(K, f, s)
    decision.validate(prob.h)
    return Step1Result(sol.status, decision, prob.objective(decision),
                       sol.nodes, sol.lp_iterations, prob.noma_fallback())
