"""Alternating solver, fixed-technology baselines and exhaustive search.

:func:`solve` alternates the assignment MILP (powers frozen) with the DC
power allocation (assignment frozen) until neither block moves.  Fixing
the technology gives the pure-OMA and pure-NOMA baselines.
:func:`exhaustive_oracle` enumerates every assignment and allocates power
for each, pruning with a water-filling upper bound.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .assignment import Mode, build_step1, solve_step1
from .milp import Status
from .netmodel import (AccessDecision, ChannelModelParams, ContractError,
                       NetworkInstance, PowerMatrix, _gains, check_feasibility,
                       generate_instance, sp_rates, total_utility,
                       uniform_powers, user_rates)
from .power import PowerConfig, dc_power_allocation

__all__ = [
    'SolverConfig',
    'OuterRecord',
    'SolutionReport',
    'solve',
    'exhaustive_oracle',
    'oracle_option_count',
    'trial_seed',
    'run_trial',
    'outage_probability',
]


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and sub-solver settings of :func:`solve`.

    The loop stops when the changes of ``beta``, ``alpha`` and ``P`` are all
    within ``eps_beta``, ``eps_alpha`` and ``eps_p``; after
    ``max_outer_iters`` iterations; after ``max_stall`` iterations without
    improving the best iterate; or when an assignment seen two or more
    iterations earlier comes back.

    ``step1_seed`` decides which powers the assignment step sees for users
    that were unassigned in the previous iteration (their actual power is
    zero).  ``'subcarrier'`` gives them the largest power currently used on
    that subcarrier (the uniform share on idle subcarriers); ``'none'``
    keeps the zeros, which makes pairing an idle second user look cheaper
    than any real allocation can be.

    ``node_limit`` is the branch-and-bound budget of each assignment solve;
    past it the assignment is finished by exact split enumeration.  A solve
    that exhausts both stops the loop with reason ``'step1_limit'`` rather
    than ``'step1_infeasible'``; either way the trial counts as an outage.
    """

    mode: Mode = Mode.HYBRID
    eps_beta: float = 0.5
    eps_alpha: float = 0.5
    eps_p: float = 1e-3
    max_outer_iters: int = 10
    max_stall: int = 3
    power: PowerConfig = field(default_factory=PowerConfig)
    feas_tol: float = 1e-6
    node_limit: int = 5000
    form: str = 'option'
    step1_seed: str = 'subcarrier'

    def __post_init__(self):
        object.__setattr__(self, 'mode', Mode(self.mode))
        if self.step1_seed not in ('subcarrier', 'none'):
            raise ContractError(f'unknown step1_seed {self.step1_seed!r}')
        for name in ('eps_beta', 'eps_alpha', 'eps_p', 'feas_tol'):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ContractError(f'{name} must lie in (0, 1)')
        if self.max_outer_iters < 1 or self.max_stall < 1:
            raise ContractError('iteration caps must be >= 1')

    def with_mode(self, mode) -> 'SolverConfig':
        return replace(self, mode=Mode(mode))


@dataclass
class OuterRecord:
    """Diagnostics of one alternation step.

    ``step1_objective`` is the assignment objective of the new decision at
    the previous powers and ``prev_utility`` the utility of the previous
    decision at those powers; the first is never below the second.
    """

    t: int
    step1_objective: float
    prev_utility: float
    utility: float
    feasible: bool
    d_beta: float
    d_alpha: float
    d_p: float
    dc_iters: int
    nodes: int


@dataclass
class SolutionReport:
    decision: AccessDecision
    powers: PowerMatrix
    utility: float
    raw_utility: float
    total_rate: float
    sp_rates: np.ndarray
    feasible: bool
    outer_iters: int
    modes: List[str]
    noma_fraction: float
    noma_fallback: int = 0
    timings: Dict[str, float] = field(default_factory=dict)
    trace: List[OuterRecord] = field(default_factory=list)
    stop_reason: str = ''

    @classmethod
    def infeasible(cls, inst: NetworkInstance, **kw) -> 'SolutionReport':
        dec = AccessDecision.empty(inst.K, inst.N)
        return cls(dec, PowerMatrix.zeros(inst.K, inst.N), 0.0, 0.0, 0.0,
                   np.zeros(inst.S), False, kw.pop('outer_iters', 0),
                   ['idle'] * inst.N, 0.0, **kw)


def _evaluate(inst, H, decision, powers, tol, **kw) -> SolutionReport:
    rep = check_feasibility(inst, H, decision, powers, tol)
    raw = total_utility(inst, H, decision, powers)
    modes = decision.modes()
    return SolutionReport(
        decision=decision, powers=powers,
        utility=raw if rep.feasible else 0.0, raw_utility=raw,
        total_rate=float(user_rates(inst, H, decision, powers).sum()),
        sp_rates=sp_rates(inst, H, decision, powers), feasible=rep.feasible,
        outer_iters=kw.pop('outer_iters', 0), modes=modes, noma_fraction=modes.count('noma') / inst.N, **kw)


def _seeded(inst, P):
    """Fill zero entries with the largest power used on their subcarrier,
    or the uniform share ``P_max / (2N)`` on idle subcarriers."""
    p = np.asarray(P, float)
    level = p.max(axis=0)
    level = np.where(level > 0, level, inst.P_max / (2 * inst.N))
    return np.where(p > 0, p, level[None, :])


def _warm_start(inst, decision, seeded):
    """Seeded powers restricted to the new assignment and scaled into the
    budget."""
    served = decision.alpha.sum(axis=0) > 0
    p = np.where(served, seeded, 0.0)
    total = p.sum()
    if total > inst.P_max:
        p *= inst.P_max / total
    return PowerMatrix(p)


def _better(a: SolutionReport, b: Optional[SolutionReport]) -> bool:
    if b is None:
        return True
    if a.feasible != b.feasible:
        return a.feasible
    return a.raw_utility > b.raw_utility + 1e-12


def solve(inst: NetworkInstance, H, cfg: Optional[SolverConfig] = None
          ) -> SolutionReport:
    """Alternate assignment and power allocation from uniform powers.

    An infeasible first assignment problem means no assignment meets the SP
    rates at the starting powers: the report is infeasible with zero
    utility.  A report whose final powers miss an SP rate is infeasible too
    and also carries zero utility; ``raw_utility`` keeps the value.
    """
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    t_step1 = t_power = 0.0
    P = uniform_powers(inst)
    prev_dec: Optional[AccessDecision] = None
    prev_util = math.nan
    best: Optional[SolutionReport] = None
    seen = {}
    trace: List[OuterRecord] = []
    stall = 0
    fallback = 0
    reason = 'max_outer_iters'

    for t in range(1, cfg.max_outer_iters + 1):
        t0 = time.perf_counter()
        # the very first call sees the uniform split, which has no zeros
        seeded = _seeded(inst, P.p)
        step1_p = seeded if cfg.step1_seed == 'subcarrier' else P.p
        prob = build_step1(inst, H, PowerMatrix(step1_p), cfg.mode)
        res = solve_step1(prob, cfg.form, cfg.node_limit)
        t_step1 += time.perf_counter() - t0
        fallback = res.noma_fallback
        if not res.feasible:
            reason = ('step1_infeasible' if res.status is Status.INFEASIBLE
                      else 'step1_limit')
            if best is None:
                return SolutionReport.infeasible(
                    inst, outer_iters=t, noma_fallback=fallback,
                    timings={'step1': t_step1, 'power': 0.0,
                             'total': time.perf_counter() - t_start},
                    trace=trace, stop_reason=reason)
            break
        dec = res.decision
        if prev_dec is not None:
            prev_util = total_utility(inst, H, prev_dec, P)

        t0 = time.perf_counter()
        pr = dc_power_allocation(inst, H, dec, _warm_start(inst, dec, seeded),
                                 cfg.power)
        t_power += time.perf_counter() - t0
        rep = _evaluate(inst, H, dec, pr.powers, cfg.feas_tol)

        if prev_dec is None:
            d_beta = d_alpha = math.inf
        else:
            d_beta = float(np.linalg.norm(dec.beta - prev_dec.beta))
            d_alpha = float(np.linalg.norm(
                dec.alpha.astype(float) - prev_dec.alpha))
        d_p = float(np.linalg.norm(pr.powers.p - P.p))
        trace.append(OuterRecord(t, res.objective, prev_util, rep.raw_utility,
                                 rep.feasible, d_beta, d_alpha, d_p,
                                 pr.dc_iters, res.nodes))

        if _better(rep, best):
            best = rep
            stall = 0
        else:
            stall += 1
        key = dec.key()
        repeat = key in seen and seen[key] < t - 1
        seen[key] = t
        prev_dec, P = dec, pr.powers
        if d_beta <= cfg.eps_beta and d_alpha <= cfg.eps_alpha \
                and d_p <= cfg.eps_p:
            reason = 'converged'
            break
        if stall >= cfg.max_stall:
            reason = 'stalled'
            break
        if repeat:
            reason = 'cycle'
            break

    best.outer_iters = len(trace)
    best.noma_fallback = fallback
    best.trace = trace
    best.stop_reason = reason
    best.timings = {'step1': t_step1, 'power': t_power,
                    'total': time.perf_counter() - t_start}
    return best


# ----------------------------------------------------------------------------
# Exhaustive search
# ----------------------------------------------------------------------------

def oracle_option_count(K: int, N: int) -> int:
    """Number of complete assignments ``(C(K, 2) + K)^N``."""
    return (math.comb(K, 2) + K) ** N


def _waterfill_rows(g, P_total, noise):
    """Row-wise water-filling sum rate (nats) for a gain matrix ``g``.

    Exact: with inverse gains sorted ascending, the water level over the
    ``m`` best channels is ``(P + sum inv[:m]) / m`` and the largest ``m``
    whose level clears ``inv[m-1]`` is active.  Zero gains never fill.
    """
    g = np.asarray(g, float)
    with np.errstate(divide='ignore'):
        inv = np.sort(np.where(g > 0, noise / np.where(g > 0, g, 1.0), np.inf),
                      axis=1)
    m = np.arange(1, g.shape[1] + 1)
    with np.errstate(invalid='ignore'):
        level = (P_total + np.cumsum(inv, axis=1)) / m
        active = level > inv
    # active is a prefix along each row; count it
    n_act = np.maximum(active.sum(axis=1), 1)
    mu = level[np.arange(g.shape[0]), n_act - 1]
    with np.errstate(invalid='ignore', divide='ignore'):
        r = np.where(inv < mu[:, None], np.log(mu[:, None] / inv), 0.0)
    return r.sum(axis=1)


def _min_power_rows(g, rate, noise):
    """Row-wise least total power reaching ``rate`` nats over gains ``g``.

    Inverse water-filling: with ``m`` active channels the level is
    ``exp((rate + sum log inv[:m]) / m)``; the largest consistent ``m`` is
    active.  Rows with no positive gain need infinite power.
    """
    g = np.asarray(g, float)
    with np.errstate(divide='ignore'):
        inv = np.sort(np.where(g > 0, noise / np.where(g > 0, g, 1.0), np.inf),
                      axis=1)
    m = np.arange(1, g.shape[1] + 1)
    with np.errstate(invalid='ignore'):
        level = np.exp((rate + np.cumsum(np.log(inv), axis=1)) / m)
        active = level > inv
    n_act = active.sum(axis=1)
    mu = level[np.arange(g.shape[0]), np.maximum(n_act, 1) - 1]
    with np.errstate(invalid='ignore'):
        p = np.where(inv < mu[:, None], mu[:, None] - inv, 0.0).sum(axis=1)
    return np.where(n_act > 0, p, np.inf)


def exhaustive_oracle(inst: NetworkInstance, H,
                      cfg: Optional[SolverConfig] = None,
                      cap: int = 10 ** 6,
                      power_cfg: Optional[PowerConfig] = None,
                      return_count: bool = False):
    """Best assignment over the full option space.

    Every subcarrier takes one of ``K`` OMA users or an ordered pair whose
    second user is not stronger; each complete assignment gets a DC power
    allocation.  Assignments are visited in decreasing order of an upper
    bound (water-filling of the first users' gains minus ``A`` per NOMA
    subcarrier), and the search stops once the bound cannot beat the
    incumbent, so the result equals full enumeration.  Assignments whose
    per-SP rate bound misses a target are skipped.

    Raises
    ------
    ContractError
        If the option count exceeds ``cap``.
    """
    cfg = cfg or SolverConfig()
    power_cfg = power_cfg or cfg.power
    h = _gains(H)
    K, N, S = inst.K, inst.N, inst.S
    total = oracle_option_count(K, N)
    if total > cap:
        raise ContractError(f'{total} assignments exceed the cap of {cap}')

    per_n = []
    for n in range(N):
        opts = [(k, -1) for k in range(K)]
        opts += [(a, b) for a in range(K) for b in range(K)
                 if a != b and h[b, n] <= h[a, n]]
        per_n.append(np.array(opts))
    sizes = [len(o) for o in per_n]
    idx = np.array(list(itertools.product(*[range(s) for s in sizes])),
                   dtype=np.int64).reshape(-1, N)
    first = np.column_stack([per_n[n][idx[:, n], 0] for n in range(N)])
    second = np.column_stack([per_n[n][idx[:, n], 1] for n in range(N)])
    cols = np.arange(N)
    s2, lb = inst.noise_var, inst.ln_base

    n_noma = (second >= 0).sum(axis=1)
    ub = _waterfill_rows(h[first, cols], inst.P_max, s2) / lb \
        - inst.cost_A * n_noma
    # joint screen: every SP needs at least the power that reaches its
    # target alone on its strongest member per subcarrier (interference and
    # pairing inside the SP only raise it); the sum must fit the budget
    sp = inst.sp_array
    need = np.zeros(idx.shape[0])
    for s in range(S):
        if inst.R_s[s] <= 0:
            continue
        g1 = np.where(sp[first] == s, h[first, cols], 0.0)
        g2 = np.where((second >= 0) & (sp[np.maximum(second, 0)] == s),
                      h[np.maximum(second, 0), cols], 0.0)
        need += _min_power_rows(np.maximum(g1, g2),
                                (inst.R_s[s] - cfg.feas_tol) * lb, s2)
    ok = need <= inst.P_max * (1 + 1e-9)
    order = np.flatnonzero(ok)
    order = order[np.argsort(-ub[order], kind='stable')]

    best: Optional[SolutionReport] = None
    evaluated = 0
    for i in order:
        if best is not None and ub[i] <= best.utility + 1e-9:
            break
        dec = AccessDecision.from_pairs(K, first[i], second[i])
        pr = dc_power_allocation(inst, H, dec, None, power_cfg)
        evaluated += 1
        rep = _evaluate(inst, H, dec, pr.powers, cfg.feas_tol)
        if rep.feasible and (best is None or rep.utility > best.utility):
            best = rep
    if best is None:
        best = SolutionReport.infeasible(inst)
    best.stop_reason = 'oracle'
    best.timings = {'evaluated': float(evaluated), 'enumerated': float(total)}
    if return_count:
        return best, evaluated
    return best


# ----------------------------------------------------------------------------
# Monte Carlo
# ----------------------------------------------------------------------------

def trial_seed(master: int, trial: int):
    """Seed of one realization, independent of how trials are scheduled."""
    return (int(master), int(trial))


def run_trial(inst: NetworkInstance, channel: ChannelModelParams, master: int,
              trial: int, cfg: SolverConfig) -> SolutionReport:
    params = replace(channel, seed=trial_seed(master, trial))
    H = generate_instance(params, inst)
    return solve(inst, H, cfg)


def outage_probability(inst: NetworkInstance, channel: ChannelModelParams,
                       trials: int, cfg: Optional[SolverConfig] = None,
                       modes: Sequence = tuple(Mode), master: int = 0):
    """Fraction of realizations whose solve is infeasible, per mode.

    Returns ``{mode: (probability, standard_error)}``.
    """
    cfg = cfg or SolverConfig()
    out = {}
    for mode in modes:
        mcfg = cfg.with_mode(mode)
        fails = np.array([not run_trial(inst, channel, master, t, mcfg).feasible
                          for t in range(trials)], dtype=float)
        p = float(fails.mean())
        se = float(fails.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        out[Mode(mode)] = (p, se)
    return out
