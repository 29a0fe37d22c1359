"""Power allocation for a fixed access decision.

The power problem maximizes sum rate minus the SINR-dependent NOMA cost
under the SP rate, SIC, linkage and total-power constraints.  Its objective
and the SP rate constraints are differences of concave functions, so it is
solved by successive convex approximation: every subtracted log is replaced
by its tangent at the current iterate, which gives a concave minorant
(the *surrogate*) that is then solved through its Lagrangian.

Two inner solvers are available for the surrogate:

``'exact'`` (default)
    Minimizes the dual exactly.  The total-power price and each SP price are
    found by one-dimensional root finding, and the primal of every
    subcarrier is the closed-form stationary point, or its restriction to
    the SIC boundary when that row binds.
``'subgradient'``
    Alternates :func:`closed_form_update` with projected subgradient steps
    of diminishing size ``a / (b + t)``.

Internally everything is in nats; results are converted to the instance's
``log_base``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels as kern
from .netmodel import (P_MIN, AccessDecision, ContractError, NetworkInstance,
                       PowerMatrix, _gains, _powers)

__all__ = [
    'PowerConfig',
    'DualVariables',
    'ClosedFormContext',
    'DcState',
    'PowerResult',
    'closed_form_contexts',
    'closed_form_update',
    'dual_ascent_step',
    'surrogate_objective',
    'surrogate_sp_rate',
    'lagrangian',
    'lagrangian_gradient',
    'dc_power_allocation',
    'water_filling',
    'write_trace',
]


@dataclass(frozen=True)
class PowerConfig:
    """Tolerances and caps of the DC and dual loops.

    Attributes
    ----------
    eps_p : float
        Stop the DC loop once successive iterates differ by at most this
        (Euclidean norm, watts).
    eps_inner : float
        Stop the subgradient loop once primal and dual changes fall below it.
    step_a, step_b : float
        Subgradient step ``step_a / (step_b + t)``.
    inner : {'exact', 'subgradient'}
    variant : {'derived', 'printed'}
        Coefficient set of :func:`closed_form_update`; ``'derived'`` is
        consistent with the Lagrangian's gradient, ``'printed'`` keeps the
        alternative published coefficients.
    lambda_cap : float
        Upper bound on the SP multipliers.  With the cap the dual solves the
        exact-penalty version of the surrogate, so infeasible targets still
        produce a well-defined iterate.
    """

    eps_p: float = 1e-4
    eps_inner: float = 1e-4
    max_dc_iters: int = 50
    max_dual_iters: int = 2000
    step_a: float = 1.0
    step_b: float = 10.0
    inner: str = 'exact'
    variant: str = 'derived'
    lambda_cap: float = 1e5
    p_min: float = P_MIN
    max_sweeps: int = 200
    dual_tol: float = 1e-11

    def __post_init__(self):
        if self.inner not in ('exact', 'subgradient'):
            raise ContractError(f'unknown inner solver {self.inner!r}')
        if self.variant not in ('derived', 'printed'):
            raise ContractError(f'unknown variant {self.variant!r}')
        if self.max_dc_iters < 1 or self.max_dual_iters < 1:
            raise ContractError('iteration caps must be >= 1')
        if not (self.eps_p > 0 and self.eps_inner > 0):
            raise ContractError('tolerances must be positive')


@dataclass
class DualVariables:
    """Nonnegative multipliers: ``lam`` (S,), ``gamma`` (N,), ``zeta``
    (K, N) and ``eta``.  They price constraints written in nats."""

    lam: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        self.lam = np.array(self.lam, dtype=float)
        self.gamma = np.array(self.gamma, dtype=float)
        self.zeta = np.array(self.zeta, dtype=float)
        self.eta = float(self.eta)
        if (np.any(self.lam < 0) or np.any(self.gamma < 0)
                or np.any(self.zeta < 0) or self.eta < 0):
            raise ContractError('multipliers must be nonnegative')

    @classmethod
    def zeros(cls, inst: NetworkInstance) -> 'DualVariables':
        return cls(np.zeros(inst.S), np.zeros(inst.N),
                   np.zeros((inst.K, inst.N)), 0.0)

    def copy(self) -> 'DualVariables':
        return DualVariables(self.lam, self.gamma, self.zeta, self.eta)

    def norms(self):
        return (float(np.linalg.norm(self.lam)),
                float(np.linalg.norm(self.gamma)),
                float(np.linalg.norm(self.zeta)), self.eta)


# ----------------------------------------------------------------------------
# Per-subcarrier layout
# ----------------------------------------------------------------------------

@dataclass
class _Layout:
    kind: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    sp1: np.ndarray
    sp2: np.ndarray
    delta: np.ndarray

    @property
    def noma(self):
        return self.kind == 2

    def split(self, P):
        """Powers of the first/OMA user and of the second user per
        subcarrier."""
        p = _powers(P)
        n = np.arange(self.kind.size)
        x1 = np.where(self.kind > 0, p[np.maximum(self.u1, 0), n], 0.0)
        x2 = np.where(self.kind == 2, p[np.maximum(self.u2, 0), n], 0.0)
        return x1, x2

    def assemble(self, K, x1, x2):
        p = np.zeros((K, self.kind.size))
        n = np.flatnonzero(self.kind > 0)
        p[self.u1[n], n] = x1[n]
        m = np.flatnonzero(self.kind == 2)
        p[self.u2[m], m] = x2[m]
        return p


def _layout(inst: NetworkInstance, h, decision: AccessDecision) -> _Layout:
    first, second = decision.pairs()
    kind = np.where(first < 0, 0, np.where(second < 0, 1, 2)).astype(np.int64)
    n = np.arange(inst.N)
    sp = inst.sp_array
    u1 = first.astype(np.int64)
    u2 = second.astype(np.int64)
    h1 = np.where(kind > 0, h[np.maximum(u1, 0), n], 1.0)
    h2 = np.where(kind == 2, h[np.maximum(u2, 0), n], 1.0)
    sp1 = np.where(kind > 0, sp[np.maximum(u1, 0)], 0).astype(np.int64)
    sp2 = np.where(kind == 2, sp[np.maximum(u2, 0)], 0).astype(np.int64)
    delta = inst.P_d * inst.noise_var / h1
    return _Layout(kind, u1, u2, h1, h2, sp1, sp2, delta)


def _slopes(inst, lay: _Layout, q1, q2):
    """Tangent slopes of ``ln(s2 + p2 h1)`` (c1) and ``ln(s2 + p1 h2)`` (c2)."""
    s2 = inst.noise_var
    noma = lay.noma
    c1 = np.where(noma, lay.h1 / (s2 + q2 * lay.h1), 0.0)
    c2 = np.where(noma, lay.h2 / (s2 + q1 * lay.h2), 0.0)
    return c1, c2


# ----------------------------------------------------------------------------
# Objective pieces in nats on the layout
# ----------------------------------------------------------------------------

def _true_terms(inst, lay: _Layout, x1, x2, p_min=P_MIN):
    """Objective (nats, without the constant A charge) and per-SP rates."""
    s2, V = inst.noise_var, inst.cost_V
    act = lay.kind > 0
    noma = lay.noma
    r1 = np.where(act, np.log1p(x1 * lay.h1 / s2), 0.0)
    r2 = np.where(noma, np.log1p(x2 * lay.h2 / (x1 * lay.h2 + s2)), 0.0)
    cost = np.where(noma, np.log((lay.h1 * x2 + s2)
                                 / (lay.h1 * np.maximum(x1, p_min))), 0.0)
    rates = (np.bincount(lay.sp1[act], r1[act], minlength=inst.S)
             + np.bincount(lay.sp2[noma], r2[noma], minlength=inst.S))
    return float(np.sum(r1) + np.sum(r2) - V * np.sum(cost)), rates


def _surrogate_terms(inst, lay: _Layout, x1, x2, q1, q2, p_min=P_MIN):
    s2, V = inst.noise_var, inst.cost_V
    act = lay.kind > 0
    noma = lay.noma
    c1, c2 = _slopes(inst, lay, q1, q2)
    r1 = np.where(act, np.log1p(x1 * lay.h1 / s2), 0.0)
    r2 = np.where(noma, np.log(s2 + (x1 + x2) * lay.h2)
                  - (np.log(s2 + q1 * lay.h2) + c2 * (x1 - q1)), 0.0)
    cost = np.where(noma, (np.log(s2 + q2 * lay.h1) + c1 * (x2 - q2))
                    - np.log(np.maximum(x1, p_min) * lay.h1), 0.0)
    rates = (np.bincount(lay.sp1[act], r1[act], minlength=inst.S)
             + np.bincount(lay.sp2[noma], r2[noma], minlength=inst.S))
    return float(np.sum(r1) + np.sum(r2) - V * np.sum(cost)), rates


def surrogate_objective(inst: NetworkInstance, H, decision: AccessDecision, P,
                        expansion) -> float:
    """Concave minorant of the power objective, tangent at ``expansion``.

    Every subtracted logarithm, ``log(p1 h2 + s2)`` in a second-user rate and
    ``log(p2 h1 + s2)`` in the NOMA cost, is replaced by its first-order
    expansion.  Returned in ``log_base`` units and without the constant
    ``A`` charge, like :func:`~dynaccess.netmodel.power_objective`.
    """
    lay = _layout(inst, _gains(H), decision)
    x1, x2 = lay.split(P)
    q1, q2 = lay.split(expansion)
    value, _ = _surrogate_terms(inst, lay, x1, x2, q1, q2)
    return value / inst.ln_base


def surrogate_sp_rate(inst: NetworkInstance, H, decision: AccessDecision, P,
                      expansion, s: int) -> float:
    """Linearized rate of SP ``s``; never above the true rate."""
    lay = _layout(inst, _gains(H), decision)
    x1, x2 = lay.split(P)
    q1, q2 = lay.split(expansion)
    _, rates = _surrogate_terms(inst, lay, x1, x2, q1, q2)
    return float(rates[s]) / inst.ln_base


def _sic_gap(inst, lay, x1, x2):
    return np.where(lay.noma, lay.h1 / inst.noise_var * (x2 - x1) - inst.P_d,
                    0.0)


def lagrangian(inst: NetworkInstance, H, decision: AccessDecision, P,
               duals: DualVariables, expansion) -> float:
    """Lagrangian of the surrogate problem, in nats."""
    lay = _layout(inst, _gains(H), decision)
    p = _powers(P)
    x1, x2 = lay.split(p)
    q1, q2 = lay.split(expansion)
    J, rates = _surrogate_terms(inst, lay, x1, x2, q1, q2)
    R = inst.rate_targets * inst.ln_base
    served = decision.alpha.sum(axis=0)
    used = float(np.sum(x1) + np.sum(x2))
    return (J + float(duals.lam @ (rates - R))
            + float(duals.gamma @ _sic_gap(inst, lay, x1, x2))
            - float(np.sum(duals.zeta * (p - served * inst.P_max)))
            - duals.eta * (used - inst.P_max))


def lagrangian_gradient(inst: NetworkInstance, H, decision: AccessDecision, P,
                        duals: DualVariables, expansion) -> np.ndarray:
    """Analytic gradient of :func:`lagrangian` with respect to ``P``."""
    h = _gains(H)
    lay = _layout(inst, h, decision)
    p = _powers(P)
    x1, x2 = lay.split(p)
    q1, q2 = lay.split(expansion)
    c1, c2 = _slopes(inst, lay, q1, q2)
    s2, V = inst.noise_var, inst.cost_V
    grad = -duals.zeta.copy()
    for n in np.flatnonzero(lay.kind > 0):
        a = 1.0 + duals.lam[lay.sp1[n]]
        k1 = lay.u1[n]
        h1 = lay.h1[n]
        own = a * h1 / (s2 + x1[n] * h1)
        if lay.kind[n] == 1:
            grad[k1, n] += own - duals.eta
            continue
        b = 1.0 + duals.lam[lay.sp2[n]]
        k2, h2 = lay.u2[n], lay.h2[n]
        g = duals.gamma[n] * h1 / s2
        shared = b * h2 / (s2 + (x1[n] + x2[n]) * h2)
        grad[k1, n] += (own + shared - b * c2[n]
                        + V / max(x1[n], P_MIN) - g - duals.eta)
        grad[k2, n] += shared - V * c1[n] + g - duals.eta
    return grad


# ----------------------------------------------------------------------------
# Closed-form primal update
# ----------------------------------------------------------------------------

@dataclass
class ClosedFormContext:
    """Data of one subcarrier needed by :func:`closed_form_update`."""

    n: int
    mode: str
    k1: int
    k2: int
    h1: float
    h2: float
    sp1: int
    sp2: int
    q1: float
    q2: float
    noise_var: float
    cost_V: float
    P_d: float
    P_max: float

    def d_coefficients(self, duals: DualVariables, variant: str = 'derived'):
        """``(D1, D2, Q)`` for NOMA or ``(D, None, None)`` for OMA.

        ``D`` collects the terms of the Lagrangian's derivative that do not
        depend on the powers of this subcarrier.
        """
        s2 = self.noise_var
        eta = duals.eta
        if self.mode == 'oma':
            return -duals.zeta[self.k1, self.n] - eta, None, None
        a = 1.0 + duals.lam[self.sp1]
        b = 1.0 + duals.lam[self.sp2]
        V = self.cost_V
        g = duals.gamma[self.n] * self.h1 / s2
        z1 = duals.zeta[self.k1, self.n]
        z2 = duals.zeta[self.k2, self.n]
        c1 = self.h1 / (s2 + self.q2 * self.h1)
        c2 = self.h2 / (s2 + self.q1 * self.h2)
        if variant == 'derived':
            D1 = -b * c2 - g - z1 - eta
            D2 = -V * c1 + g - z2 - eta
            Q = D1 - D2
        elif variant == 'printed':
            D1 = b * c2 + g - z1 - eta
            D2 = -V * self.h2 / (s2 + self.q2 * self.h2) + g - z2 - eta
            Q = -D2 * b / a + D1
        else:
            raise ContractError(f'unknown variant {variant!r}')
        return D1, D2, Q

    def local_lagrangian(self, duals: DualVariables, p1: float,
                         p2: float = 0.0) -> float:
        """Terms of the surrogate Lagrangian that involve this subcarrier."""
        s2, V = self.noise_var, self.cost_V
        a = 1.0 + duals.lam[self.sp1]
        val = a * math.log1p(p1 * self.h1 / s2) - duals.eta * (p1 + p2)
        val -= duals.zeta[self.k1, self.n] * p1
        if self.mode == 'oma':
            return val
        b = 1.0 + duals.lam[self.sp2]
        c1 = self.h1 / (s2 + self.q2 * self.h1)
        c2 = self.h2 / (s2 + self.q1 * self.h2)
        val += b * (math.log(s2 + (p1 + p2) * self.h2) - c2 * p1)
        val += V * (math.log(max(p1, P_MIN) * self.h1) - c1 * p2)
        val += duals.gamma[self.n] * (self.h1 / s2 * (p2 - p1) - self.P_d)
        val -= duals.zeta[self.k2, self.n] * p2
        return val


def closed_form_contexts(inst: NetworkInstance, H, decision: AccessDecision,
                         expansion) -> List[ClosedFormContext]:
    """One context per active subcarrier."""
    lay = _layout(inst, _gains(H), decision)
    q1, q2 = lay.split(expansion)
    out = []
    for n in np.flatnonzero(lay.kind > 0):
        noma = lay.kind[n] == 2
        out.append(ClosedFormContext(
            n=int(n), mode='noma' if noma else 'oma', k1=int(lay.u1[n]),
            k2=int(lay.u2[n]), h1=float(lay.h1[n]), h2=float(lay.h2[n]),
            sp1=int(lay.sp1[n]), sp2=int(lay.sp2[n]), q1=float(q1[n]),
            q2=float(q2[n]), noise_var=inst.noise_var, cost_V=inst.cost_V,
            P_d=inst.P_d, P_max=inst.P_max))
    return out


def closed_form_update(ctx: ClosedFormContext, duals: DualVariables,
                       variant: str = 'derived', p_min: float = P_MIN):
    """Stationary powers of one subcarrier for fixed multipliers.

    OMA returns ``p = [-(1 + lam) / D - s2 / h]^+``.  NOMA returns
    ``(p1, p2)``: the pair total from the second user's water-filling
    condition, then ``p1`` from the quadratic
    ``Q h1 p^2 + (h1 (1 + lam1 + V) + s2 Q) p + V s2 = 0``.  Roots outside
    ``(0, pn)`` are discarded and the survivor with the larger local
    Lagrangian is kept; with no survivor the two boundary splits
    ``p1 = p_min`` and ``p1 = pn - p_min`` are compared instead.

    Unbounded water levels (``D >= 0``) are clipped at ``P_max``.
    """
    s2 = ctx.noise_var
    D1, D2, Q = ctx.d_coefficients(duals, variant)
    a = 1.0 + duals.lam[ctx.sp1]
    if ctx.mode == 'oma':
        if D1 >= 0:
            return ctx.P_max
        return min(max(-a / D1 - s2 / ctx.h1, 0.0), ctx.P_max)
    b = 1.0 + duals.lam[ctx.sp2]
    w = b if variant == 'derived' else a
    pn = ctx.P_max if D2 >= 0 else min(max(-w / D2 - s2 / ctx.h2, 0.0),
                                       ctx.P_max)
    if pn <= 2 * p_min:
        return min(p_min, pn / 2), max(pn - p_min, pn / 2)
    V, h1 = ctx.cost_V, ctx.h1
    B = h1 * (a + V) + s2 * Q
    C = V * s2
    roots = []
    if abs(Q) < 1e-12:
        if B != 0:
            roots = [-C / B]
    else:
        disc = B * B - 4 * Q * h1 * C
        if disc >= 0:
            sq = math.sqrt(disc)
            roots = [(-B + sq) / (2 * Q * h1), (-B - sq) / (2 * Q * h1)]
    cands = [r for r in roots if 0 < r < pn]
    if not cands:
        cands = [p_min, pn - p_min]
    best = max(cands, key=lambda r: ctx.local_lagrangian(duals, r, pn - r))
    return best, pn - best


def dual_ascent_step(inst: NetworkInstance, H, decision: AccessDecision, P,
                     duals: DualVariables, step_size: float,
                     expansion=None) -> DualVariables:
    """One projected subgradient step on the dual.

    Each multiplier grows when its constraint is violated and shrinks when
    it is slack; all are projected back onto the nonnegative orthant.  The
    SP rates are the linearized ones at ``expansion`` (``P`` if omitted).
    """
    h = _gains(H)
    lay = _layout(inst, h, decision)
    p = _powers(P)
    x1, x2 = lay.split(p)
    q1, q2 = lay.split(P if expansion is None else expansion)
    _, rates = _surrogate_terms(inst, lay, x1, x2, q1, q2)
    R = inst.rate_targets * inst.ln_base
    served = decision.alpha.sum(axis=0)
    lam = np.maximum(duals.lam - step_size * (rates - R), 0.0)
    gamma = np.maximum(duals.gamma - step_size * _sic_gap(inst, lay, x1, x2),
                       0.0)
    zeta = np.maximum(duals.zeta + step_size * (p - served * inst.P_max), 0.0)
    used = float(np.sum(x1) + np.sum(x2))
    eta = max(duals.eta + step_size * (used - inst.P_max), 0.0)
    return DualVariables(lam, gamma, zeta, eta)


# ----------------------------------------------------------------------------
# DC loop
# ----------------------------------------------------------------------------

@dataclass
class DcState:
    """One accepted DC iterate."""

    t2: int
    objective: float
    merit: float
    surrogate: float
    max_violation: float
    inner_iters: int
    step: float
    duals: tuple


@dataclass
class PowerResult:
    powers: PowerMatrix
    duals: DualVariables
    expansion: PowerMatrix
    trace: List[DcState] = field(default_factory=list)
    converged: bool = False
    surrogate_feasible: bool = True
    dc_iters: int = 0

    @property
    def objectives(self) -> np.ndarray:
        return np.array([s.objective for s in self.trace])

    @property
    def merits(self) -> np.ndarray:
        return np.array([s.merit for s in self.trace])


def _violation(inst, lay, x1, x2, rates):
    R = inst.rate_targets * inst.ln_base
    gap = _sic_gap(inst, lay, x1, x2)
    sic = float(np.max(-gap[lay.noma], initial=0.0))
    rate = float(np.max(R - rates, initial=0.0)) / inst.ln_base
    power = float(np.sum(x1) + np.sum(x2)) - inst.P_max
    return max(0.0, sic, rate, power)


def _merit(inst, lay, x1, x2, cap):
    obj, rates = _true_terms(inst, lay, x1, x2)
    R = inst.rate_targets * inst.ln_base
    short = np.maximum(R - rates, 0.0)
    return obj, obj - cap * float(np.sum(short)), rates


def _exact_inner(inst, lay, q1, q2, lam, eta, cfg):
    c1, c2 = _slopes(inst, lay, q1, q2)
    N = lay.kind.size
    x1 = np.zeros(N)
    xn = np.zeros(N)
    gam = np.zeros(N)
    R = inst.rate_targets * inst.ln_base
    eta, sweeps, ok = kern.solve_duals(
        lam, eta, R, cfg.lambda_cap, inst.P_max, lay.kind, lay.h1, lay.h2,
        lay.sp1, lay.sp2, c1, c2, q1, lay.delta, inst.cost_V,
        inst.noise_var, cfg.p_min, x1, xn, gam, cfg.max_sweeps, cfg.dual_tol)
    x2 = np.where(lay.noma, xn - x1, 0.0)
    return x1, x2, gam, eta, sweeps


def _subgradient_inner(inst, h, decision, lay, expansion, duals, cfg):
    K = inst.K
    ctxs = closed_form_contexts(inst, h, decision, expansion)
    p = np.zeros((K, inst.N))
    t = 0
    for t in range(cfg.max_dual_iters):
        new = np.zeros_like(p)
        for ctx in ctxs:
            out = closed_form_update(ctx, duals, cfg.variant, cfg.p_min)
            if ctx.mode == 'oma':
                new[ctx.k1, ctx.n] = out
            else:
                new[ctx.k1, ctx.n], new[ctx.k2, ctx.n] = out
        step = cfg.step_a / (cfg.step_b + t)
        nd = dual_ascent_step(inst, h, decision, new, duals, step, expansion)
        change = max(float(np.max(np.abs(new - p))),
                     float(np.max(np.abs(nd.lam - duals.lam), initial=0)),
                     float(np.max(np.abs(nd.gamma - duals.gamma), initial=0)),
                     abs(nd.eta - duals.eta))
        p, duals = new, nd
        if change < cfg.eps_inner:
            break
    total = p.sum()
    if total > inst.P_max:
        p *= inst.P_max / total
    x1, x2 = lay.split(p)
    return x1, x2, duals, t + 1


def water_filling(gains, P_total, noise_var=1.0, weights=None):
    """Classical water-filling ``p_i = [w_i / eta - noise / g_i]^+`` with
    ``sum p = P_total``, computed by bisection on the water level."""
    g = np.asarray(gains, dtype=float)
    w = np.ones_like(g) if weights is None else np.asarray(weights, float)
    lo, hi = 0.0, float(np.max(w * g / noise_var))
    total = lambda eta: np.sum(np.maximum(w / eta - noise_var / g, 0.0))
    # eta in (0, hi]: total(hi) = 0 and total -> inf as eta -> 0
    lo = hi
    while total(lo) < P_total:
        lo /= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > P_total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    eta = 0.5 * (lo + hi)
    return np.maximum(w / eta - noise_var / g, 0.0)


def dc_power_allocation(inst: NetworkInstance, H, decision: AccessDecision,
                        init=None, cfg: Optional[PowerConfig] = None,
                        duals: Optional[DualVariables] = None) -> PowerResult:
    """Successive convex approximation of the power problem.

    Each outer iteration linearizes at the current powers, solves the
    surrogate, and accepts the result if it does not lower the merit
    ``objective - lambda_cap * sum(rate shortfall)``.  Because the surrogate
    is a tangent minorant, accepted iterates ascend; the loop stops when
    successive iterates are within ``eps_p`` or after ``max_dc_iters``.

    Parameters
    ----------
    init : PowerMatrix, optional
        Starting powers; entries of unassigned users are ignored.  Defaults
        to the budget spread evenly over the assigned users.

    Returns
    -------
    PowerResult
        Powers are zero on every unassigned (user, subcarrier).
    """
    cfg = cfg or PowerConfig()
    h = _gains(H)
    K, N = inst.K, inst.N
    lay = _layout(inst, h, decision)
    n_users = int(np.sum(lay.kind > 0) + np.sum(lay.noma))

    if init is None:
        p0 = np.full((K, N), inst.P_max / max(n_users, 1))
    else:
        p0 = np.array(_powers(init), dtype=float)
    x1, x2 = lay.split(p0)
    used = float(np.sum(x1) + np.sum(x2))
    if used > inst.P_max:
        x1, x2 = x1 * inst.P_max / used, x2 * inst.P_max / used

    duals = duals.copy() if duals is not None else DualVariables.zeros(inst)
    lam = duals.lam.copy()
    eta = duals.eta if duals.eta > 0 else n_users / inst.P_max
    gamma = np.zeros(N)
    cap = cfg.lambda_cap

    obj, merit, rates = _merit(inst, lay, x1, x2, cap)
    gap = _sic_gap(inst, lay, x1, x2)
    hard_ok = (np.all(gap[lay.noma] >= -1e-12)
               and float(np.sum(x1) + np.sum(x2)) <= inst.P_max * (1 + 1e-12))
    trace: List[DcState] = []
    lb = inst.ln_base
    if hard_ok:
        trace.append(DcState(0, obj / lb, merit / lb, obj / lb,
                             _violation(inst, lay, x1, x2, rates), 0, 0.0,
                             (0.0, 0.0, 0.0, 0.0)))
    expansion = (x1, x2)
    last_duals = DualVariables(lam, gamma, np.zeros((K, N)), 0.0)
    converged = False
    surrogate_ok = True
    t2 = 0
    if not np.any(lay.kind > 0):
        return PowerResult(PowerMatrix(np.zeros((K, N))), last_duals,
                           PowerMatrix(np.zeros((K, N))), trace, True, True, 0)

    for t2 in range(1, cfg.max_dc_iters + 1):
        q1, q2 = x1, x2
        if cfg.inner == 'exact':
            lam_try = lam.copy()
            y1, y2, g, e, inner = _exact_inner(inst, lay, q1, q2, lam_try,
                                               eta, cfg)
            d_try = DualVariables(lam_try, g, np.zeros((K, N)), e)
        else:
            qmat = PowerMatrix(lay.assemble(K, q1, q2))
            y1, y2, d_try, inner = _subgradient_inner(
                inst, h, decision, lay, qmat, last_duals, cfg)
        new_obj, new_merit, new_rates = _merit(inst, lay, y1, y2, cap)
        accept = (not trace) or new_merit >= merit - 1e-12 * (1 + abs(merit))
        if not accept:
            converged = True
            break
        step = float(np.sqrt(np.sum((y1 - x1) ** 2 + (y2 - x2) ** 2)))
        sur, _ = _surrogate_terms(inst, lay, y1, y2, q1, q2)
        x1, x2 = y1, y2
        obj, merit, rates = new_obj, new_merit, new_rates
        expansion = (q1, q2)
        last_duals = d_try
        if cfg.inner == 'exact':
            lam, eta = d_try.lam.copy(), d_try.eta
        surrogate_ok = bool(np.all(d_try.lam < cap * (1 - 1e-9)))
        trace.append(DcState(t2, obj / lb, merit / lb, sur / lb,
                             _violation(inst, lay, x1, x2, rates), inner,
                             step, d_try.norms()))
        if step <= cfg.eps_p:
            converged = True
            break

    powers = PowerMatrix(lay.assemble(K, x1, x2))
    exp_mat = PowerMatrix(lay.assemble(K, *expansion))
    # zeta is never active: the total budget already bounds every entry
    return PowerResult(powers, last_duals, exp_mat, trace, converged,
                       surrogate_ok, t2)


def write_trace(result: PowerResult, path_or_stream) -> None:
    """Write one line per accepted DC iterate: ``t2 inner objective merit
    surrogate max_violation step |lam| |gamma| |zeta| eta``."""
    lines = ['t2 inner objective merit surrogate max_violation step '
             'lam_norm gamma_norm zeta_norm eta']
    for s in result.trace:
        vals = [s.objective, s.merit, s.surrogate, s.max_violation, s.step,
                *s.duals]
        lines.append(f'{s.t2} {s.inner_iters} '
                     + ' '.join('%.10g' % v for v in vals))
    text = '\n'.join(lines) + '\n'
    if hasattr(path_or_stream, 'write'):
        path_or_stream.write(text)
    else:
        with open(path_or_stream, 'w') as fh:
            fh.write(text)
