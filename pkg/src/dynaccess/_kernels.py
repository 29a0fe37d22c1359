"""Compiled kernels for the convex power subproblem and the assignment
search.

Everything here works in natural-log units on a per-subcarrier layout:

``kind[n]``
    0 idle, 1 OMA, 2 NOMA.
``h1, h2, sp1, sp2``
    Gain and SP of the OMA / first user and of the second user.
``c1, c2``
    Slopes of the linearized ``log(sigma^2 + p2 h1)`` and
    ``log(sigma^2 + p1 h2)`` terms at the expansion point.
``q1``
    First-user expansion power (for the linearized second-user rate).
``delta``
    SIC separation expressed in power units, ``P_d sigma^2 / h1``.

For fixed SP multipliers ``lam`` and power price ``eta`` the surrogate
Lagrangian separates over subcarriers.  On a NOMA subcarrier, with
``pn = p1 + p2``, it splits into a function of ``p1`` and a function of
``pn`` coupled only by the SIC row ``pn >= 2 p1 + delta``; the SIC
multiplier is recovered from stationarity in ``p2`` when that row binds.
"""

import math

import numpy as np
from numba import njit

_EPS = 1e-300


@njit(cache=True)
def oma_power(a, eta, h, s2):
    """Water-filling ``[a / eta - s2 / h]^+``."""
    if eta <= 0.0:
        return math.inf
    p = a / eta - s2 / h
    return p if p > 0.0 else 0.0


@njit(cache=True)
def _g_prime(p1, a, V, Q, h1, s2):
    return a * h1 / (s2 + p1 * h1) + V / p1 + Q


@njit(cache=True)
def first_user_peak(a, V, Q, h1, s2, pmin):
    """Maximizer over ``p1 >= pmin`` of ``a ln(s2 + p1 h1) + V ln p1 + Q p1``.

    Returns ``inf`` when the function is unbounded above (``Q >= 0``).
    """
    if Q >= 0.0:
        return math.inf
    if V > 0.0:
        # Q h1 p^2 + (a h1 + V h1 + s2 Q) p + V s2 = 0, one positive root
        A = Q * h1
        B = a * h1 + V * h1 + s2 * Q
        C = V * s2
        disc = B * B - 4.0 * A * C
        sq = math.sqrt(disc) if disc > 0.0 else 0.0
        q = -0.5 * (B + sq) if B >= 0.0 else -0.5 * (B - sq)
        r1 = q / A if A != 0.0 else -math.inf
        r2 = C / q if q != 0.0 else -math.inf
        p = r1 if r1 > r2 else r2
    else:
        p = -a / Q - s2 / h1
    return p if p > pmin else pmin


@njit(cache=True)
def noma_power(a, b, V, c1, c2, eta, h1, h2, s2, delta, pmin):
    """Maximize the NOMA part of the surrogate Lagrangian.

    Returns ``(p1, pn, gamma)``.
    """
    Q = V * c1 - b * c2
    w = V * c1 + eta
    pn_free = b / w - s2 / h2 if w > 0.0 else math.inf
    p1_free = first_user_peak(a, V, Q, h1, s2, pmin)
    if p1_free < math.inf and pn_free >= 2.0 * p1_free + delta:
        return p1_free, pn_free, 0.0

    # SIC row binds: pn = 2 p1 + delta; phi'(p1) is decreasing
    def dphi(p):
        pn = 2.0 * p + delta
        return (a * h1 / (s2 + p * h1) + V / p + Q
                + 2.0 * (b * h2 / (s2 + pn * h2) - w))

    lo = pmin
    if dphi(lo) <= 0.0:
        p1 = lo
    else:
        hi = max(2.0 * lo, 1e-6)
        while dphi(hi) > 0.0:
            lo = hi
            hi *= 4.0
        p1 = 0.5 * (lo + hi)
        for _ in range(200):
            f = dphi(p1)
            if f > 0.0:
                lo = p1
            else:
                hi = p1
            pn = 2.0 * p1 + delta
            d2 = (-a * h1 * h1 / (s2 + p1 * h1) ** 2 - V / (p1 * p1)
                  - 4.0 * b * h2 * h2 / (s2 + pn * h2) ** 2)
            step = p1 - f / d2 if d2 < 0.0 else 0.5 * (lo + hi)
            if not (lo < step < hi):
                step = 0.5 * (lo + hi)
            if abs(step - p1) <= 1e-15 * p1 or hi - lo <= 1e-15 * hi:
                p1 = step
                break
            p1 = step
    pn = 2.0 * p1 + delta
    gamma = (s2 / h1) * (w - b * h2 / (s2 + pn * h2))
    if gamma < 0.0:
        gamma = 0.0
    return p1, pn, gamma


@njit(cache=True)
def primal(lam, eta, kind, h1, h2, sp1, sp2, c1, c2, delta, V, s2, pmin,
           p1, pn, gam):
    """Per-subcarrier maximizers for ``(lam, eta)``; returns total power."""
    total = 0.0
    for n in range(kind.size):
        if kind[n] == 1:
            p = oma_power(1.0 + lam[sp1[n]], eta, h1[n], s2)
            p1[n] = p
            pn[n] = p
            gam[n] = 0.0
            total += p
        elif kind[n] == 2:
            x1, xn, g = noma_power(1.0 + lam[sp1[n]], 1.0 + lam[sp2[n]], V,
                                   c1[n], c2[n], eta, h1[n], h2[n], s2,
                                   delta[n], pmin)
            p1[n] = x1
            pn[n] = xn
            gam[n] = g
            total += xn
        else:
            p1[n] = 0.0
            pn[n] = 0.0
            gam[n] = 0.0
    return total


@njit(cache=True)
def solve_eta(lam, eta0, Pmax, kind, h1, h2, sp1, sp2, c1, c2, delta, V, s2,
              pmin, p1, pn, gam):
    """Price ``eta >= 0`` making the total power equal ``Pmax`` (or ``eta=0``
    if the unpriced optimum already fits).  Leaves the primal in the output
    arrays and returns ``eta``."""
    has_oma = False
    active = False
    for n in range(kind.size):
        if kind[n] == 1:
            has_oma = True
        if kind[n] != 0:
            active = True
    if not active:
        primal(lam, 0.0, kind, h1, h2, sp1, sp2, c1, c2, delta, V, s2, pmin,
               p1, pn, gam)
        return 0.0
    if not has_oma and V > 0.0:
        t0 = primal(lam, 0.0, kind, h1, h2, sp1, sp2, c1, c2, delta, V, s2,
                    pmin, p1, pn, gam)
        if t0 <= Pmax:
            return 0.0

    def excess(u):
        return primal(lam, math.exp(u), kind, h1, h2, sp1, sp2, c1, c2,
                      delta, V, s2, pmin, p1, pn, gam) - Pmax

    u0 = math.log(eta0) if eta0 > 0.0 else 0.0
    f0 = excess(u0)
    if f0 == 0.0:
        return math.exp(u0)
    step = 0.05
    if f0 > 0.0:
        ua, fa = u0, f0
        ub = u0 + step
        fb = excess(ub)
        while fb > 0.0:
            ua, fa = ub, fb
            step *= 4.0
            ub = ub + step
            fb = excess(ub)
    else:
        ub, fb = u0, f0
        ua = u0 - step
        fa = excess(ua)
        while fa <= 0.0:
            ub, fb = ua, fa
            step *= 4.0
            ua = ua - step
            fa = excess(ua)
            if ua < -700.0:
                break
    # Illinois regula falsi on [ua, ub] with fa > 0 >= fb
    side = 0
    tol_f = 1e-13 * Pmax
    for _ in range(200):
        if ub - ua <= 1e-15 * max(1.0, abs(ub)):
            break
        um = (ua * fb - ub * fa) / (fb - fa)
        if not (ua < um < ub):
            um = 0.5 * (ua + ub)
        fm = excess(um)
        if abs(fm) <= tol_f:
            ub, fb = um, fm
            break
        if fm > 0.0:
            ua, fa = um, fm
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            ub, fb = um, fm
            if side == -1:
                fa *= 0.5
            side = -1
    # finish on the budget-feasible side
    excess(ub)
    return math.exp(ub)


@njit(cache=True)
def surrogate_rates(kind, h1, h2, sp1, sp2, c2, q1, s2, p1, pn, S):
    """Linearized per-SP rates (nats) of the primal in ``p1, pn``."""
    r = np.zeros(S)
    for n in range(kind.size):
        if kind[n] == 1:
            r[sp1[n]] += math.log1p(p1[n] * h1[n] / s2)
        elif kind[n] == 2:
            r[sp1[n]] += math.log1p(p1[n] * h1[n] / s2)
            r[sp2[n]] += (math.log(s2 + pn[n] * h2[n])
                          - math.log(s2 + q1[n] * h2[n])
                          - c2[n] * (p1[n] - q1[n]))
    return r


@njit(cache=True)
def _shortfall(x, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1,
               delta, V, s2, pmin, p1, pn, gam):
    """Set ``lam[s] = expm1(x)``, re-solve ``eta`` and return the rate
    shortfall of SP ``s`` with the new ``eta``."""
    lam[s] = math.expm1(x)
    e = solve_eta(lam, eta, Pmax, kind, h1, h2, sp1, sp2, c1, c2, delta, V,
                  s2, pmin, p1, pn, gam)
    r = surrogate_rates(kind, h1, h2, sp1, sp2, c2, q1, s2, p1, pn, lam.size)
    return R[s] - r[s], e


@njit(cache=True)
def solve_duals(lam, eta, R, cap, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1,
                delta, V, s2, pmin, p1, pn, gam, max_sweeps, tol):
    """Coordinate-wise exact minimization of the dual over ``lam`` in
    ``[0, cap]^S`` with ``eta`` solved exactly for every trial ``lam``.

    ``lam`` is updated in place.  Returns ``(eta, sweeps, converged)``.
    """
    S = lam.size
    eta = solve_eta(lam, eta, Pmax, kind, h1, h2, sp1, sp2, c1, c2, delta,
                    V, s2, pmin, p1, pn, gam)
    xcap = math.log1p(cap)
    converged = False
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        moved = 0.0
        for s in range(S):
            old = lam[s]

            x0 = math.log1p(old)
            f0, e0 = _shortfall(x0, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1, delta, V, s2, pmin, p1, pn, gam)
            if abs(f0) <= tol * max(1.0, R[s]):
                eta = e0
                continue
            if f0 < 0.0:
                # surplus: move toward zero
                if x0 == 0.0:
                    eta = e0
                    continue
                fz, ez = _shortfall(0.0, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1, delta, V, s2, pmin, p1, pn, gam)
                if fz <= 0.0:
                    lam[s] = 0.0
                    eta = ez
                    moved = max(moved, old)
                    continue
                xa, fa, xb, fb = 0.0, fz, x0, f0
            else:
                if x0 >= xcap:
                    eta = e0
                    continue
                # shortfall: increase lam_s, geometric bracket search
                xa, fa = x0, f0
                xb = x0 + 0.1
                fb = 0.0
                while True:
                    if xb >= xcap:
                        xb = xcap
                    fb, eb = _shortfall(xb, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1, delta, V, s2, pmin, p1, pn, gam)
                    if fb <= 0.0 or xb >= xcap:
                        break
                    xa, fa = xb, fb
                    xb = xa + 2.0 * (xb - x0 + 0.1)
                if fb > 0.0:
                    lam[s] = cap
                    eta = eb
                    moved = max(moved, abs(cap - old) / (1.0 + old))
                    continue
            # Illinois on [xa, xb] with fa > 0 >= fb
            side = 0
            xm = xb
            em = eta
            for _ in range(200):
                if xb - xa <= 1e-15 * max(1.0, xb):
                    break
                xm = (xa * fb - xb * fa) / (fb - fa)
                if not (xa < xm < xb):
                    xm = 0.5 * (xa + xb)
                fm, em = _shortfall(xm, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1, delta, V, s2, pmin, p1, pn, gam)
                if abs(fm) <= tol * max(1.0, R[s]):
                    xb = xm
                    break
                if fm > 0.0:
                    xa, fa = xm, fm
                    if side == 1:
                        fb *= 0.5
                    side = 1
                else:
                    xb, fb = xm, fm
                    if side == -1:
                        fa *= 0.5
                    side = -1
            f_end, eta = _shortfall(xb, s, lam, eta, R, Pmax, kind, h1, h2, sp1, sp2, c1, c2, q1, delta, V, s2, pmin, p1, pn, gam)
            moved = max(moved, abs(lam[s] - old) / (1.0 + old))
        if moved <= 1e-11:
            converged = True
            break
    eta = solve_eta(lam, eta, Pmax, kind, h1, h2, sp1, sp2, c1, c2, delta, V,
                    s2, pmin, p1, pn, gam)
    return eta, sweeps, converged


# ----------------------------------------------------------------------------
# Assignment: exact pairing of two enumerated halves
# ----------------------------------------------------------------------------

@njit(cache=True)
def split_search(va, ra, vb, rb, need, budget):
    """Best ``va[i] + vb[j]`` with ``ra[i] + rb[j] >= need`` in every column.

    ``va`` and ``vb`` must be sorted in decreasing order.  The scan over
    ``j`` stops at the first feasible partner or as soon as the pair can no
    longer beat the incumbent; the scan over ``i`` stops once even the best
    partner cannot.  Returns ``(i, j, status)`` with ``i = j = -1`` when no
    pair is feasible, and ``status = 1`` when more than ``budget`` pairs
    were examined.
    """
    S = need.size
    best = -math.inf
    bi = -1
    bj = -1
    ops = 0
    rb_max = np.empty(S)
    for s in range(S):
        rb_max[s] = -math.inf
        for j in range(vb.size):
            if rb[j, s] > rb_max[s]:
                rb_max[s] = rb[j, s]
    for i in range(va.size):
        if va[i] + vb[0] <= best:
            break
        reachable = True
        for s in range(S):
            if ra[i, s] + rb_max[s] < need[s]:
                reachable = False
                break
        if not reachable:
            continue
        for j in range(vb.size):
            ops += 1
            if va[i] + vb[j] <= best:
                break
            ok = True
            for s in range(S):
                if ra[i, s] + rb[j, s] < need[s]:
                    ok = False
                    break
            if ok:
                best = va[i] + vb[j]
                bi = i
                bj = j
                break
        if ops > budget:
            return bi, bj, 1
    return bi, bj, 0
