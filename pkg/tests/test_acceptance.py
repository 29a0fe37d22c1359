"""Acceptance suite: one test and one reported pass/fail line per criterion.

The Monte Carlo criteria are slow (the whole module takes tens of minutes on
one core); run ``pytest tests/test_acceptance.py -s`` to watch the lines as
they are produced.
"""

import itertools

import numpy as np
import pytest

from dynaccess.assignment import build_step1, solve_step1
from dynaccess.cli import (main, parse_config, run_oracle_comparison,
                           run_sweep)
from dynaccess.milp import solve_milp
from dynaccess.netmodel import (AccessDecision, ChannelModelParams,
                                NetworkInstance, PowerMatrix, generate_instance,
                                power_objective, sp_rate, sp_rates,
                                total_utility)
from dynaccess.power import (closed_form_contexts, closed_form_update,
                             dc_power_allocation, lagrangian,
                             lagrangian_gradient, surrogate_objective,
                             surrogate_sp_rate)

MODES = ('hybrid', 'oma', 'noma')


def paired(raw, value, a, b, col):
    """Per-trial values of column ``col`` for modes ``a`` and ``b``."""
    def pick(m):
        rows = sorted((r for r in raw if r[0] == value and r[1] == m),
                      key=lambda r: r[2])
        return np.array([float(r[col]) for r in rows])
    return pick(a), pick(b)


def mean_se(d):
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size))


def fd_gradient(f, p, step=1e-6):
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        a, b = p.copy(), p.copy()
        a[idx] += step
        b[idx] -= step
        g[idx] = (f(a) - f(b)) / (2 * step)
    return g


def bisection_waterfill(g, P_total, noise=1.0):
    lo, hi = 0.0, P_total + noise / g.min()
    for _ in range(300):
        mu = 0.5 * (lo + hi)
        if np.maximum(mu - noise / g, 0.0).sum() > P_total:
            hi = mu
        else:
            lo = mu
    return np.maximum(0.5 * (lo + hi) - noise / g, 0.0)


def random_decision(rng, h, p_noma=0.5):
    K, N = h.shape
    first, second = np.full(N, -1), np.full(N, -1)
    for n in range(N):
        a, b = rng.choice(K, size=2, replace=False)
        if h[b, n] > h[a, n]:
            a, b = b, a
        first[n] = a
        if rng.random() < p_noma:
            second[n] = b
    return AccessDecision.from_pairs(K, first, second)


# ----------------------------------------------------------------------------
# 1. Oracle gap
# ----------------------------------------------------------------------------

@pytest.mark.parametrize('N, bound', [(3, 0.07), (4, 0.075)])
def test_oracle_gap(report, N, bound):
    cfg = parse_config(f'K = 6\nN = {N}\nrs = 12\ntrials = 50\nvalues = 20')
    agg, _ = run_oracle_comparison(cfg)
    _, T, counted, _, _, gap, se, worst = agg[0]
    ok = counted >= 50 and gap <= bound
    report(1, f'oracle gap K=6 N={N}', ok,
           f'mean gap {gap:.4f} (se {se:.4f}, max {worst:.4f}) over '
           f'{counted}/{T} seeds, bound {bound}')
    assert ok


# ----------------------------------------------------------------------------
# 2 and 3. Hybrid dominance and outage ordering
# ----------------------------------------------------------------------------

@pytest.fixture(scope='module')
def monte_carlo():
    pmax = parse_config('sweep = pmax\nvalues = 16, 18, 20\ntrials = 500')
    rs = parse_config('sweep = rs\nvalues = 50\ntrials = 500')
    return {'pmax': run_sweep(pmax)[1], 'rs': run_sweep(rs)[1]}


def test_hybrid_dominance(report, monte_carlo):
    raw = monte_carlo['pmax']
    lines = []
    ok = True
    for other in ('oma', 'noma'):
        h, o = paired(raw, 20.0, 'hybrid', other, 4)
        m, se = mean_se(h - o)
        ok &= h.size >= 200 and m >= -se
        lines.append(f'vs {other} {m:+.3f} (se {se:.3f})')
    h, o = paired(raw, 18.0, 'hybrid', 'noma', 4)
    sign18 = h.mean() > o.mean()
    h, o = paired(monte_carlo['rs'], 50.0, 'hybrid', 'oma', 4)
    sign50 = h.mean() > o.mean()
    ok &= sign18 and sign50
    report(2, 'hybrid dominance', ok,
           f"defaults {', '.join(lines)}; hybrid>noma at 18 dB {sign18}; "
           f'hybrid>oma at R_s=50 {sign50}')
    assert ok


def test_outage_ordering(report, monte_carlo):
    points = [('pmax', v) for v in (16.0, 18.0, 20.0)] + [('rs', 50.0)]
    parts = []
    ok = True
    for axis, value in points:
        raw = monte_carlo[axis]
        fail = {m: 1.0 - paired(raw, value, m, m, 3)[0] for m in MODES}
        best = min(('oma', 'noma'), key=lambda m: fail[m].mean())
        d, se = mean_se(fail['hybrid'] - fail[best])
        ok &= fail['hybrid'].size >= 500 and d <= 2 * se
        parts.append(f"{axis}={value:g}: hybrid {fail['hybrid'].mean():.3f}"
                     f" vs {best} {fail[best].mean():.3f} (se {se:.3f})")
    report(3, 'outage ordering', ok, '; '.join(parts))
    assert ok


# ----------------------------------------------------------------------------
# 4. Cost sensitivity
# ----------------------------------------------------------------------------

def test_cost_sensitivity(report):
    cfg = parse_config('sweep = cost\nvalues = 0, 2, 8\nmodes = hybrid\n'
                       'trials = 100')
    agg, _ = run_sweep(cfg)
    frac = [r[9] for r in agg]
    monotone = all(b <= a for a, b in zip(frac, frac[1:]))
    edge = parse_config('sweep = edge\nvalues = 0.5\ncost_a = 0\n'
                        'cost_v = 0\nmodes = noma, oma\ntrials = 200')
    _, raw = run_sweep(edge)
    noma, oma = paired(raw, 0.5, 'noma', 'oma', 4)
    m, se = mean_se(noma - oma)
    ok = monotone and noma.mean() >= oma.mean()
    report(4, 'cost sensitivity', ok,
           f"noma fraction {', '.join(f'{f:.4f}' for f in frac)} for "
           f'A=V=0,2,8; clustered users A=V=0 noma-oma {m:+.3f} (se {se:.3f})')
    assert ok


# ----------------------------------------------------------------------------
# 5. DC ascent
# ----------------------------------------------------------------------------

def dc_instances():
    for seed in range(10):
        inst = NetworkInstance.default(R_s=12.0)
        H = generate_instance(ChannelModelParams(seed=seed), inst)
        res = solve_step1(build_step1(inst, H))
        if res.feasible:
            yield inst, H, res.decision
    for seed, rs in itertools.product(range(20), (0.0, 2.0, 6.0)):
        inst = NetworkInstance.default(K=6, N=4, R_s=rs)
        H = generate_instance(ChannelModelParams(seed=seed), inst)
        yield inst, H, random_decision(np.random.default_rng(seed), H.h)


def test_dc_ascent(report):
    n_inst = steps = drops = infeasible_drops = 0
    merit_ok = True
    tangent = 0.0
    for inst, H, dec in dc_instances():
        res = dc_power_allocation(inst, H, dec)
        n_inst += 1
        for a, b in zip(res.trace, res.trace[1:]):
            steps += 1
            merit_ok &= b.merit >= a.merit - 1e-8 * (1 + abs(a.merit))
            if b.objective < a.objective - 1e-8:
                if a.max_violation <= 1e-9:
                    drops += 1
                else:
                    infeasible_drops += 1
        q = res.expansion
        true_q = power_objective(inst, H, dec, q)
        tangent = max(tangent, abs(surrogate_objective(inst, H, dec, q, q)
                                   - true_q) / max(1.0, abs(true_q)))
        for s in range(inst.S):
            r = sp_rate(inst, H, dec, q, s)
            tangent = max(tangent, abs(surrogate_sp_rate(inst, H, dec, q, q, s)
                                       - r) / max(1.0, abs(r)))
    ok = drops == 0 and merit_ok and tangent <= 1e-12
    report(5, 'DC ascent', ok,
           f'{n_inst} instances, {steps} steps, {drops} objective drops from '
           f'rate-feasible iterates, merit monotone {merit_ok}, max tangency '
           f'error {tangent:.1e}; {infeasible_drops} drops while still '
           f'restoring rate feasibility')
    assert ok


# ----------------------------------------------------------------------------
# 6. KKT stationarity and closed form
# ----------------------------------------------------------------------------

def pair_case(seed):
    rng = np.random.default_rng(seed)
    inst = NetworkInstance(K=2, N=1, S=2, sp_of=(0, 1),
                           R_s=tuple(rng.uniform(0, 1.5, size=2)),
                           P_max=float(rng.uniform(5, 100)))
    h = np.sort(rng.exponential(size=(2, 1)), axis=0)[::-1] + 0.05
    return inst, h, AccessDecision.from_pairs(2, [0], [1])


def pair_grid(inst, h, m=100, rounds=6):
    """Best feasible pair objective on a zooming m-by-m grid."""
    s2, h1, h2 = inst.noise_var, h[0, 0], h[1, 0]
    lo1, hi1, lo2, hi2 = 1e-9, inst.P_max, 0.0, inst.P_max
    best = -np.inf
    for _ in range(rounds):
        p1 = np.linspace(lo1, hi1, m)[:, None]
        p2 = np.linspace(lo2, hi2, m)[None, :]
        r1 = np.log2(1 + p1 * h1 / s2)
        r2 = np.log2(1 + p2 * h2 / (p1 * h2 + s2))
        obj = r1 + r2 - inst.cost_V * np.log2((h1 * p2 + s2) / (h1 * p1))
        ok = ((p1 + p2 <= inst.P_max) & (h1 / s2 * (p2 - p1) >= inst.P_d)
              & (r1 >= inst.R_s[0]) & (r2 >= inst.R_s[1]))
        v = np.where(ok, obj, -np.inf)
        i, j = np.unravel_index(np.argmax(v), v.shape)
        best = v[i, j]
        d1, d2 = 4 * (hi1 - lo1) / (m - 1), 4 * (hi2 - lo2) / (m - 1)
        lo1, hi1 = max(p1[i, 0] - d1, 1e-9), p1[i, 0] + d1
        lo2, hi2 = max(p2[0, j] - d2, 0.0), p2[0, j] + d2
    return best


def test_kkt_stationarity(report):
    grad = mismatch = util_gap = cf_gap = 0.0
    for seed in range(20):
        inst, h, dec = pair_case(seed)
        res = dc_power_allocation(inst, h, dec)
        P = res.powers.p
        L = lambda x: lagrangian(inst, h, dec, x, res.duals, res.expansion)
        fd = fd_gradient(L, P)
        an = lagrangian_gradient(inst, h, dec, P, res.duals, res.expansion)
        grad = max(grad, np.abs(fd).max())
        mismatch = max(mismatch, np.abs(an - fd).max())
        best = pair_grid(inst, h)
        util_gap = max(util_gap, abs(power_objective(inst, h, dec, P) - best)
                       / abs(best))
        ctx = closed_form_contexts(inst, h, dec, res.expansion)[0]
        p1, p2 = closed_form_update(ctx, res.duals)
        pn = p1 + p2
        grid = np.linspace(0, pn, 10 ** 4 + 1)[1:-1]
        top = max(ctx.local_lagrangian(res.duals, r, pn - r) for r in grid)
        val = ctx.local_lagrangian(res.duals, p1, p2)
        cf_gap = max(cf_gap, max(0.0, top - val) / max(1.0, abs(top)))
    ok = grad <= 1e-5 and mismatch <= 1e-5 and util_gap <= 1e-3 \
        and cf_gap <= 1e-3
    report(6, 'KKT stationarity', ok,
           f'20 pairs: max |dL/dp| {grad:.1e}, analytic vs FD {mismatch:.1e}, '
           f'utility vs grid {util_gap:.1e}, closed form vs 1e4 grid '
           f'{cf_gap:.1e}')
    assert ok


# ----------------------------------------------------------------------------
# 7. MILP exactness
# ----------------------------------------------------------------------------

def enumerate_binary(mp):
    lp = mp.lp
    X = np.array(list(itertools.product((0.0, 1.0), repeat=lp.n)))
    ok = np.all(X @ lp.A_ub.T <= lp.b_ub + 1e-9, axis=1)
    if lp.A_eq.shape[0]:
        ok &= np.all(np.abs(X @ lp.A_eq.T - lp.b_eq) <= 1e-9, axis=1)
    vals = np.where(ok, X @ lp.c, -np.inf)
    return vals.max()


def test_milp_exactness(report):
    rng = np.random.default_rng(2024)
    count = worst = consistency = 0.0
    sizes = set()
    statuses_ok = True
    for i in range(100):
        K, N = 3, 2
        h = rng.exponential(size=(K, N)) + 0.05
        P = PowerMatrix(rng.uniform(0.5, 8.0, size=(K, N)))
        inst = NetworkInstance.default(K=K, N=N, R_s=0.0)
        cap = np.array([np.log2(1 + P.p[inst.users_of(s)]
                                * h[inst.users_of(s)]).max(axis=0).sum()
                        for s in range(inst.S)])
        inst = inst.replace(R_s=tuple(rng.uniform(0, 0.9) * cap))
        prob = build_step1(inst, h, P)
        for form in ('linked', 'option'):
            mp = prob.linked_form()[0] if form == 'linked' \
                else prob.option_form()[0]
            sizes.add(mp.lp.n)
            expect = enumerate_binary(mp)
            sol = solve_milp(mp, branching='group' if form == 'option'
                             else 'fractional')
            if np.isfinite(expect):
                statuses_ok &= sol.optimal
                worst = max(worst, abs(sol.objective - expect))
            else:
                statuses_ok &= sol.x is None
            res = solve_step1(prob, form)
            if res.feasible:
                consistency = max(consistency, abs(
                    res.objective - total_utility(inst, h, res.decision, P)))
                statuses_ok &= bool(np.all(
                    sp_rates(inst, h, res.decision, P)
                    >= inst.rate_targets - 1e-9))
        count += 1
    ok = max(sizes) <= 14 and statuses_ok and worst <= 1e-12 \
        and consistency <= 1e-9
    report(7, 'MILP exactness', ok,
           f'{int(count)} instances x 2 encodings, {min(sizes)}-{max(sizes)} '
           f'binaries: max |milp - enumeration| {worst:.1e}, max |objective - '
           f'utility| {consistency:.1e}')
    assert ok


# ----------------------------------------------------------------------------
# 8. Water-filling
# ----------------------------------------------------------------------------

def test_water_filling(report):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        K, N = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        inst = NetworkInstance(K=K, N=N, S=1, sp_of=(0,) * K, R_s=(0.0,),
                               P_max=float(rng.uniform(0.5, 100)))
        h = rng.exponential(size=(K, N)) + 0.02
        users = rng.integers(0, K, size=N)
        dec = AccessDecision.from_pairs(K, users, [-1] * N)
        res = dc_power_allocation(inst, h, dec)
        expect = np.zeros((K, N))
        expect[users, np.arange(N)] = bisection_waterfill(
            h[users, np.arange(N)], inst.P_max)
        worst = max(worst, np.abs(res.powers.p - expect).max())
    ok = worst <= 1e-6
    report(8, 'water-filling', ok,
           f'50 OMA single-SP instances, max |p - bisection| {worst:.1e}')
    assert ok


# ----------------------------------------------------------------------------
# 9. Determinism
# ----------------------------------------------------------------------------

def test_determinism(report, tmp_path):
    cfg = tmp_path / 'det.cfg'
    cfg.write_text('K = 6\nN = 4\nrs = 6\ntrials = 16\nvalues = 18, 20\n')
    outs = {}
    for run, workers in enumerate((1, 1, 8, 8)):
        out = tmp_path / f'run{run}.csv'
        assert main(['sweep', str(cfg), '-o', str(out),
                     '--workers', str(workers)]) == 0
        outs[run] = out.read_bytes()
    ok = len(set(outs.values())) == 1
    report(9, 'determinism', ok,
           f'4 runs with 1, 1, 8, 8 workers; identical CSV bytes {ok}')
    assert ok
