import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynaccess import assignment
from dynaccess.assignment import Mode, build_step1, solve_step1
from dynaccess.milp import MilpSolution, Status
from dynaccess.netmodel import (AccessDecision, ChannelModelParams,
                                ContractError, NetworkInstance,
                                check_feasibility,
                                generate_instance, sp_rates, total_utility)
from dynaccess.power import dc_power_allocation
from dynaccess.solver import (SolverConfig, exhaustive_oracle,
                              oracle_option_count, outage_probability,
                              run_trial, solve, trial_seed)


def realization(seed, **kw):
    inst = NetworkInstance.default(**kw)
    return inst, generate_instance(ChannelModelParams(seed=seed), inst)


def pair_grid(inst, h1, h2, sp1, sp2, m=201, rounds=6):
    """Best utility of one NOMA pair by a zooming grid over its powers."""
    s2, lb = inst.noise_var, math.log(inst.log_base)
    lo1, hi1, lo2, hi2 = 1e-9, inst.P_max, 0.0, inst.P_max
    best = -np.inf
    for _ in range(rounds):
        p1 = np.linspace(lo1, hi1, m)[:, None]
        p2 = np.linspace(lo2, hi2, m)[None, :]
        r1 = np.log1p(p1 * h1 / s2) / lb
        r2 = np.log1p(p2 * h2 / (p1 * h2 + s2)) / lb
        obj = r1 + r2 - inst.cost_A \
            - inst.cost_V * np.log((h1 * p2 + s2) / (h1 * p1)) / lb
        rate = np.zeros((inst.S,) + obj.shape)
        rate[sp1] += r1
        rate[sp2] += r2
        ok = ((p1 + p2 <= inst.P_max) & (h1 / s2 * (p2 - p1) >= inst.P_d)
              & np.all(rate >= inst.rate_targets[:, None, None], axis=0))
        v = np.where(ok, obj, -np.inf)
        i, j = np.unravel_index(np.argmax(v), v.shape)
        best = v[i, j]
        if not np.isfinite(best):
            return best
        d1, d2 = 4 * (hi1 - lo1) / (m - 1), 4 * (hi2 - lo2) / (m - 1)
        lo1, hi1 = max(p1[i, 0] - d1, 1e-9), p1[i, 0] + d1
        lo2, hi2 = max(p2[0, j] - d2, 0.0), p2[0, j] + d2
    return best


def assert_consistent(inst, H, rep):
    feas = check_feasibility(inst, H, rep.decision, rep.powers, 1e-6).feasible
    assert rep.feasible == feas
    raw = total_utility(inst, H, rep.decision, rep.powers)
    assert rep.raw_utility == pytest.approx(raw, abs=1e-9)
    assert rep.utility == (rep.raw_utility if rep.feasible else 0.0)
    np.testing.assert_allclose(
        rep.sp_rates, sp_rates(inst, H, rep.decision, rep.powers), atol=1e-9)
    assert rep.noma_fraction == rep.modes.count('noma') / inst.N


# ----------------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------------

@given(st.integers(0, 10 ** 6), st.sampled_from(list(Mode)),
       st.sampled_from([0.0, 4.0, 10.0]))
@settings(max_examples=25, deadline=None)
def test_report_is_self_consistent(seed, mode, rs):
    inst, H = realization(seed, K=6, N=4, R_s=rs)
    rep = solve(inst, H, SolverConfig(mode=mode))
    assert_consistent(inst, H, rep)
    assert rep.outer_iters == len(rep.trace) >= 1
    assert rep.stop_reason in ('converged', 'stalled', 'cycle',
                               'max_outer_iters', 'step1_infeasible',
                               'step1_limit')


@given(st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_step1_never_loses_to_previous_decision(seed):
    inst, H = realization(seed, K=8, N=4, R_s=6.0)
    rep = solve(inst, H)
    for rec in rep.trace[1:]:
        assert rec.step1_objective >= rec.prev_utility - 1e-7


@pytest.mark.parametrize('seed', range(5))
def test_single_user_hybrid_equals_oma(seed):
    inst = NetworkInstance(K=1, N=4, S=1, sp_of=(0,), R_s=(3.0,))
    H = generate_instance(ChannelModelParams(seed=seed), inst)
    a = solve(inst, H)
    b = solve(inst, H, SolverConfig(mode='oma'))
    assert a.utility == b.utility and a.feasible == b.feasible
    np.testing.assert_array_equal(a.powers.p, b.powers.p)
    c = solve(inst, H, SolverConfig(mode='noma'))
    assert c.noma_fallback == 4 and c.utility == a.utility


@pytest.mark.parametrize('seed', range(5))
def test_mode_fixing(seed):
    inst, H = realization(seed, K=6, N=4, R_s=2.0)
    oma = solve(inst, H, SolverConfig(mode='oma'))
    assert not oma.decision.beta.any() and not oma.decision.u.any()
    assert oma.raw_utility == pytest.approx(oma.total_rate, abs=1e-12)
    noma = solve(inst, H, SolverConfig(mode='noma'))
    if noma.feasible:
        # every subcarrier has a valid pair when K >= 2 and gains differ
        assert noma.decision.beta.all()


@pytest.mark.parametrize('seed', range(10))
def test_zero_cost_step1_includes_oma(seed):
    # OMA decisions are feasible for the hybrid assignment problem
    inst, H = realization(seed, K=6, N=4, R_s=0.0, cost_A=0.0, cost_V=0.0)
    hyb = solve_step1(build_step1(inst, H))
    oma = solve_step1(build_step1(inst, H, mode='oma'))
    assert hyb.objective >= oma.objective - 1e-12
    # end to end the pair's SIC ordering costs a little rate, so Hybrid can
    # trail OMA slightly at zero cost; the shortfall stays tiny
    a = solve(inst, H)
    b = solve(inst, H, SolverConfig(mode='oma'))
    assert a.utility >= b.utility * (1 - 1e-3)


def test_step1_infeasible_gives_zero_utility():
    inst, H = realization(0, K=4, N=2, R_s=1e3)
    rep = solve(inst, H)
    assert not rep.feasible and rep.utility == 0.0
    assert rep.stop_reason == 'step1_infeasible'
    assert rep.modes == ['idle', 'idle']


def test_exhausted_step1_is_reported_as_limit(monkeypatch):
    inst, H = realization(0, K=6, N=4, R_s=4.0)
    monkeypatch.setattr(assignment, 'solve_milp', lambda *a, **k: MilpSolution(
        Status.ITERATION_LIMIT, None, np.nan, 1, 1))
    monkeypatch.setattr(assignment, 'split_search',
                        lambda prob: (Status.ITERATION_LIMIT, None))
    rep = solve(inst, H)
    assert rep.stop_reason == 'step1_limit'
    assert not rep.feasible and rep.utility == 0.0


def test_config_contracts():
    for bad in (dict(eps_beta=0.0), dict(eps_p=1.0), dict(max_outer_iters=0),
                dict(max_stall=0), dict(step1_seed='random')):
        with pytest.raises(ContractError):
            SolverConfig(**bad)
    with pytest.raises(ValueError):
        SolverConfig(mode='tdma')


def test_solve_is_deterministic():
    inst, H = realization(3, K=8, N=4, R_s=4.0)
    a, b = solve(inst, H), solve(inst, H)
    assert a.utility == b.utility
    np.testing.assert_array_equal(a.powers.p, b.powers.p)


# ----------------------------------------------------------------------------
# exhaustive oracle
# ----------------------------------------------------------------------------

def test_option_counts():
    assert oracle_option_count(2, 1) == 3
    assert oracle_option_count(6, 3) == 9261
    assert oracle_option_count(6, 4) == 194481


def test_oracle_refuses_large_spaces():
    inst, H = realization(0, K=6, N=4)
    with pytest.raises(ContractError):
        exhaustive_oracle(inst, H, cap=10 ** 5)


@pytest.mark.parametrize('seed', range(10))
def test_oracle_exact_on_two_users(seed):
    inst, H = realization(seed, K=2, N=1, R_s=0.0)
    a, o = solve(inst, H), exhaustive_oracle(inst, H)
    assert a.feasible and o.feasible
    assert o.utility == pytest.approx(a.utility, rel=1e-6)


@pytest.mark.parametrize('seed', range(12))
def test_oracle_matches_grid_double_oracle(seed):
    rng = np.random.default_rng(seed)
    inst = NetworkInstance(K=3, N=1, S=2, sp_of=(0, 1, 0),
                           R_s=tuple(rng.uniform(0, 2, size=2)),
                           P_max=float(rng.uniform(5, 100)))
    h = rng.exponential(size=(3, 1)) + 0.05
    vals = {}
    for k in range(3):
        # a lone user takes the whole budget
        r = np.zeros(2)
        r[inst.sp_of[k]] = np.log2(1 + inst.P_max * h[k, 0])
        vals[(k, -1)] = r.sum() if np.all(r >= inst.R_s) else -np.inf
    for a in range(3):
        for b in range(3):
            if a != b and h[b, 0] <= h[a, 0]:
                vals[(a, b)] = pair_grid(inst, h[a, 0], h[b, 0],
                                         inst.sp_of[a], inst.sp_of[b])
    best = max(vals, key=vals.get)
    o = exhaustive_oracle(inst, h)
    first, second = o.decision.pairs()
    assert (first[0], second[0]) == best
    assert o.utility == pytest.approx(vals[best], abs=1e-6)


@pytest.mark.parametrize('rs', [2.0, 5.0])
def test_oracle_dominates_and_gap_is_small(rs):
    close = counted = 0
    for seed in range(25):
        inst, H = realization(seed, K=4, N=2, R_s=rs)
        a, o = solve(inst, H), exhaustive_oracle(inst, H)
        assert_consistent(inst, H, o)
        if a.feasible:
            assert o.feasible
        if a.feasible and o.feasible:
            counted += 1
            assert o.utility >= a.utility - 1e-6
            close += (o.utility - a.utility) <= 0.07 * abs(o.utility)
    assert counted >= 20 and close >= 0.9 * counted


@pytest.mark.parametrize('seed', range(3))
def test_oracle_pruning_equals_full_enumeration(seed):
    inst, H = realization(seed, K=3, N=2, R_s=2.0)
    h = H.h
    per_n = [[(k, -1) for k in range(3)]
             + [(a, b) for a in range(3) for b in range(3)
                if a != b and h[b, n] <= h[a, n]] for n in range(2)]
    best = -np.inf
    for combo in itertools.product(*per_n):
        first, second = zip(*combo)
        dec = AccessDecision.from_pairs(3, first, second)
        P = dc_power_allocation(inst, H, dec).powers
        if check_feasibility(inst, H, dec, P, 1e-6).feasible:
            best = max(best, total_utility(inst, H, dec, P))
    o, evaluated = exhaustive_oracle(inst, H, return_count=True)
    assert evaluated <= oracle_option_count(3, 2)
    assert o.utility == pytest.approx(best, abs=1e-12)


# ----------------------------------------------------------------------------
# Monte Carlo
# ----------------------------------------------------------------------------

def test_trial_seed_is_schedule_free():
    assert trial_seed(7, 3) == (7, 3)
    inst = NetworkInstance.default(K=4, N=2, R_s=1.0)
    ch = ChannelModelParams()
    cfg = SolverConfig()
    a = run_trial(inst, ch, 7, 3, cfg)
    run_trial(inst, ch, 7, 2, cfg)
    b = run_trial(inst, ch, 7, 3, cfg)
    assert a.utility == b.utility


def test_outage_extremes():
    ch = ChannelModelParams()
    free = outage_probability(NetworkInstance.default(K=4, N=2, R_s=0.0),
                              ch, 5)
    assert all(p == 0.0 for p, _ in free.values())
    hard = outage_probability(
        NetworkInstance.default(K=4, N=2, R_s=50.0, P_max=0.01), ch, 5)
    assert all(p == 1.0 and se == 0.0 for p, se in hard.values())
    assert set(hard) == set(Mode)
