"""Experiment harness: scenario files, Monte-Carlo sweeps and CSV output.

A scenario is a flat ``key = value`` text file (``#`` starts a comment,
lists are comma separated).  Every key has a default, so an empty file is
the reference scenario: 20 users, 10 subcarriers, 2 SPs at ``R_s = 48``,
``P_max = 20 dB`` (100 W), ``A = V = 2``.

Subcommands::

    dynaccess sweep  <config>   aggregated + raw per-trial CSV
    dynaccess oracle <config>   Hybrid against exhaustive search
    dynaccess single <config>   one realization with iteration traces

Exit status is 0 on success, 1 on a configuration error and 2 on a
runtime failure (including an unwritable output path).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import Mode
from .netmodel import (ChannelModelParams, ContractError, NetworkInstance,
                       generate_instance)
from .solver import (SolutionReport, SolverConfig, exhaustive_oracle,
                     run_trial, solve, trial_seed)

__all__ = [
    'ConfigError',
    'ScenarioConfig',
    'AXES',
    'parse_config',
    'load_config',
    'db_to_watts',
    'run_sweep',
    'run_oracle_comparison',
    'write_csv',
    'main',
]

#: sweep axis -> CSV column name
AXES = {
    'pmax': 'pmax_db',
    'rs': 'rs',
    'cost': 'cost_av',
    'users': 'users',
    'edge': 'edge_fraction',
    'subcarriers': 'subcarriers',
}


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


def db_to_watts(db: float) -> float:
    """Power in watts of a level in dB relative to 1 W."""
    return 10.0 ** (db / 10.0)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return '%.10g' % float(x)


@dataclass(frozen=True)
class ScenarioConfig:
    """Topology, channel, cost and sweep settings of one experiment.

    ``sweep`` names the swept quantity (see :data:`AXES`) and ``values``
    its points, in dB for ``pmax``.  The fixed value of the swept quantity
    is ignored.  ``output`` is the aggregated CSV; the raw per-trial rows go
    next to it with a ``_raw`` suffix.
    """

    K: int = 20
    N: int = 10
    S: int = 2
    rs: float = 48.0
    pmax_db: float = 20.0
    pd: float = 0.01
    noise: float = 1.0
    cost_a: float = 2.0
    cost_v: float = 2.0
    log_base: float = 2.0
    pathloss: float = 3.0
    area: float = 1.0
    edge_fraction: Optional[float] = None
    fading: str = 'rayleigh'
    sweep: str = 'pmax'
    values: Tuple[float, ...] = (16.0, 18.0, 20.0)
    trials: int = 100
    modes: Tuple[str, ...] = ('hybrid', 'oma', 'noma')
    seed: int = 0
    trial: int = 0
    workers: int = 1
    output: str = 'sweep.csv'
    max_outer_iters: int = 10
    form: str = 'option'

    def __post_init__(self):
        if self.sweep not in AXES:
            raise ConfigError(f'unknown sweep axis {self.sweep!r}; '
                              f'expected one of {sorted(AXES)}')
        if len(self.values) == 0:
            raise ConfigError('sweep values must be non-empty')
        if list(self.values) != sorted(self.values):
            raise ConfigError('sweep values must be sorted')
        if self.trials < 1:
            raise ConfigError('trials must be >= 1')
        if self.workers < 1:
            raise ConfigError('workers must be >= 1')
        if not self.modes:
            raise ConfigError('at least one mode is required')
        for m in self.modes:
            try:
                Mode(m)
            except ValueError:
                raise ConfigError(f'unknown mode {m!r}') from None
        if self.form not in ('option', 'linked'):
            raise ConfigError(f'unknown Step-1 form {self.form!r}')
        try:
            for v in self.values:
                self.instance(v)
                self.channel(v)
            self.instance(None)
        except ContractError as e:
            raise ConfigError(str(e)) from None

    @property
    def column(self) -> str:
        return AXES[self.sweep]

    @property
    def raw_output(self) -> str:
        root, ext = os.path.splitext(self.output)
        return f'{root}_raw{ext or ".csv"}'

    def instance(self, value: Optional[float]) -> NetworkInstance:
        """Network at one sweep point (``None`` keeps the fixed values)."""
        K, N = self.K, self.N
        rs, pmax_db, A, V = self.rs, self.pmax_db, self.cost_a, self.cost_v
        if value is not None:
            if self.sweep == 'pmax':
                pmax_db = value
            elif self.sweep == 'rs':
                rs = value
            elif self.sweep == 'cost':
                A = V = value
            elif self.sweep == 'users':
                K = _as_int(value, 'users')
            elif self.sweep == 'subcarriers':
                N = _as_int(value, 'subcarriers')
        return NetworkInstance.default(
            K=K, N=N, S=self.S, R_s=rs, P_max=db_to_watts(pmax_db),
            P_d=self.pd, noise_var=self.noise, cost_A=A, cost_V=V,
            log_base=self.log_base)

    def channel(self, value: Optional[float]) -> ChannelModelParams:
        ef = self.edge_fraction
        if value is not None and self.sweep == 'edge':
            ef = value
        return ChannelModelParams(pathloss_exp=self.pathloss,
                                  area_side=self.area, edge_fraction=ef,
                                  fading=self.fading)

    def solver(self, mode) -> SolverConfig:
        return SolverConfig(mode=Mode(mode),
                            max_outer_iters=self.max_outer_iters,
                            form=self.form)


def _as_int(v, name) -> int:
    if float(v) != int(v):
        raise ConfigError(f'{name} sweep values must be integers')
    return int(v)


_LISTS = {'values': float, 'modes': str}


def _convert(name: str, text: str):
    f = {f.name: f for f in fields(ScenarioConfig)}[name]
    text = text.strip()
    try:
        if name in _LISTS:
            items = [t.strip() for t in text.split(',') if t.strip()]
            return tuple(_LISTS[name](t) for t in items)
        if name == 'edge_fraction':
            return None if text.lower() in ('', 'none') else float(text)
        default = f.default
        if isinstance(default, bool):
            return text.lower() in ('1', 'true', 'yes')
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f'bad value for {name}: {text!r}') from None


def parse_config(text: str, **overrides) -> ScenarioConfig:
    """Parse ``key = value`` lines; keyword overrides win over the text."""
    known = {f.name for f in fields(ScenarioConfig)}
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'line {lineno}: expected key = value')
        key, val = (s.strip() for s in line.split('=', 1))
        if key not in known:
            raise ConfigError(f'line {lineno}: unknown key {key!r}')
        kw[key] = _convert(key, val)
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in known:
            raise ConfigError(f'unknown key {key!r}')
        kw[key] = _convert(key, val) if isinstance(val, str) else val
    if 'values' in kw:
        kw['values'] = tuple(float(v) for v in kw['values'])
    if 'modes' in kw:
        kw['modes'] = tuple(str(m) for m in kw['modes'])
    return ScenarioConfig(**kw)


def load_config(path, **overrides) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e}') from None
    return parse_config(text, **overrides)


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------

RAW_HEADER = ('mode', 'trial', 'feasible', 'utility', 'raw_utility',
              'total_rate', 'noma_fraction', 'outer_iters')
AGG_HEADER = ('mode', 'trials', 'mean_utility', 'se', 'outage', 'outage_se',
              'mean_rate', 'rate_se', 'noma_fraction')


def _sweep_task(args):
    cfg, value, mode, trial = args
    rep = run_trial(cfg.instance(value), cfg.channel(value), cfg.seed, trial,
                    cfg.solver(mode))
    return (bool(rep.feasible), float(rep.utility), float(rep.raw_utility),
            float(rep.total_rate), float(rep.noma_fraction),
            int(rep.outer_iters))


def _map(fn, tasks, workers: int):
    """Ordered map; results come back in task order for any pool size."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _mean_se(x) -> Tuple[float, float]:
    x = np.asarray(x, float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def run_sweep(cfg: ScenarioConfig, workers: Optional[int] = None
              ) -> Tuple[List[tuple], List[tuple]]:
    """Solve every (sweep point, mode, trial) and aggregate.

    Returns ``(aggregated_rows, raw_rows)``; each row starts with the sweep
    value.  Rows are sorted by sweep point, then mode in configuration
    order, then trial, whatever the worker count.  Infeasible trials count
    as zero utility and as one outage.
    """
    workers = cfg.workers if workers is None else workers
    tasks = [(cfg, v, m, t) for v in cfg.values for m in cfg.modes
             for t in range(cfg.trials)]
    results = _map(_sweep_task, tasks, workers)
    raw, agg = [], []
    for i, (_, v, m, t) in enumerate(tasks):
        raw.append((v, m, t) + results[i])
    T = cfg.trials
    for j in range(0, len(raw), T):
        block = raw[j:j + T]
        v, m = block[0][0], block[0][1]
        feas = np.array([r[3] for r in block], float)
        util = [r[4] for r in block]
        rate = [r[6] for r in block]
        mu, se = _mean_se(util)
        out, out_se = _mean_se(1.0 - feas)
        mr, rse = _mean_se(rate)
        frac = float(np.mean([r[7] for r in block]))
        agg.append((v, m, T, mu, se, out, out_se, mr, rse, frac))
    return agg, raw


def write_csv(path, header: Sequence[str], rows) -> None:
    """Comma-separated, header row, 10 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    with open(path, 'w', newline='') as fh:
        fh.write(buf.getvalue())


def _check_writable(path) -> None:
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK):
        raise OSError(f'output directory {d} is not writable')
    if os.path.exists(path) and not os.access(path, os.W_OK):
        raise OSError(f'output file {path} is not writable')


# ----------------------------------------------------------------------------
# Oracle comparison
# ----------------------------------------------------------------------------

ORACLE_RAW_HEADER = ('trial', 'hybrid_feasible', 'oracle_feasible',
                     'hybrid_utility', 'oracle_utility', 'gap')
ORACLE_AGG_HEADER = ('trials', 'counted', 'mean_hybrid', 'mean_oracle',
                     'mean_gap', 'gap_se', 'max_gap')


def _relative_gap(hyb: SolutionReport, orc: SolutionReport) -> float:
    """``(U_oracle - U_hybrid) / |U_oracle|``; NaN without a feasible
    oracle, 1 when only the oracle is feasible."""
    if not orc.feasible or orc.utility == 0:
        return float('nan')
    if not hyb.feasible:
        return 1.0
    return (orc.utility - hyb.utility) / abs(orc.utility)


def _oracle_task(args):
    cfg, value, trial = args
    inst = cfg.instance(value)
    params = replace(cfg.channel(value), seed=trial_seed(cfg.seed, trial))
    H = generate_instance(params, inst)
    scfg = cfg.solver(Mode.HYBRID)
    hyb = solve(inst, H, scfg)
    orc = exhaustive_oracle(inst, H, scfg)
    return (bool(hyb.feasible), bool(orc.feasible), float(hyb.utility),
            float(orc.utility), _relative_gap(hyb, orc))


def run_oracle_comparison(cfg: ScenarioConfig, workers: Optional[int] = None
                          ) -> Tuple[List[tuple], List[tuple]]:
    """Hybrid against exhaustive search at every sweep point.

    Returns ``(aggregated_rows, raw_rows)``.  The mean gap is taken over
    trials with a feasible oracle.
    """
    workers = cfg.workers if workers is None else workers
    tasks = [(cfg, v, t) for v in cfg.values for t in range(cfg.trials)]
    results = _map(_oracle_task, tasks, workers)
    raw = [(v, t) + r for (_, v, t), r in zip(tasks, results)]
    agg = []
    T = cfg.trials
    for j in range(0, len(raw), T):
        block = raw[j:j + T]
        gaps = np.array([r[6] for r in block])
        ok = ~np.isnan(gaps)
        g = gaps[ok]
        mg, gse = _mean_se(g) if g.size else (float('nan'), float('nan'))
        agg.append((block[0][0], T, int(ok.sum()),
                    float(np.mean([r[4] for r in block])),
                    float(np.mean([r[5] for r in block])), mg, gse,
                    float(g.max()) if g.size else float('nan')))
    return agg, raw


# ----------------------------------------------------------------------------
# Single realization
# ----------------------------------------------------------------------------

TRACE_HEADER = ('mode', 't', 'step1_objective', 'prev_utility', 'utility',
                'feasible', 'd_beta', 'd_alpha', 'd_p', 'dc_iters', 'nodes')


def run_single(cfg: ScenarioConfig) -> Tuple[Dict[str, SolutionReport],
                                             List[tuple]]:
    """Solve trial ``cfg.trial`` at the first sweep point in every mode."""
    v = cfg.values[0]
    inst = cfg.instance(v)
    params = replace(cfg.channel(v), seed=trial_seed(cfg.seed, cfg.trial))
    H = generate_instance(params, inst)
    reports, rows = {}, []
    for m in cfg.modes:
        rep = solve(inst, H, cfg.solver(m))
        reports[m] = rep
        for r in rep.trace:
            rows.append((m, r.t, r.step1_objective, r.prev_utility, r.utility,
                         r.feasible, r.d_beta, r.d_alpha, r.d_p, r.dc_iters,
                         r.nodes))
    return reports, rows


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog='dynaccess',
        description='Dynamic OMA/NOMA selection experiments.')
    sub = p.add_subparsers(dest='command', required=True)
    for name, text in (('sweep', 'Monte-Carlo parameter sweep'),
                       ('oracle', 'Hybrid solve against exhaustive search'),
                       ('single', 'one realization with iteration traces')):
        s = sub.add_parser(name, help=text)
        s.add_argument('config', help='key = value scenario file')
        s.add_argument('--pmax', type=float, help='fixed P_max in dB re 1 W')
        s.add_argument('--rs', type=float, help='SP minimum rate')
        s.add_argument('--trials', type=int)
        s.add_argument('--seed', type=int)
        s.add_argument('--mode', help='comma-separated modes')
        s.add_argument('--sweep', help='axis:v1,v2,... e.g. pmax:16,18,20')
        s.add_argument('--workers', type=int)
        s.add_argument('--output', '-o')
    return p


def _overrides(ns) -> dict:
    kw = {'pmax_db': ns.pmax, 'rs': ns.rs, 'trials': ns.trials,
          'seed': ns.seed, 'workers': ns.workers, 'output': ns.output,
          'modes': ns.mode}
    if ns.sweep is not None:
        axis, _, vals = ns.sweep.partition(':')
        kw['sweep'] = axis.strip()
        if vals:
            kw['values'] = vals
    return kw


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = _parser().parse_args(argv)
    try:
        cfg = load_config(ns.config, **_overrides(ns))
    except ConfigError as e:
        print(f'config error: {e}', file=sys.stderr)
        return 1
    try:
        if ns.command == 'sweep':
            _check_writable(cfg.output)
            agg, raw = run_sweep(cfg)
            write_csv(cfg.output, (cfg.column,) + AGG_HEADER, agg)
            write_csv(cfg.raw_output, (cfg.column,) + RAW_HEADER, raw)
            for r in agg:
                print(f'{cfg.column}={_fmt(r[0])} {r[1]:>6}: utility '
                      f'{r[3]:.4g} +- {r[4]:.2g}, outage {r[5]:.3g}')
        elif ns.command == 'oracle':
            _check_writable(cfg.output)
            agg, raw = run_oracle_comparison(cfg)
            write_csv(cfg.output, (cfg.column,) + ORACLE_AGG_HEADER, agg)
            write_csv(cfg.raw_output, (cfg.column,) + ORACLE_RAW_HEADER, raw)
            for r in agg:
                print(f'{cfg.column}={_fmt(r[0])}: mean gap {r[5]:.4g} '
                      f'over {r[2]} trials, max {r[7]:.4g}')
        else:
            reports, rows = run_single(cfg)
            for m, rep in reports.items():
                print(f'{m}: utility {rep.utility:.6g}, feasible '
                      f'{rep.feasible}, {rep.outer_iters} iterations '
                      f'({rep.stop_reason}), modes {" ".join(rep.modes)}')
                for r in rep.trace:
                    print(f'  t={r.t} step1={r.step1_objective:.6g} '
                          f'utility={r.utility:.6g} dc_iters={r.dc_iters} '
                          f'nodes={r.nodes}')
            if ns.output is not None:
                _check_writable(cfg.output)
                write_csv(cfg.output, TRACE_HEADER, rows)
    except (OSError, ContractError, RuntimeError, ValueError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
