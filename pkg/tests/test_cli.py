import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from dynaccess.cli import (AGG_HEADER, RAW_HEADER, ConfigError,
                           ScenarioConfig, _relative_gap, db_to_watts, main,
                           parse_config, run_oracle_comparison, run_single,
                           run_sweep, write_csv)

SMALL = """
# tiny scenario
K = 4
N = 2
rs = 2
trials = 3
values = 18, 20
"""


def read_csv(path):
    with open(path, newline='') as fh:
        return list(csv.reader(fh))


# ----------------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------------

def test_empty_config_is_the_reference_scenario():
    cfg = parse_config('')
    inst = cfg.instance(None)
    assert (inst.K, inst.N, inst.S) == (20, 10, 2)
    assert inst.P_max == pytest.approx(100.0)
    assert inst.R_s == (48.0, 48.0)
    assert (inst.P_d, inst.noise_var, inst.cost_A, inst.cost_V) == \
        (0.01, 1.0, 2.0, 2.0)
    assert cfg.values == (16.0, 18.0, 20.0) and cfg.column == 'pmax_db'


def test_parse_lists_comments_and_overrides():
    cfg = parse_config(SMALL + 'modes = hybrid, oma  # two modes\n',
                       trials=5, values='16,17')
    assert cfg.K == 4 and cfg.trials == 5
    assert cfg.values == (16.0, 17.0) and cfg.modes == ('hybrid', 'oma')
    assert parse_config('edge_fraction = none').edge_fraction is None
    assert parse_config('edge_fraction = 0.8').edge_fraction == 0.8


@pytest.mark.parametrize('text', [
    'K 4', 'colour = red', 'K = four', 'values = 20, 16', 'values =',
    'trials = 0', 'workers = 0', 'modes = tdma', 'sweep = weather',
    'form = cube', 'K = 0', 'rs = -1', 'sweep = users\nvalues = 4.5',
    'edge_fraction = 2',
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_db_conversion():
    assert db_to_watts(20) == pytest.approx(100.0)
    assert db_to_watts(0) == 1.0


@pytest.mark.parametrize('axis, value, check', [
    ('pmax', 16.0, lambda i, c: i.P_max == pytest.approx(10 ** 1.6)),
    ('rs', 50.0, lambda i, c: i.R_s == (50.0, 50.0)),
    ('cost', 8.0, lambda i, c: (i.cost_A, i.cost_V) == (8.0, 8.0)),
    ('users', 12.0, lambda i, c: i.K == 12),
    ('subcarriers', 6.0, lambda i, c: i.N == 6),
    ('edge', 0.5, lambda i, c: c.edge_fraction == 0.5),
])
def test_sweep_axes(axis, value, check):
    cfg = parse_config(f'sweep = {axis}\nvalues = {value}')
    assert check(cfg.instance(value), cfg.channel(value))


def test_raw_output_name():
    assert ScenarioConfig(output='out/a.csv').raw_output == 'out/a_raw.csv'
    assert ScenarioConfig(output='b').raw_output == 'b_raw.csv'


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------

def test_sweep_aggregates_match_raw_rows():
    cfg = parse_config(SMALL + 'rs = 6\n')
    agg, raw = run_sweep(cfg)
    assert [(r[0], r[1]) for r in agg] == [
        (v, m) for v in (18.0, 20.0) for m in ('hybrid', 'oma', 'noma')]
    assert [(r[0], r[1], r[2]) for r in raw] == [
        (v, m, t) for v in (18.0, 20.0) for m in ('hybrid', 'oma', 'noma')
        for t in range(3)]
    for a in agg:
        rows = [r for r in raw if r[0] == a[0] and r[1] == a[1]]
        util = np.array([r[4] for r in rows])
        fails = np.array([not r[3] for r in rows], float)
        assert a[2] == 3
        assert a[3] == pytest.approx(util.mean(), abs=1e-12)
        assert a[4] == pytest.approx(util.std(ddof=1) / math.sqrt(3),
                                     abs=1e-12)
        assert a[5] == pytest.approx(fails.mean(), abs=1e-12)
        assert a[9] == pytest.approx(np.mean([r[7] for r in rows]), abs=1e-12)
        for r in rows:
            if not r[3]:
                assert r[4] == 0.0


def test_sweep_independent_of_worker_count():
    cfg = parse_config(SMALL + 'modes = hybrid, oma\n')
    assert run_sweep(cfg, workers=1) == run_sweep(cfg, workers=2)


def test_csv_format(tmp_path):
    path = tmp_path / 'x.csv'
    write_csv(path, ('a', 'b', 'c', 'd'), [(1 / 3, True, 7, 'oma')])
    assert path.read_text() == 'a,b,c,d\n0.3333333333,1,7,oma\n'


# ----------------------------------------------------------------------------
# Oracle comparison and single runs
# ----------------------------------------------------------------------------

def test_relative_gap_rules():
    class R:
        def __init__(self, feasible, utility):
            self.feasible, self.utility = feasible, utility
    assert _relative_gap(R(True, 9.0), R(True, 10.0)) == pytest.approx(0.1)
    assert _relative_gap(R(False, 0.0), R(True, 10.0)) == 1.0
    assert math.isnan(_relative_gap(R(False, 0.0), R(False, 0.0)))


def test_oracle_gap_vanishes_on_two_users():
    cfg = parse_config('K = 2\nN = 1\nrs = 0\ntrials = 8\nvalues = 20')
    agg, raw = run_oracle_comparison(cfg)
    assert agg[0][2] == 8
    assert agg[0][7] <= 1e-6
    assert all(r[2] and r[3] for r in raw)


def test_single_traces_every_mode():
    cfg = parse_config(SMALL)
    reports, rows = run_single(cfg)
    assert list(reports) == ['hybrid', 'oma', 'noma']
    for m, rep in reports.items():
        assert [r[1] for r in rows if r[0] == m] == \
            list(range(1, rep.outer_iters + 1))


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def write_config(tmp_path, text=SMALL):
    path = tmp_path / 'scenario.cfg'
    path.write_text(text)
    return str(path)


def test_main_sweep_writes_both_files(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = str(tmp_path / 'agg.csv')
    assert main(['sweep', cfg, '-o', out, '--mode', 'hybrid,oma']) == 0
    agg = read_csv(out)
    raw = read_csv(str(tmp_path / 'agg_raw.csv'))
    assert tuple(agg[0]) == ('pmax_db',) + AGG_HEADER
    assert tuple(raw[0]) == ('pmax_db',) + RAW_HEADER
    assert len(agg) == 1 + 2 * 2 and len(raw) == 1 + 2 * 2 * 3
    assert 'utility' in capsys.readouterr().out


def test_main_is_bit_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    outs = []
    for i in range(2):
        out = tmp_path / f'run{i}.csv'
        assert main(['sweep', cfg, '-o', str(out), '--trials', '1',
                     '--sweep', 'pmax:20']) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_main_overrides(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / 'rs.csv'
    assert main(['sweep', cfg, '-o', str(out), '--sweep', 'rs:1,3',
                 '--pmax', '18', '--trials', '2', '--seed', '4',
                 '--mode', 'oma']) == 0
    rows = read_csv(str(out))
    assert rows[0][0] == 'rs' and [r[0] for r in rows[1:]] == ['1', '3']


def test_main_exit_codes(tmp_path, capsys):
    assert main(['sweep', str(tmp_path / 'missing.cfg')]) == 1
    bad = write_config(tmp_path, 'trials = -3\n')
    assert main(['sweep', bad]) == 1
    assert 'config error' in capsys.readouterr().err
    cfg = write_config(tmp_path)
    assert main(['sweep', cfg, '-o',
                 str(tmp_path / 'no' / 'such' / 'dir.csv')]) == 2
    assert 'error' in capsys.readouterr().err


def test_main_oracle_and_single(tmp_path, capsys):
    cfg = write_config(tmp_path, 'K = 3\nN = 2\nrs = 1\ntrials = 2\n'
                                 'values = 20\n')
    out = tmp_path / 'gap.csv'
    assert main(['oracle', cfg, '-o', str(out)]) == 0
    assert read_csv(str(out))[0][:3] == ['pmax_db', 'trials', 'counted']
    trace = tmp_path / 'trace.csv'
    assert main(['single', cfg, '-o', str(trace)]) == 0
    assert read_csv(str(trace))[0][:2] == ['mode', 't']
    assert 'hybrid: utility' in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, 'K = 2\nN = 1\nrs = 0\nvalues = 20\n'
                                 'modes = oma\n')
    proc = subprocess.run([sys.executable, '-m', 'dynaccess', 'single', cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith('oma: utility')
