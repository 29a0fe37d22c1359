"""Dynamic OMA/NOMA access selection for a shared multi-SP downlink.

Per subcarrier the base station serves one user (OMA), a strong/weak user
pair with SIC (NOMA), or nobody.  :func:`solve` alternates an exact MILP
for the assignment with DC power allocation; :mod:`dynaccess.cli` runs
Monte-Carlo sweeps over it.
"""

from .assignment import Mode, Step1Problem, Step1Result, build_step1, solve_step1
from .milp import (LinearProgram, MilpProblem, MilpSolution, Status,
                   solve_lp, solve_milp)
from .netmodel import (AccessDecision, ChannelModelParams, ChannelRealization,
                       ConstraintReport, ContractError, NetworkInstance,
                       PowerMatrix, check_feasibility, generate_instance,
                       load_instance, noma_cost, save_instance, sp_rate,
                       sp_rates, total_utility, uniform_powers, user_rates)
from .power import (DualVariables, PowerConfig, PowerResult,
                    dc_power_allocation, water_filling)
from .solver import (SolutionReport, SolverConfig, exhaustive_oracle,
                     outage_probability, run_trial, solve)

__version__ = '0.1.0'

__all__ = [
    'Mode', 'Step1Problem', 'Step1Result', 'build_step1', 'solve_step1',
    'LinearProgram', 'MilpProblem', 'MilpSolution', 'Status', 'solve_lp',
    'solve_milp',
    'AccessDecision', 'ChannelModelParams', 'ChannelRealization',
    'ConstraintReport', 'ContractError', 'NetworkInstance', 'PowerMatrix',
    'check_feasibility', 'generate_instance', 'load_instance', 'noma_cost',
    'save_instance', 'sp_rate', 'sp_rates', 'total_utility', 'uniform_powers',
    'user_rates',
    'DualVariables', 'PowerConfig', 'PowerResult', 'dc_power_allocation',
    'water_filling',
    'SolutionReport', 'SolverConfig', 'exhaustive_oracle',
    'outage_probability', 'run_trial', 'solve',
]
